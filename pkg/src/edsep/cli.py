"""Command-line entry point.

Subcommands: validate-sde, gen-data, train, separate, evaluate,
dump-trajectory, spectrogram, oracle-demo. Exit codes: 0 success,
1 validation failure, 2 usage/config error, 3 I/O error. The EDSEP_LOG
environment variable selects log verbosity (DEBUG/INFO/WARNING/ERROR).

All randomness flows from seeds recorded in resolved_config.json: dataset
instance i uses stream [data.seed, i], sampler runs on input i use
[sample.seed, i], and training steps use [train.seed, step]. `--seed N`
propagates one root value into all three sections, and `--jobs` only changes
scheduling, never results.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import data as data_mod
from . import denoise as dn
from . import dsp, metrics, sample as sample_mod, sde as sde_mod, train as train_mod
from .config import ConfigError, load_config, write_resolved

log = logging.getLogger("edsep")


def _setup_logging():
    level_name = os.environ.get("EDSEP_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        try:
            level = int(level_name)
        except ValueError:
            level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="edsep",
        description="Diffusion-based single-channel source separation toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config value (repeatable)",
        )
        sp.add_argument("--seed", type=int, default=None, help="root seed for all sections")
        sp.add_argument("--jobs", type=int, default=1, help="parallel workers")

    sp = sub.add_parser("validate-sde", help="Monte-Carlo check of the closed-form marginals")
    common(sp)
    sp.add_argument("--paths", type=int, default=20000)
    sp.add_argument("--em-steps", type=int, default=2000)

    sp = sub.add_parser("gen-data", help="write a synthetic dataset with manifest")
    common(sp)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("train", help="train the neural denoiser")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--data", default=None, help="manifest path (default: in-memory dataset)")

    sp = sub.add_parser("separate", help="separate mixture WAV(s) into source estimates")
    common(sp)
    sp.add_argument("--input", nargs="+", required=True, metavar="WAV")
    sp.add_argument("--out", required=True)
    sp.add_argument("--sampler", choices=["algorithm1", "ode", "reverse-em"], default="algorithm1")
    sp.add_argument("--backend", choices=["neural", "oracle"], default="neural")
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--steps", type=int, default=None, help="sampler steps (default from config)")
    sp.add_argument("--no-mean-correct", action="store_true")
    sp.add_argument("--reuse-denoise", action="store_true")

    sp = sub.add_parser("evaluate", help="score estimates against a manifest")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--estimates", required=True)
    sp.add_argument("--out", default=None, help="report JSON path (default: estimates dir)")

    sp = sub.add_parser("dump-trajectory", help="CSV dump of a forward or sampler trajectory")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=["forward", "sampler"], default="forward")
    sp.add_argument("--em-steps", type=int, default=200)
    sp.add_argument("--index", type=int, default=0, help="dataset instance index")
    sp.add_argument("--steps", type=int, default=None)

    sp = sub.add_parser("spectrogram", help="WAV to log-magnitude PGM + CSV")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out-prefix", required=True)

    sp = sub.add_parser("oracle-demo", help="end-to-end Gaussian pipeline with the oracle")
    common(sp)
    sp.add_argument("--out", required=True)

    return parser


def _resolve_config(args):
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg = replace(
            cfg,
            seed=args.seed,
            train=replace(cfg.train, seed=args.seed),
            sample=replace(cfg.sample, seed=args.seed),
            data=replace(cfg.data, seed=args.seed),
        )
    return cfg


# ---------------------------------------------------------------- validate-sde


def _cmd_validate_sde(cfg, args):
    p = cfg.sde
    spec = replace(cfg.data, kind="gaussian", K=2, M=16, count=1)
    s, y = data_mod.gen_gaussian_pair(spec, 0)
    ensemble = sde_mod.forward_em_endpoint_ensemble(
        s, y, p, n_steps=args.em_steps, n_paths=args.paths, root_seed=spec.seed
    )
    mu = sde_mod.marginal_mean(s, y, p, p.T)
    ns = sde_mod.noise_scales(p, p.T)

    mean = ensemble.mean(axis=0)
    se = ensemble.std(axis=0, ddof=1) / math.sqrt(args.paths)
    worst_z = float(np.max(np.abs(mean - mu) / se))

    pbar = ensemble - ensemble.mean(axis=1, keepdims=True)
    pmean = ensemble - pbar
    mu_p = mu.mean(axis=0, keepdims=True)
    k, m = s.shape
    var_p = float(np.mean(np.sum((pmean - mu_p) ** 2, axis=(1, 2))) / m)
    var_pbar = float(
        np.mean(np.sum((pbar - (mu - mu_p)) ** 2, axis=(1, 2))) / ((k - 1) * m)
    )

    checks = [
        ("mean_within_4se", worst_z, 4.0, worst_z <= 4.0),
        ("var_P_vs_lambda1", var_p / ns.lambda1, 0.05, abs(var_p / ns.lambda1 - 1.0) <= 0.05),
        (
            "var_Pbar_vs_lambda2",
            var_pbar / ns.lambda2,
            0.05,
            abs(var_pbar / ns.lambda2 - 1.0) <= 0.05,
        ),
    ]
    print(f"{'check':24s} {'measured':>14s} {'bound':>10s} {'status':>8s}")
    ok = True
    for name, measured, bound, passed in checks:
        ok &= passed
        print(f"{name:24s} {measured:14.6f} {bound:10.4f} {'PASS' if passed else 'FAIL':>8s}")
    return 0 if ok else 1


# -------------------------------------------------------------------- gen-data


def _cmd_gen_data(cfg, args):
    path = data_mod.make_manifest(cfg.data, args.out)
    write_resolved(cfg, args.out)
    print(path)
    return 0


# ----------------------------------------------------------------------- train


def _load_pairs_from_manifest(path):
    _, instances = data_mod.load_manifest(path)
    pairs = []
    for inst in instances:
        sources = [dsp.read_wav(q)[0] for q in inst["s_paths"]]
        s = np.stack(sources)
        pairs.append((s, s.sum(axis=0)))
    return pairs


def _cmd_train(cfg, args):
    os.makedirs(args.out, exist_ok=True)
    write_resolved(cfg, args.out)
    if args.data:
        pairs = _load_pairs_from_manifest(args.data)
    else:
        pairs = [data_mod.gen_pair(cfg.data, i) for i in range(cfg.data.count)]
    k = pairs[0][0].shape[0]
    net = dn.init_neural_denoiser(
        cfg.stft,
        num_sources=k,
        hidden=cfg.model.hidden,
        seed=cfg.model.init_seed,
        alpha=cfg.model.alpha,
        beta=cfg.model.beta,
        noise_cond_mode=cfg.model.noise_cond_mode,
        dtype=np.float64 if cfg.model.dtype == "float64" else np.float32,
    )
    state = train_mod.TrainState(
        net=net, sde_params=cfg.sde, cfg=cfg.train, root_seed=cfg.train.seed
    )
    ckpt = os.path.join(args.out, "checkpoint.edsp")
    log_path = os.path.join(args.out, "train_log.jsonl")
    log.info("training for %d steps on %d pairs", cfg.train.total_steps, len(pairs))
    state = train_mod.train_loop(state, pairs, log_path=log_path, checkpoint_path=ckpt)
    train_mod.save_checkpoint(state, ckpt)
    print(ckpt)
    return 0


# -------------------------------------------------------------------- separate


def _estimate_names(input_path, num_sources):
    stem = os.path.splitext(os.path.basename(input_path))[0]
    return [f"{stem}_est{k}.wav" for k in range(num_sources)]


def _separate_one(task):
    """Worker for one mixture; top-level so process pools can pickle it."""
    (index, input_path, out_dir, model, p, sampler_cfg, sampler_name, num_sources) = task
    y, rate = dsp.read_wav(input_path)
    rng = np.random.default_rng([sampler_cfg.seed, index])
    if sampler_name == "algorithm1":
        est = sample_mod.stochastic_sample(model, y, p, sampler_cfg, rng, num_sources=num_sources)
    elif sampler_name == "ode":
        est = sample_mod.ode_sample(model, y, p, sampler_cfg, rng, num_sources=num_sources)
    else:
        est = sample_mod.reverse_em_sample(
            model,
            y,
            p,
            sampler_cfg.n_steps,
            rng,
            num_sources=num_sources,
            mean_correct=sampler_cfg.mean_correct,
        )
    names = _estimate_names(input_path, est.shape[0])
    for k, name in enumerate(names):
        dsp.write_wav(os.path.join(out_dir, name), est[k], rate)
    return names


def _run_tasks(tasks, worker, jobs):
    if jobs <= 1:
        return [worker(t) for t in tasks]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks))


def _cmd_separate(cfg, args):
    p = cfg.sde
    if args.backend == "oracle":
        model = dn.GaussianOraclePrior(cfg.data.sigma_s)
        num_sources = cfg.data.K
    else:
        if not args.checkpoint:
            raise ConfigError("--backend neural requires --checkpoint")
        state = train_mod.load_checkpoint(args.checkpoint)
        model = state.net
        p = state.sde_params  # sample with the schedule the net was trained on
        num_sources = model.num_sources
    sampler_cfg = cfg.sample
    if args.steps is not None:
        sampler_cfg = replace(sampler_cfg, n_steps=args.steps)
    if args.no_mean_correct:
        sampler_cfg = replace(sampler_cfg, mean_correct=False)
    os.makedirs(args.out, exist_ok=True)
    write_resolved(cfg, args.out)
    if args.reuse_denoise and args.sampler == "algorithm1":
        worker = _separate_one_reuse
    else:
        worker = _separate_one
    tasks = [
        (i, path, args.out, model, p, sampler_cfg, args.sampler, num_sources)
        for i, path in enumerate(args.input)
    ]
    for names in _run_tasks(tasks, worker, args.jobs):
        for name in names:
            print(os.path.join(args.out, name))
    return 0


def _separate_one_reuse(task):
    (index, input_path, out_dir, model, p, sampler_cfg, _name, num_sources) = task
    y, rate = dsp.read_wav(input_path)
    rng = np.random.default_rng([sampler_cfg.seed, index])
    est = sample_mod.stochastic_sample(
        model, y, p, sampler_cfg, rng, num_sources=num_sources, reuse_denoise=True
    )
    names = _estimate_names(input_path, est.shape[0])
    for k, name in enumerate(names):
        dsp.write_wav(os.path.join(out_dir, name), est[k], rate)
    return names


# -------------------------------------------------------------------- evaluate


def _cmd_evaluate(cfg, args):
    _, instances = data_mod.load_manifest(args.manifest)
    report = metrics.EvalReport()
    for inst in instances:
        refs = np.stack([dsp.read_wav(q)[0] for q in inst["s_paths"]])
        y, _rate = dsp.read_wav(inst["mix_path"])
        names = _estimate_names(inst["mix_path"], refs.shape[0])
        est = np.stack(
            [dsp.read_wav(os.path.join(args.estimates, name))[0] for name in names]
        )
        perm, per_source, mean_db = metrics.pit_eval(est, refs)
        improvement = metrics.si_sdr_improvement(est, refs, y)
        report.permutations.append(perm)
        report.per_source_db.append(per_source)
        report.mean_db.append(mean_db)
        report.improvement_db.append(improvement)
    out_path = args.out or os.path.join(args.estimates, "report.json")
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    agg = report.aggregate()
    print(f"{'instance':>8s} {'perm':>8s} {'mean dB':>10s} {'improv dB':>10s}")
    for i, (perm, mean_db, imp) in enumerate(
        zip(report.permutations, report.mean_db, report.improvement_db)
    ):
        print(f"{i:8d} {''.join(map(str, perm)):>8s} {mean_db:10.2f} {imp:10.2f}")
    print(
        f"{'median':>8s} {'':>8s} {agg['median_si_sdr_db']:10.2f} "
        f"{agg['median_improvement_db']:10.2f}"
    )
    print(out_path)
    return 0


# ------------------------------------------------------------- dump-trajectory


def _cmd_dump_trajectory(cfg, args):
    p = cfg.sde
    s, y = data_mod.gen_pair(cfg.data, args.index)
    if args.mode == "forward":
        rng = np.random.default_rng([cfg.seed, args.index])
        times, traj = sde_mod.forward_em_simulate(s, y, p, args.em_steps, rng)
        sde_mod.write_trajectory_csv(args.out, times, traj)
    else:
        model = dn.GaussianOraclePrior(cfg.data.sigma_s)
        sampler_cfg = cfg.sample
        if args.steps is not None:
            sampler_cfg = replace(sampler_cfg, n_steps=args.steps)
        rng = np.random.default_rng([sampler_cfg.seed, args.index])
        sink = []
        sample_mod.stochastic_sample(
            model, y, p, sampler_cfg, rng, num_sources=cfg.data.K, trajectory=sink
        )
        times = [rec[0] for rec in sink]
        stages = [rec[1] for rec in sink]
        states = np.stack([rec[2] for rec in sink])
        sde_mod.write_trajectory_csv(args.out, times, states, stages=stages)
    print(args.out)
    return 0


# ----------------------------------------------------------------- spectrogram


def _cmd_spectrogram(cfg, args):
    signal, _rate = dsp.read_wav(args.input)
    pgm = args.out_prefix + ".pgm"
    csv = args.out_prefix + ".csv"
    dsp.write_spectrogram(signal, cfg.stft, pgm, csv)
    print(pgm)
    print(csv)
    return 0


# ----------------------------------------------------------------- oracle-demo


def _cmd_oracle_demo(cfg, args):
    spec = replace(cfg.data, kind="gaussian")
    os.makedirs(args.out, exist_ok=True)
    write_resolved(cfg, args.out)
    model = dn.GaussianOraclePrior(spec.sigma_s)
    report = metrics.EvalReport()
    for i in range(spec.count):
        s, y = data_mod.gen_gaussian_pair(spec, i)
        rng = np.random.default_rng([cfg.sample.seed, i])
        est = sample_mod.stochastic_sample(model, y, cfg.sde, cfg.sample, rng, num_sources=spec.K)
        perm, per_source, mean_db = metrics.pit_eval(est, s)
        report.permutations.append(perm)
        report.per_source_db.append(per_source)
        report.mean_db.append(mean_db)
        report.improvement_db.append(metrics.si_sdr_improvement(est, s, y))
    out_path = os.path.join(args.out, "report.json")
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    agg = report.aggregate()
    print(
        f"instances={agg['count']} median_si_sdr={agg['median_si_sdr_db']:.2f} dB "
        f"median_improvement={agg['median_improvement_db']:.2f} dB"
    )
    print(out_path)
    return 0


_COMMANDS = {
    "validate-sde": _cmd_validate_sde,
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "separate": _cmd_separate,
    "evaluate": _cmd_evaluate,
    "dump-trajectory": _cmd_dump_trajectory,
    "spectrogram": _cmd_spectrogram,
    "oracle-demo": _cmd_oracle_demo,
}


def run(argv):
    """Dispatch a CLI invocation; returns the process exit code."""
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = _resolve_config(args)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, dsp.WavError, train_mod.CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
