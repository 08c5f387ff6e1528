"""Score-matching training with a permutation-invariant boundary branch.

The regular branch draws t uniformly on [t_eps, T], samples x_t from the
closed-form marginal, and scores the denoiser with the whitened error

    loss = || L_t^{-1} (D(x_t, t, y) - mu_t) ||^2 / (K M).

With probability p_T a sample instead takes the boundary branch: the state is
drawn from the t = T marginal around s_bar alone (x_T = s_bar + L_T z), whose
law no longer depends on the source ordering, and the loss is minimized over
all source permutations of the target mean. This resolves the output-label
ambiguity the mixture conditioning cannot break at large t.

Optimization is plain Adam. Checkpoints serialize parameters, moments, and
the step counter; per-step randomness is re-derived from (root seed, step),
so training resumes bit-identically after a reload.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import denoise as dn
from .dsp import StftConfig
from .mixalg import all_permutations, apply_permutation, as_stacked
from .sde import SdeParams, apply_Lt, apply_Lt_inverse, marginal_mean, sample_marginal

CHECKPOINT_MAGIC = b"EDSP"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Base class for checkpoint file problems."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or unparseable header."""


class CheckpointVersionError(CheckpointError):
    """Format version not supported."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the declared payload."""


class CheckpointShapeError(CheckpointError):
    """Tensor directory disagrees with the declared architecture."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    total_steps: int = 20000
    p_T: float = 0.1
    seed: int = 0
    checkpoint_interval: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.p_T <= 1.0:
            raise ValueError("p_T must lie in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def dsm_loss(model, s, y, p, t, rng):
    """Whitened denoising error at a drawn x_t; >= 0, zero iff D hits mu_t."""
    s = as_stacked(s)
    if not p.t_eps - 1e-12 <= t <= p.T + 1e-12:
        raise ValueError(f"t={t} outside [{p.t_eps}, {p.T}]")
    mu = marginal_mean(s, y, p, t)
    x_t = sample_marginal(s, y, p, t, rng)
    d = dn.denoise(model, x_t, t, y, p)
    r = apply_Lt_inverse(d - mu, p, t)
    return float(np.sum(r * r)) / s.size


def boundary_pit_loss(model, s, y, p, rng, return_permutation=False):
    """Min over source permutations of the whitened boundary error.

    Draws x_T = s_bar + L_T z once, then scores D(x_T) against mu_T computed
    for every row ordering of s; the minimum breaks the label ambiguity.
    """
    s = as_stacked(s)
    z = rng.standard_normal(s.shape)
    sbar = np.tile(np.asarray(y, dtype=np.float64) / s.shape[0], (s.shape[0], 1))
    x_T = sbar + apply_Lt(z, p, p.T)
    d = dn.denoise(model, x_T, p.T, y, p)
    best = None
    for perm in all_permutations(s.shape[0]):
        mu = marginal_mean(apply_permutation(s, perm), y, p, p.T)
        r = apply_Lt_inverse(d - mu, p, p.T)
        # reduce per row, then sum sorted row totals: the result is then
        # bitwise invariant under relabeling the sources
        row_sq = np.sort(np.sum(r * r, axis=1))
        val = float(np.sum(row_sq)) / s.size
        if best is None or val < best[0]:
            best = (val, perm)
    return best if return_permutation else best[0]


def adam_update(params, grads, moments, cfg, step):
    """Bias-corrected Adam step (step is 1-based); updates in place."""
    m, v = moments
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {name}")
        m[name] = b1 * m[name] + (1.0 - b1) * g
        v[name] = b2 * v[name] + (1.0 - b2) * (g * g)
        mh = m[name] / c1
        vh = v[name] / c2
        params[name] = params[name] - cfg.learning_rate * mh / (np.sqrt(vh) + cfg.adam_eps)
    return params, (m, v)


@dataclass
class TrainState:
    net: dn.NeuralDenoiser
    sde_params: SdeParams
    cfg: TrainConfig
    step: int = 0
    moments: tuple = None  # (m, v) dicts, allocated lazily
    root_seed: int = 0

    def __post_init__(self):
        if self.moments is None:
            zeros = lambda: {k: np.zeros_like(v) for k, v in self.net.params.items()}
            self.moments = (zeros(), zeros())


def _batch_loss_and_grads(state, batch, rng):
    """Mean loss and parameter gradients over one batch of (s, y) pairs.

    Per element: u ~ U(0,1) picks the branch; the regular branch draws
    t ~ U(t_eps, T) and z for x_t, the boundary branch draws z for x_T and
    scores against the best permutation. All elements share one MLP pass
    (frames concatenated), with per-element spectral encode/decode.
    """
    net = state.net
    p = state.sde_params
    cfg = state.cfg
    feats, metas = [], []
    for s, y in batch:
        s = as_stacked(s)
        u = rng.uniform()
        if u < cfg.p_T:
            t = p.T
            z = rng.standard_normal(s.shape)
            sbar = np.tile(np.asarray(y, dtype=np.float64) / s.shape[0], (s.shape[0], 1))
            x_t = sbar + apply_Lt(z, p, t)
            targets = [
                marginal_mean(apply_permutation(s, perm), y, p, t)
                for perm in all_permutations(s.shape[0])
            ]
            branch = "boundary"
        else:
            t = rng.uniform(p.t_eps, p.T)
            mu = marginal_mean(s, y, p, t)
            z = rng.standard_normal(s.shape)
            x_t = mu + apply_Lt(z, p, t)
            targets = [mu]
            branch = "dsm"
        f = dn.features_for(net, x_t, dn.noise_conditioning(net, p, t), y)
        feats.append(f)
        metas.append(
            {"x_t": x_t, "t": t, "y": y, "targets": targets, "branch": branch, "frames": f.shape[0]}
        )
    out_all, cache = dn.mlp_forward(net, np.concatenate(feats, axis=0))

    losses, g_out_rows = [], []
    counts = {"dsm": 0, "boundary": 0}
    row = 0
    for meta in metas:
        rows = slice(row, row + meta["frames"])
        row += meta["frames"]
        x_t, t = meta["x_t"], meta["t"]
        res = dn.output_to_residual(net, out_all[rows], x_t.shape[1])
        best = None
        for mu in meta["targets"]:
            r = apply_Lt_inverse(x_t - mu, p, t) + res
            val = float(np.sum(r * r)) / x_t.size
            if best is None or val < best[0]:
                best = (val, r)
        losses.append(best[0])
        counts[meta["branch"]] += 1
        g_out_rows.append(
            dn.residual_adjoint(net, 2.0 * best[1] / x_t.size, meta["frames"])
        )
    grads = dn.mlp_backward(net, cache, np.concatenate(g_out_rows, axis=0) / len(batch))
    return float(np.mean(losses)), grads, counts


def train_step(state, batch, rng):
    """One optimizer step; returns (state, mean loss, branch counts)."""
    loss, grads, counts = _batch_loss_and_grads(state, batch, rng)
    if not np.isfinite(loss):
        raise RuntimeError(f"non-finite loss at step {state.step + 1}")
    params, moments = adam_update(state.net.params, grads, state.moments, state.cfg, state.step + 1)
    state.net.params = params
    state.moments = moments
    state.step += 1
    return state, loss, counts


def step_rng(root_seed, step):
    """Per-step random stream; reloading a checkpoint reproduces it exactly."""
    return np.random.default_rng([root_seed, step])


def train_loop(state, dataset, log_path=None, checkpoint_path=None, total_steps=None):
    """Run train_step until the configured budget, with JSONL logging.

    dataset is an indexable collection of (s, y) pairs; batches draw indices
    from the same per-step stream that drives the element randomness. Every
    log line carries step, loss, branch counts, and wallclock seconds.
    """
    cfg = state.cfg
    total = cfg.total_steps if total_steps is None else total_steps
    t0 = time.monotonic()
    log_f = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        while state.step < total:
            rng = step_rng(state.root_seed, state.step)
            idx = rng.integers(0, len(dataset), size=cfg.batch_size)
            batch = [dataset[int(i)] for i in idx]
            state, loss, counts = train_step(state, batch, rng)
            if log_f is not None:
                log_f.write(
                    json.dumps(
                        {
                            "step": state.step,
                            "loss": loss,
                            "branch": counts,
                            "wallclock": time.monotonic() - t0,
                        }
                    )
                    + "\n"
                )
            if checkpoint_path and cfg.checkpoint_interval > 0 and (
                state.step % cfg.checkpoint_interval == 0 or state.step == total
            ):
                save_checkpoint(state, checkpoint_path)
                if log_f is not None:
                    log_f.flush()
    finally:
        if log_f is not None:
            log_f.close()
    return state


def _tensor_directory(state):
    entries = []
    for name in sorted(state.net.params):
        entries.append((f"param/{name}", state.net.params[name]))
    for name in sorted(state.moments[0]):
        entries.append((f"adam_m/{name}", state.moments[0][name]))
    for name in sorted(state.moments[1]):
        entries.append((f"adam_v/{name}", state.moments[1][name]))
    return entries


def save_checkpoint(state, path):
    """Binary layout: magic, u32 version, u64 header length, JSON header,
    then little-endian float64 blobs in directory order."""
    entries = _tensor_directory(state)
    directory = []
    offset = 0
    for name, tensor in entries:
        nbytes = tensor.size * 8
        directory.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        offset += nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "sde": asdict(state.sde_params),
        "stft": asdict(state.net.stft_config),
        "arch": {
            "num_sources": state.net.num_sources,
            "hidden": list(state.net.hidden),
            "alpha": state.net.alpha,
            "beta": state.net.beta,
            "noise_cond_mode": state.net.noise_cond_mode,
            "dtype": np.dtype(state.net.dtype).name,
        },
        "train": asdict(state.cfg),
        "step": state.step,
        "seed": state.root_seed,
        "tensors": directory,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, tensor in entries:
            f.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; next train_step after reload is
    bit-identical to an uninterrupted run."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: version {version} != {CHECKPOINT_VERSION}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise CheckpointTruncatedError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: unreadable header: {e}") from e
    arch = header["arch"]
    net = dn.NeuralDenoiser(
        stft_config=StftConfig(**header["stft"]),
        num_sources=arch["num_sources"],
        hidden=tuple(arch["hidden"]),
        alpha=arch["alpha"],
        beta=arch["beta"],
        noise_cond_mode=arch["noise_cond_mode"],
        dtype=np.dtype(arch["dtype"]).type,
    )
    widths = net.layer_widths
    expected = {}
    for li in range(len(widths) - 1):
        expected[f"w{li}"] = (widths[li], widths[li + 1])
        expected[f"b{li}"] = (widths[li + 1],)
    body = raw[16 + hlen :]
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + size * 8
        if end > len(body):
            raise CheckpointTruncatedError(f"{path}: truncated payload at {entry['name']}")
        tensors[entry["name"]] = (
            np.frombuffer(body[start:end], dtype="<f8").reshape(shape).copy()
        )
    params, m, v = {}, {}, {}
    for name, shape in expected.items():
        for group, dest in (("param", params), ("adam_m", m), ("adam_v", v)):
            key = f"{group}/{name}"
            if key not in tensors:
                raise CheckpointShapeError(f"{path}: missing tensor {key}")
            if tensors[key].shape != shape:
                raise CheckpointShapeError(
                    f"{path}: tensor {key} has shape {tensors[key].shape}, expected {shape}"
                )
            dest[name] = tensors[key].astype(net.dtype)
    net.params = params
    return TrainState(
        net=net,
        sde_params=SdeParams(**header["sde"]),
        cfg=TrainConfig(**header["train"]),
        step=header["step"],
        moments=(m, v),
        root_seed=header["seed"],
    )
