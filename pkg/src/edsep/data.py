"""Synthetic datasets: Gaussian-prior instances and a tonal-vs-noise toy task.

Every instance is a pure function of (spec, index): the generator stream is
np.random.default_rng([spec.seed, index]), so datasets are reproducible and
embarrassingly parallel. Mixtures are always the plain row sum y = sum_k s_k;
SNR targets are imposed by rescaling source energies before summation.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import dsp


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "gaussian"  # gaussian | tonal_vs_noise
    K: int = 2
    M: int = 16000  # 2 s at 8 kHz
    count: int = 1
    seed: int = 0
    snr_range_db: tuple = (-5.0, 5.0)
    sigma_s: float = 0.1  # per-sample std of gaussian sources (WAV headroom)
    sample_rate: int = 8000

    def __post_init__(self):
        if self.kind not in ("gaussian", "tonal_vs_noise"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise ValueError("snr_range_db must be (lo, hi) with lo <= hi")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.K < 2 or self.M < 1:
            raise ValueError("need K >= 2 and M >= 1")


def instance_rng(spec, index):
    return np.random.default_rng([spec.seed, index])


def gen_gaussian_pair(spec, index):
    """Sources i.i.d. N(0, sigma_s^2) per sample; y is their exact sum."""
    if spec.kind != "gaussian":
        raise ValueError(f"spec kind is {spec.kind!r}, not gaussian")
    rng = instance_rng(spec, index)
    s = rng.normal(0.0, spec.sigma_s, size=(spec.K, spec.M))
    return s, s.sum(axis=0)


def gen_tonal_vs_noise_pair(spec, index):
    """Spectrally disjoint pair: low tonal chord vs band-limited noise.

    Source 0 sums three sinusoids with frequencies in [100, 800] Hz, random
    phases and amplitudes, under a smooth raised-cosine amplitude envelope.
    Source 1 is white noise brick-walled to [1200, 3600] Hz, rescaled so the
    energy-ratio SNR is uniform in snr_range_db. Both sources are jointly
    rescaled to peak 0.95 (SNR-preserving) for WAV headroom.
    """
    if spec.kind != "tonal_vs_noise":
        raise ValueError(f"spec kind is {spec.kind!r}, not tonal_vs_noise")
    if spec.K != 2:
        raise ValueError("tonal_vs_noise is a two-source task")
    rng = instance_rng(spec, index)
    m = spec.M
    tgrid = np.arange(m) / spec.sample_rate

    freqs = rng.uniform(100.0, 800.0, size=3)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    amps = rng.uniform(0.5, 1.0, size=3)
    envelope = 0.25 + 0.75 * (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(m) / max(m - 1, 1)))
    tonal = envelope * sum(
        a * np.sin(2.0 * np.pi * f * tgrid + ph) for a, f, ph in zip(amps, freqs, phases)
    )

    white = rng.standard_normal(m)
    spectrum = np.fft.rfft(white)
    freq_axis = np.fft.rfftfreq(m, d=1.0 / spec.sample_rate)
    spectrum[(freq_axis < 1200.0) | (freq_axis > 3600.0)] = 0.0
    noise = np.fft.irfft(spectrum, n=m)

    snr_db = rng.uniform(spec.snr_range_db[0], spec.snr_range_db[1])
    e_tonal = float(tonal @ tonal)
    e_noise = float(noise @ noise)
    noise *= math.sqrt(e_tonal / (e_noise * 10.0 ** (snr_db / 10.0)))

    s = np.stack([tonal, noise])
    y = s.sum(axis=0)
    peak = max(np.max(np.abs(s)), np.max(np.abs(y)))
    scale = 0.95 / peak
    return s * scale, y * scale


def gen_pair(spec, index):
    if spec.kind == "gaussian":
        return gen_gaussian_pair(spec, index)
    return gen_tonal_vs_noise_pair(spec, index)


def realized_snr_db(s):
    """10 log10 of the first-vs-second source energy ratio (informational)."""
    e0 = float(s[0] @ s[0])
    e1 = float(s[1] @ s[1])
    return 10.0 * math.log10(e0 / e1)


def make_manifest(spec, out_dir):
    """Write per-instance WAVs plus a JSON manifest; returns the manifest path.

    Layout per instance i: s0_{i:04d}.wav ... s{K-1}_{i:04d}.wav and
    mix_{i:04d}.wav. The manifest lists paths, per-instance stream keys, and
    realized SNRs, with canonical (sorted) key order.
    """
    os.makedirs(out_dir, exist_ok=True)
    instances = []
    for i in range(spec.count):
        s, y = gen_pair(spec, i)
        s_paths = []
        for k in range(spec.K):
            name = f"s{k}_{i:04d}.wav"
            dsp.write_wav(os.path.join(out_dir, name), s[k], spec.sample_rate)
            s_paths.append(name)
        mix_name = f"mix_{i:04d}.wav"
        dsp.write_wav(os.path.join(out_dir, mix_name), y, spec.sample_rate)
        instances.append(
            {
                "id": i,
                "s_paths": s_paths,
                "mix_path": mix_name,
                "snr_db": realized_snr_db(s),
                "seed": [spec.seed, i],
            }
        )
    manifest = {"spec": _spec_dict(spec), "instances": instances}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    return path


def _spec_dict(spec):
    d = asdict(spec)
    d["snr_range_db"] = list(d["snr_range_db"])
    return d


def load_manifest(path):
    """Read a manifest and return (spec, instances with absolute paths)."""
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    base = os.path.dirname(os.path.abspath(path))
    spec_d = dict(manifest["spec"])
    spec_d["snr_range_db"] = tuple(spec_d["snr_range_db"])
    spec = DatasetSpec(**spec_d)
    instances = []
    for inst in manifest["instances"]:
        instances.append(
            {
                **inst,
                "s_paths": [os.path.join(base, q) for q in inst["s_paths"]],
                "mix_path": os.path.join(base, inst["mix_path"]),
            }
        )
    return spec, instances
