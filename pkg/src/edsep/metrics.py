"""Separation quality metrics: SI-SDR, assignment search, improvement.

si_sdr projects the estimate onto the reference, so the value is invariant to
rescaling the estimate. Reports are clipped to [-60, +60] dB: +60 stands for a
numerically zero residual, -60 for an estimate with no reference component.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mixalg import all_permutations, as_stacked

DB_CAP = 60.0


def si_sdr(estimate, reference):
    """Scale-invariant signal-to-distortion ratio in dB.

    alpha = <estimate, reference> / ||reference||^2; the value is
    10 log10(||alpha r||^2 / ||alpha r - estimate||^2), clipped to +-60 dB.
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if estimate.shape != reference.shape or estimate.ndim != 1:
        raise ValueError("si_sdr expects two 1-D signals of equal length")
    ref_energy = float(reference @ reference)
    if ref_energy == 0.0:
        raise ValueError("zero reference signal")
    alpha = float(estimate @ reference) / ref_energy
    scaled = alpha * reference
    resid = scaled - estimate
    num = float(scaled @ scaled)
    den = float(resid @ resid)
    if num == 0.0:
        return -DB_CAP
    if den == 0.0:
        return DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


@dataclass
class EvalReport:
    """Per-instance assignment results plus aggregate statistics.

    improvement = mean SI-SDR of the assigned estimates minus the mean SI-SDR
    obtained when the raw mixture is used as every source estimate. The
    external_metrics field is a reserved slot for merged third-party scores.
    """

    permutations: list = field(default_factory=list)
    per_source_db: list = field(default_factory=list)
    mean_db: list = field(default_factory=list)
    improvement_db: list = field(default_factory=list)
    external_metrics: dict = field(default_factory=dict)

    def aggregate(self):
        means = np.asarray(self.mean_db, dtype=np.float64)
        imps = np.asarray(self.improvement_db, dtype=np.float64)
        return {
            "count": int(means.size),
            "mean_si_sdr_db": float(means.mean()) if means.size else float("nan"),
            "median_si_sdr_db": float(np.median(means)) if means.size else float("nan"),
            "mean_improvement_db": float(imps.mean()) if imps.size else float("nan"),
            "median_improvement_db": float(np.median(imps)) if imps.size else float("nan"),
        }

    def to_dict(self):
        return {
            "instances": [
                {
                    "permutation": list(p),
                    "per_source_db": [float(v) for v in s],
                    "mean_db": float(m),
                    "improvement_db": float(i),
                }
                for p, s, m, i in zip(
                    self.permutations, self.per_source_db, self.mean_db, self.improvement_db
                )
            ],
            "aggregate": self.aggregate(),
            "external_metrics": self.external_metrics,
        }


def pit_eval(estimates, references):
    """Exhaustive assignment search maximizing mean SI-SDR.

    Returns (permutation, per-source dB in estimate order, mean dB); the
    permutation maps estimate row i to reference row perm[i]. Ties break
    toward the lexicographically smallest permutation.
    """
    estimates = as_stacked(estimates)
    references = as_stacked(references)
    if estimates.shape != references.shape:
        raise ValueError(f"shape mismatch {estimates.shape} vs {references.shape}")
    K = estimates.shape[0]
    best = None
    for perm in all_permutations(K):  # lexicographic, so first win is the tie-break
        vals = np.array([si_sdr(estimates[i], references[perm[i]]) for i in range(K)])
        # summing the sorted scores keeps the mean bitwise invariant when
        # the same pairing is met with rows relabeled
        mean = float(np.sum(np.sort(vals))) / K
        if best is None or mean > best[2]:
            best = (perm, vals, mean)
    return best


def si_sdr_improvement(estimates, references, y):
    """pit_eval mean minus the mean SI-SDR of the mixture-as-estimate baseline."""
    references = as_stacked(references)
    y = np.asarray(y, dtype=np.float64)
    _, _, mean_db = pit_eval(estimates, references)
    base_vals = np.sort([si_sdr(y, references[k]) for k in range(references.shape[0])])
    base = float(np.sum(base_vals)) / references.shape[0]
    return mean_db - base
