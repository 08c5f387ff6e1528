"""Reverse-time inference: stochastic sampler, probability-flow ODE, reverse SDE.

All three integrators start from the large-t marginal around the stacked
mixture mean, x ~ N(s_bar, Sigma_T), and walk a strictly decreasing time grid
down to t_eps, querying a denoiser for the conditional mean along the way.

* stochastic_sample alternates a denoise-plus-renoise move at the current
  noise level with an Euler step of the probability-flow ODE evaluated at the
  renoised state (two denoiser calls per step, NFE = 2N).
* ode_sample integrates the probability-flow ODE alone (deterministic given
  the initial draw, NFE = N).
* reverse_em_sample is the Euler-Maruyama reverse-SDE baseline, with the
  score expressed through the denoiser via the Gaussian-perturbation identity
  score = Sigma_t^{-1} (D(x, t, y) - x).

The mean correction applied on exit undoes the residual attenuation of the
time-t_eps marginal mean (its residual is exp(-gamma t_eps) times the clean
one), and pins the P component to s_bar exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .denoise import denoise
from .mixalg import project_mean, project_residual, stack_mixture
from .sde import apply_Lt, noise_scales, noise_scales_dot, diffusion_g

_T_SLACK = 1e-12


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 29
    grid: str = "linear"
    mean_correct: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.grid != "linear":
            raise ValueError(f"unknown grid shape {self.grid!r}")


def build_time_grid(p, cfg):
    """N+1 strictly decreasing times from T to t_eps (linear spacing)."""
    times = np.linspace(p.T, p.t_eps, cfg.n_steps + 1)
    if not np.all(np.diff(times) < 0):
        raise ValueError("time grid is not strictly decreasing")
    return times


def _drift_terms(x, d, p, t):
    """-gamma Pbar x + A (x - d) with A = (dl1/2l1) P + (dl2/2l2) Pbar."""
    ns = noise_scales(p, t)
    d1, d2 = noise_scales_dot(p, t)
    a1 = d1 / (2.0 * ns.lambda1)
    a2 = d2 / (2.0 * ns.lambda2)
    inner = x - d
    return (
        -p.gamma * project_residual(x)
        + a1 * project_mean(inner)
        + a2 * project_residual(inner)
    )


def ode_drift(model, x, t, y, p):
    """Probability-flow drift; one denoiser evaluation."""
    if t < p.t_eps - _T_SLACK:
        raise ValueError(f"t={t} below t_eps={p.t_eps}: schedule ratios are singular")
    return _drift_terms(x, denoise(model, x, t, y, p), p, t)


def _init_state(model, y, p, num_sources, rng):
    k = getattr(model, "num_sources", None) or num_sources
    sbar = stack_mixture(y, k)
    return sbar + apply_Lt(rng.standard_normal(sbar.shape), p, p.T), sbar


def mean_correction(x, y, p):
    """s_bar + exp(gamma t_eps) Pbar x: exact inverse of the residual
    attenuation of mu at t_eps; the output rows sum to y exactly."""
    sbar = stack_mixture(y, x.shape[0])
    return sbar + math.exp(p.gamma * p.t_eps) * project_residual(x)


def stochastic_sample(
    model, y, p, cfg, rng, num_sources=2, trajectory=None, reuse_denoise=False
):
    """Stochastic sampler: per step i at time t_i,

        n ~ N(0, Sigma_{t_i}),  x_hat = D(x, t_i, y) + n,
        x <- x_hat + [-gamma Pbar x_hat + A x_hat - A D(x_hat, t_i, y)] dt,

    with dt = t_{i+1} - t_i < 0. Two denoiser calls per step; reuse_denoise
    substitutes the pre-noise denoiser output in the drift (NFE = N variant).
    With mean_correct the returned state is s_bar + exp(gamma t_eps) Pbar x_N.

    trajectory, if a list, collects (t, stage, state) per half-step with
    stage in {post_noise, post_drift}.
    """
    times = build_time_grid(p, cfg)
    x, sbar = _init_state(model, y, p, num_sources, rng)
    for i in range(cfg.n_steps):
        t = float(times[i])
        dt = float(times[i + 1] - times[i])
        d_pre = denoise(model, x, t, y, p)
        noise = apply_Lt(rng.standard_normal(x.shape), p, t)
        x_hat = d_pre + noise
        if trajectory is not None:
            trajectory.append((t, "post_noise", x_hat.copy()))
        d_hat = d_pre if reuse_denoise else denoise(model, x_hat, t, y, p)
        x = x_hat + _drift_terms(x_hat, d_hat, p, t) * dt
        if not np.all(np.isfinite(x)):
            raise RuntimeError(f"non-finite state after step {i + 1}/{cfg.n_steps}")
        if trajectory is not None:
            trajectory.append((float(times[i + 1]), "post_drift", x.copy()))
    return mean_correction(x, y, p) if cfg.mean_correct else x


def ode_sample(model, y, p, cfg, rng, num_sources=2):
    """Euler integration of the probability-flow ODE from the same
    initialization law; deterministic given the initial draw (NFE = N)."""
    times = build_time_grid(p, cfg)
    x, _ = _init_state(model, y, p, num_sources, rng)
    for i in range(cfg.n_steps):
        dt = float(times[i + 1] - times[i])
        x = x + ode_drift(model, x, float(times[i]), y, p) * dt
        if not np.all(np.isfinite(x)):
            raise RuntimeError(f"non-finite state after step {i + 1}/{cfg.n_steps}")
    return mean_correction(x, y, p) if cfg.mean_correct else x


def score_from_denoiser(model, x, t, y, p):
    """score = Sigma_t^{-1} (D(x, t, y) - x), applied spectrally."""
    ns = noise_scales(p, t)
    diff = denoise(model, x, t, y, p) - x
    return project_mean(diff) / ns.lambda1 + project_residual(diff) / ns.lambda2


def reverse_em_sample(model, y, p, n_steps, rng, num_sources=2, mean_correct=True):
    """Euler-Maruyama integration of the reverse-time SDE

        dx = [-gamma Pbar x - g(t)^2 score(x, t)] dt + g(t) dw_bar

    over a uniform grid from T down to t_eps (one denoiser call per step)."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    times = np.linspace(p.T, p.t_eps, n_steps + 1)
    x, _ = _init_state(model, y, p, num_sources, rng)
    for i in range(n_steps):
        t = float(times[i])
        dt = float(times[i + 1] - times[i])
        g = diffusion_g(p, t)
        drift = -p.gamma * project_residual(x) - g * g * score_from_denoiser(model, x, t, y, p)
        x = x + drift * dt + g * math.sqrt(-dt) * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise RuntimeError(f"non-finite state after step {i + 1}/{n_steps}")
    return mean_correction(x, y, p) if mean_correct else x
