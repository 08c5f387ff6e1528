"""Closed-form schedule and marginals of the separation diffusion.

The forward process on a stacked signal x is

    dx_t = -gamma * Pbar x_t dt + g(t) dw,      x_0 = s,

a mean-reverting pull of the inter-source residual toward zero plus
variance-exploding noise with g(t) = sigma_min * rho^t * sqrt(2 log rho),
rho = sigma_max / sigma_min. Because drift and noise are simultaneously
diagonalized by the P / Pbar projectors, the time-t marginal is Gaussian with

    mean   mu_t   = s_bar + exp(-gamma t) * Pbar s
    cov    Sigma_t = lambda1(t) P + lambda2(t) Pbar
    lambda_k(t) = sigma_min^2 (rho^{2t} - exp(-2 xi_k t)) log(rho) / (xi_k + log rho)

with xi_1 = 0 (P subspace, drift-free) and xi_2 = gamma. All operations here
evaluate that schedule, draw exact marginal samples, or integrate the SDE by
Euler-Maruyama for Monte-Carlo validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mixalg import as_stacked, project_mean, project_residual, stack_mixture

_T_SLACK = 1e-12  # absolute slack on time-range guards against float drift


@dataclass(frozen=True)
class SdeParams:
    """Schedule parameters; defaults follow the reference configuration."""

    gamma: float = 2.0
    sigma_min: float = 0.05
    sigma_max: float = 0.5
    t_eps: float = 0.03
    T: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if not 0.0 < self.t_eps < self.T:
            raise ValueError("need 0 < t_eps < T")

    @property
    def log_rho(self):
        return math.log(self.sigma_max / self.sigma_min)

    @staticmethod
    def degenerate_for_tests(sigma, gamma=2.0, t_eps=0.03, T=1.0):
        """Zero-diffusion hook (sigma_min = sigma_max) for deterministic-ODE
        tests. Bypasses the public invariant on purpose; only diffusion_g and
        the Euler-Maruyama simulator are meaningful on such params."""
        p = object.__new__(SdeParams)
        object.__setattr__(p, "gamma", gamma)
        object.__setattr__(p, "sigma_min", sigma)
        object.__setattr__(p, "sigma_max", sigma)
        object.__setattr__(p, "t_eps", t_eps)
        object.__setattr__(p, "T", T)
        return p


@dataclass(frozen=True)
class NoiseScales:
    """Eigenvalues of Sigma_t on the P / Pbar subspaces and their combined
    scale sigma = sqrt(lambda1) + sqrt(lambda2)."""

    lambda1: float
    lambda2: float
    sigma: float


def _check_t(p, t, lo=0.0):
    if not (lo - _T_SLACK <= t <= p.T + _T_SLACK):
        raise ValueError(f"t={t} outside [{lo}, {p.T}]")


def noise_scales(p, t):
    """lambda1(t), lambda2(t), sigma(t) of the closed-form covariance."""
    _check_t(p, t)
    lr = p.log_rho
    grow = math.exp(2.0 * t * lr)  # rho^{2t}, computed via exp for stability
    lam1 = p.sigma_min**2 * (grow - 1.0)
    lam2 = p.sigma_min**2 * (grow - math.exp(-2.0 * p.gamma * t)) * lr / (p.gamma + lr)
    if not (math.isfinite(lam1) and math.isfinite(lam2)):
        raise ValueError(f"noise scale overflow at t={t}")
    # exact-zero guard: both vanish analytically at t=0, protect against -0.0
    lam1 = max(lam1, 0.0)
    lam2 = max(lam2, 0.0)
    return NoiseScales(lam1, lam2, math.sqrt(lam1) + math.sqrt(lam2))


def noise_scales_dot(p, t):
    """Analytic time derivatives (dlambda1/dt, dlambda2/dt); positive for t > 0.

    dlambda_k/dt = sigma_min^2 log(rho)/(xi_k + log rho)
                   * (2 log(rho) rho^{2t} + 2 xi_k exp(-2 xi_k t)).
    """
    if t <= 0.0:
        raise ValueError("noise_scales_dot needs t > 0 (schedule is singular at 0)")
    _check_t(p, t)
    lr = p.log_rho
    grow = math.exp(2.0 * t * lr)
    d1 = p.sigma_min**2 * 2.0 * lr * grow
    d2 = (
        p.sigma_min**2
        * lr
        / (p.gamma + lr)
        * (2.0 * lr * grow + 2.0 * p.gamma * math.exp(-2.0 * p.gamma * t))
    )
    return d1, d2


def diffusion_g(p, t):
    """Diffusion coefficient g(t) = sigma_min rho^t sqrt(2 log rho)."""
    _check_t(p, t)
    lr = p.log_rho  # 0 for the degenerate test hook, giving g == 0
    g = p.sigma_min * math.exp(t * lr) * math.sqrt(2.0 * lr)
    if not math.isfinite(g):
        raise ValueError(f"diffusion coefficient overflow at t={t}")
    return g


def check_mixture_consistency(s, y, atol=1e-8):
    """Require y to equal the row-sum of s within atol."""
    s = as_stacked(s)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (s.shape[1],):
        raise ValueError(f"mixture shape {y.shape} != (M,)={(s.shape[1],)}")
    err = np.max(np.abs(s.sum(axis=0) - y)) if s.shape[1] else 0.0
    if err > atol:
        raise ValueError(f"mixture inconsistency: max |sum(s) - y| = {err:.3e} > {atol}")
    return s, y


def marginal_mean(s, y, p, t):
    """mu_t = s_bar + exp(-gamma t) Pbar s; the P part is pinned to s_bar."""
    s, y = check_mixture_consistency(s, y)
    _check_t(p, t)
    sbar = stack_mixture(y, s.shape[0])
    return sbar + math.exp(-p.gamma * t) * project_residual(s)


def apply_Lt(x, p, t):
    """L_t x = sqrt(lambda1) P x + sqrt(lambda2) Pbar x (matrix square root
    of Sigma_t, applied spectrally)."""
    ns = noise_scales(p, t)
    return math.sqrt(ns.lambda1) * project_mean(x) + math.sqrt(ns.lambda2) * project_residual(x)


def apply_Lt_inverse(x, p, t):
    """L_t^{-1} x; requires t >= t_eps so both eigenvalues are safely positive."""
    if t < p.t_eps - _T_SLACK:
        raise ValueError(f"t={t} below t_eps={p.t_eps}: near-singular inverse scaling")
    ns = noise_scales(p, t)
    return project_mean(x) / math.sqrt(ns.lambda1) + project_residual(x) / math.sqrt(ns.lambda2)


def sample_marginal(s, y, p, t, rng):
    """One exact draw x_t = mu_t + L_t z, z ~ N(0, I_KM)."""
    s, y = check_mixture_consistency(s, y)
    mu = marginal_mean(s, y, p, t)
    z = rng.standard_normal(s.shape)
    return mu + apply_Lt(z, p, t)


def forward_em_simulate(s, y, p, n_steps, rng, store_trajectory=True):
    """Euler-Maruyama integration of the forward SDE from x_0 = s to t = T.

    Uniform steps dt = T / n_steps with left-endpoint coefficients:
    x <- x - gamma Pbar x dt + g(t_i) sqrt(dt) N(0, I). Returns
    (times, trajectory) with trajectory of shape (n_steps + 1, K, M) when
    store_trajectory, else (times, endpoint).
    """
    s, y = check_mixture_consistency(s, y)
    if n_steps < 100:
        raise ValueError(f"n_steps={n_steps} too coarse; need >= 100")
    dt = p.T / n_steps
    sqdt = math.sqrt(dt)
    times = np.linspace(0.0, p.T, n_steps + 1)
    x = s.copy()
    traj = np.empty((n_steps + 1,) + s.shape) if store_trajectory else None
    if store_trajectory:
        traj[0] = x
    for i in range(n_steps):
        g = diffusion_g(p, times[i])
        x = x - p.gamma * project_residual(x) * dt + g * sqdt * rng.standard_normal(s.shape)
        if not np.all(np.isfinite(x)):
            raise RuntimeError(f"non-finite state at step {i + 1}/{n_steps}")
        if store_trajectory:
            traj[i + 1] = x
    return times, (traj if store_trajectory else x)


def forward_em_endpoint_ensemble(s, y, p, n_steps, n_paths, root_seed, chunk=200):
    """Endpoints of n_paths independent Euler-Maruyama paths, vectorized.

    Path i consumes the stream np.random.default_rng([root_seed, i]) exactly as
    forward_em_simulate(..., store_trajectory=False) would, so results are a
    pure function of (root_seed, i) and independent of chunking or worker
    count. Returns an (n_paths, K, M) array.
    """
    s, y = check_mixture_consistency(s, y)
    if n_steps < 100:
        raise ValueError(f"n_steps={n_steps} too coarse; need >= 100")
    dt = p.T / n_steps
    sqdt = math.sqrt(dt)
    times = np.linspace(0.0, p.T, n_steps + 1)
    gs = np.array([diffusion_g(p, t) for t in times[:-1]])
    out = np.empty((n_paths,) + s.shape)
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        # one block draw per path reproduces the sequential per-step stream
        noise = np.stack(
            [
                np.random.default_rng([root_seed, i]).standard_normal((n_steps,) + s.shape)
                for i in range(lo, hi)
            ],
            axis=1,
        )  # (n_steps, paths, K, M)
        x = np.broadcast_to(s, (hi - lo,) + s.shape).copy()
        for i in range(n_steps):
            res = x - x.mean(axis=1, keepdims=True)
            x = x - p.gamma * res * dt + gs[i] * sqdt * noise[i]
        out[lo:hi] = x
    if not np.all(np.isfinite(out)):
        raise RuntimeError("non-finite endpoint in ensemble")
    return out


def write_trajectory_csv(path, times, trajectory, stages=None):
    """Dump a trajectory as CSV rows t,source_index,sample_index,value.

    With stages (one label per stored state) an extra trailing stage column is
    written; used by the sampler's per-step dump.
    """
    trajectory = np.asarray(trajectory)
    n_states, K, M = trajectory.shape
    if len(times) != n_states:
        raise ValueError("times/trajectory length mismatch")
    if stages is not None and len(stages) != n_states:
        raise ValueError("stages/trajectory length mismatch")
    with open(path, "w", encoding="utf-8") as f:
        if stages is None:
            f.write("t,source_index,sample_index,value\n")
            for ti, state in zip(times, trajectory):
                t_txt = repr(float(ti))
                for k in range(K):
                    for m in range(M):
                        f.write(f"{t_txt},{k},{m},{float(state[k, m])!r}\n")
        else:
            f.write("t,source_index,sample_index,value,stage\n")
            for ti, state, st in zip(times, trajectory, stages):
                t_txt = repr(float(ti))
                for k in range(K):
                    for m in range(M):
                        f.write(f"{t_txt},{k},{m},{float(state[k, m])!r},{st}\n")
