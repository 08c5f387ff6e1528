"""Denoiser backends behind one interface.

A denoiser maps a noisy stacked state x_t at process time t, conditioned on
the mixture y, to an estimate of the marginal mean mu_t. Two backends:

* GaussianOraclePrior — the exact conditional mean when the sources are drawn
  i.i.d. N(0, sigma_s^2) per sample; closed form, no parameters. Used to
  verify every downstream component analytically.

* NeuralDenoiser — the trainable parameterization
  D(x_t, t, y) = x_t + L_t F(x_t, c(t), y), where F is a small per-frame MLP
  over compressed STFT features and c(t) = ln(sigma(t)/2) is the scalar noise
  conditioning. The skip connection is exact: a zero network returns x_t.

The network's input path applies the nonlinear magnitude compression, but the
output path is linear (raw real/imag coefficients through the inverse STFT),
so parameter gradients never touch the non-smooth magnitude power law.
Backpropagation is hand-written and validated by grad_check against central
finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .mixalg import as_stacked, project_residual, stack_mixture
from .sde import apply_Lt, apply_Lt_inverse, marginal_mean, noise_scales


@dataclass(frozen=True)
class GaussianOraclePrior:
    """Exact conditional-mean denoiser for i.i.d. Gaussian sources.

    Derivation. Condition on the mixture y. The marginal mean splits as
    mu_t = s_bar + exp(-gamma t) Pbar s, and the state as
    x_t = s_bar + exp(-gamma t) Pbar s + sqrt(lambda1) P z + sqrt(lambda2) Pbar z.
    With sources i.i.d. N(0, sigma_s^2) per sample, Pbar s given y is zero-mean
    Gaussian with covariance sigma_s^2 Pbar (y fixes only the P component), so
    within the Pbar subspace the pair (Pbar mu_t, Pbar x_t) is jointly Gaussian:

        Pbar mu_t = exp(-gamma t) Pbar s
        Pbar x_t  = Pbar mu_t + sqrt(lambda2(t)) Pbar z.

    The conditional mean of a Gaussian signal observed in Gaussian noise is the
    scalar Wiener gain applied to the observation:

        E[Pbar mu_t | x_t, y] = kappa(t) Pbar x_t,
        kappa(t) = exp(-2 gamma t) sigma_s^2
                   / (exp(-2 gamma t) sigma_s^2 + lambda2(t)).

    The P component of mu_t is s_bar exactly, giving
    D(x_t, t, y) = s_bar + kappa(t) Pbar x_t.
    """

    sigma_s: float

    def __post_init__(self):
        if self.sigma_s <= 0:
            raise ValueError("sigma_s must be positive")


def oracle_gain(prior, p, t):
    """kappa(t), the Wiener gain of the Gaussian-prior conditional mean."""
    attenuated = math.exp(-2.0 * p.gamma * t) * prior.sigma_s**2
    return attenuated / (attenuated + noise_scales(p, t).lambda2)


def oracle_denoise(prior, x_t, t, y, p):
    """s_bar + kappa(t) Pbar x_t; see GaussianOraclePrior for the derivation."""
    x_t = as_stacked(x_t)
    sbar = stack_mixture(y, x_t.shape[0])
    return sbar + oracle_gain(prior, p, t) * project_residual(x_t)


def _silu(a):
    # exp may overflow to inf for very negative a; 1/(1+inf) == 0 is the
    # exact sigmoid limit, so silence the warning instead of branching
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-a))
    return a * sig, sig


def _silu_grad(a, sig):
    return sig * (1.0 + a * (1.0 - sig))


@dataclass
class NeuralDenoiser:
    """Per-frame MLP residual predictor over compressed STFT features.

    Parameters live in ``params`` as named float tensors w0/b0 ... wL/bL in
    feed-forward order; all hidden layers use the sigmoid-weighted (SiLU)
    activation and the head is linear. Per frame, the input feature vector
    concatenates real/imag parts of the compressed spectra of the K state
    channels and of the mixture, plus the scalar noise conditioning; the head
    emits raw real/imag spectrogram coefficients for K channels, which a
    linear inverse STFT turns into the K x M time-domain residual.
    """

    stft_config: dsp.StftConfig
    num_sources: int
    hidden: tuple = (256, 256, 256)
    alpha: float = 0.5
    beta: float = 0.15
    noise_cond_mode: str = "log_half_sigma"  # or "half_log_sigma"
    dtype: type = np.float64
    params: dict = field(default_factory=dict)

    @property
    def in_width(self):
        return 2 * self.stft_config.bins * (self.num_sources + 1) + 1

    @property
    def out_width(self):
        return 2 * self.stft_config.bins * self.num_sources

    @property
    def layer_widths(self):
        return (self.in_width, *self.hidden, self.out_width)

    def num_params(self):
        return sum(v.size for v in self.params.values())


def init_neural_denoiser(
    stft_config,
    num_sources,
    hidden=(256, 256, 256),
    seed=0,
    alpha=0.5,
    beta=0.15,
    noise_cond_mode="log_half_sigma",
    dtype=np.float64,
):
    """Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer."""
    if noise_cond_mode not in ("log_half_sigma", "half_log_sigma"):
        raise ValueError(f"unknown noise_cond_mode {noise_cond_mode!r}")
    net = NeuralDenoiser(
        stft_config=stft_config,
        num_sources=int(num_sources),
        hidden=tuple(int(h) for h in hidden),
        alpha=alpha,
        beta=beta,
        noise_cond_mode=noise_cond_mode,
        dtype=dtype,
    )
    rng = np.random.default_rng(seed)
    widths = net.layer_widths
    for li in range(len(widths) - 1):
        fan_in, fan_out = widths[li], widths[li + 1]
        bound = 1.0 / math.sqrt(fan_in)
        net.params[f"w{li}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        net.params[f"b{li}"] = np.zeros(fan_out, dtype=dtype)
    return net


def noise_conditioning(net_or_mode, p, t):
    """Scalar conditioning value fed to the network at time t."""
    mode = getattr(net_or_mode, "noise_cond_mode", net_or_mode)
    sigma = noise_scales(p, t).sigma
    if sigma <= 0.0:
        raise ValueError("noise conditioning undefined at sigma(t) = 0")
    if mode == "log_half_sigma":
        return math.log(sigma / 2.0)
    if mode == "half_log_sigma":
        return 0.5 * math.log(sigma)
    raise ValueError(f"unknown noise_cond_mode {mode!r}")


def features_for(net, x_t, noise_cond, y):
    """Per-frame feature matrix (frames, in_width) for one (x_t, y) pair."""
    x_t = as_stacked(x_t)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (x_t.shape[1],):
        raise ValueError(f"mixture length {y.shape} != M={x_t.shape[1]}")
    cfg = net.stft_config
    spec_x = dsp.compress(dsp.stft(x_t, cfg), net.alpha, net.beta)  # (K, F, B)
    spec_y = dsp.compress(dsp.stft(y, cfg), net.alpha, net.beta)  # (F, B)
    frames = spec_y.shape[0]
    cols = []
    for k in range(x_t.shape[0]):
        cols.append(spec_x[k].real)
        cols.append(spec_x[k].imag)
    cols.append(spec_y.real)
    cols.append(spec_y.imag)
    cols.append(np.full((frames, 1), noise_cond))
    return np.concatenate(cols, axis=1).astype(net.dtype)


def mlp_forward(net, feats):
    """Dense forward pass; returns (head output, cache for backward)."""
    h = feats
    pre, act, sigs = [], [h], []
    n_layers = len(net.layer_widths) - 1
    for li in range(n_layers):
        a = h @ net.params[f"w{li}"] + net.params[f"b{li}"]
        if not np.all(np.isfinite(a)):
            raise RuntimeError(f"non-finite activations in layer {li}")
        if li < n_layers - 1:
            pre.append(a)
            h, sig = _silu(a)
            sigs.append(sig)
            act.append(h)
        else:
            h = a
    return h, {"pre": pre, "act": act, "sigs": sigs}


def mlp_backward(net, cache, g_out):
    """Parameter gradients for the dense stack given d(loss)/d(head output)."""
    grads = {}
    n_layers = len(net.layer_widths) - 1
    g = g_out
    for li in reversed(range(n_layers)):
        h_in = cache["act"][li]
        grads[f"w{li}"] = h_in.T @ g
        grads[f"b{li}"] = g.sum(axis=0)
        if li > 0:
            g = g @ net.params[f"w{li}"].T
            g = g * _silu_grad(cache["pre"][li - 1], cache["sigs"][li - 1])
    return grads


def output_to_residual(net, out, length):
    """Linear decode: head output (frames, 2*B*K) -> (K, length) residual.

    Imag parts of the DC (and Nyquist, for even n_fft) bins are forced to
    zero: they are not degrees of freedom of a real signal's spectrum.
    """
    cfg = net.stft_config
    B = cfg.bins
    frames = out.shape[0]
    res = np.empty((net.num_sources, length))
    for k in range(net.num_sources):
        re = np.asarray(out[:, 2 * k * B : (2 * k + 1) * B], dtype=np.float64)
        im = np.asarray(out[:, (2 * k + 1) * B : (2 * k + 2) * B], dtype=np.float64).copy()
        im[:, 0] = 0.0
        if cfg.n_fft % 2 == 0:
            im[:, -1] = 0.0
        res[k] = dsp.istft(re + 1j * im, cfg, length)
    if frames != dsp.num_frames(cfg, length):
        raise ValueError("frame count inconsistent with target length")
    return res


def residual_adjoint(net, g_res, frames):
    """Adjoint of output_to_residual: (K, M) gradient -> (frames, 2*B*K).

    The inverse STFT is a fixed real-linear map from the real/imag coefficient
    layout to time samples; its adjoint embeds the gradient into the padded
    buffer, divides by the same overlap-add envelope, re-frames, windows, and
    applies the forward FFT with the 1x (DC/Nyquist) vs 2x (interior bins)
    scaling that the one-sided spectrum induces.
    """
    cfg = net.stft_config
    B = cfg.bins
    g_res = np.asarray(g_res, dtype=np.float64)
    K, length = g_res.shape
    if K != net.num_sources:
        raise ValueError("channel count mismatch")
    _, padded_len, left, _ = dsp._pad_layout(cfg, length)
    if frames != dsp.num_frames(cfg, length):
        raise ValueError("frame count inconsistent with gradient length")
    env = dsp._ola_envelope(cfg, frames)
    covered = env > dsp._ENV_FLOOR
    scale = np.full(B, 2.0 / cfg.n_fft)
    scale[0] = 1.0 / cfg.n_fft
    if cfg.n_fft % 2 == 0:
        scale[-1] = 1.0 / cfg.n_fft
    win = cfg.window
    g_out = np.zeros((frames, 2 * B * K), dtype=net.dtype)
    for k in range(K):
        buf = np.zeros(padded_len)
        buf[left : left + length] = g_res[k]
        buf[covered] /= env[covered]
        buf[~covered] = 0.0
        idx = np.arange(cfg.n_fft)[None, :] + cfg.hop * np.arange(frames)[:, None]
        g_spec = np.fft.rfft(buf[idx] * win[None, :], axis=1) * scale[None, :]
        gre = g_spec.real.copy()
        gim = g_spec.imag.copy()
        gim[:, 0] = 0.0
        if cfg.n_fft % 2 == 0:
            gim[:, -1] = 0.0
        g_out[:, 2 * k * B : (2 * k + 1) * B] = gre
        g_out[:, (2 * k + 1) * B : (2 * k + 2) * B] = gim
    return g_out


def net_forward(net, x_t, noise_cond, y, want_cache=False):
    """F(x_t, c, y): the K x M time-domain residual prediction."""
    x_t = as_stacked(x_t)
    feats = features_for(net, x_t, noise_cond, y)
    out, cache = mlp_forward(net, feats)
    res = output_to_residual(net, out, x_t.shape[1])
    if not np.all(np.isfinite(res)):
        raise RuntimeError("non-finite network output")
    if want_cache:
        return res, {"mlp": cache, "frames": out.shape[0]}
    return res


def net_backward(net, cache, g_res):
    """Parameter gradients given d(loss)/d(residual)."""
    g_out = residual_adjoint(net, g_res, cache["frames"])
    return mlp_backward(net, cache["mlp"], g_out)


def denoise(model, x_t, t, y, p):
    """Dispatch to the oracle, the network, or a callable test double.

    Neural path: x_t + L_t F(x_t, c(t), y) with the exact skip connection.
    Callables are invoked as model(x_t, t, y) and used for loss calibration
    and instrumentation (e.g. call counting) in tests.
    """
    if isinstance(model, GaussianOraclePrior):
        return oracle_denoise(model, x_t, t, y, p)
    if isinstance(model, NeuralDenoiser):
        cond = noise_conditioning(model, p, t)
        res = net_forward(model, x_t, cond, y)
        return as_stacked(x_t) + apply_Lt(res, p, t)
    if callable(model):
        return model(x_t, t, y)
    raise TypeError(f"unknown denoiser backend {type(model)!r}")


def probe_loss_and_grads(net, probes, p, want_grads=True):
    """Mean weighted denoising error over fixed probes, plus its gradients.

    Each probe is a dict with keys x_t, t, y, mu (precomputed, held fixed), so
    the loss is a deterministic function of the parameters: with
    r = L_t^{-1}(x_t - mu) + F the loss is mean ||r||^2 / (K M) and
    d(loss)/dF = 2 r / (K M) per probe, averaged over probes.

    With want_grads=False any model accepted by denoise() can be scored,
    which is how a trained network is compared against the closed-form
    oracle on a shared probe set.
    """
    if not want_grads and not isinstance(net, NeuralDenoiser):
        total = 0.0
        for probe in probes:
            x_t, t, y, mu = probe["x_t"], probe["t"], probe["y"], probe["mu"]
            d = denoise(net, x_t, t, y, p)
            r = apply_Lt_inverse(d - mu, p, t)
            total += float(np.sum(r * r)) / x_t.size
        return total / len(probes)
    total = 0.0
    grads = None
    for probe in probes:
        x_t, t, y, mu = probe["x_t"], probe["t"], probe["y"], probe["mu"]
        K, M = x_t.shape
        cond = noise_conditioning(net, p, t)
        res, cache = net_forward(net, x_t, cond, y, want_cache=True)
        r = apply_Lt_inverse(x_t - mu, p, t) + res
        total += float(np.sum(r * r)) / (K * M)
        if want_grads:
            g = net_backward(net, cache, 2.0 * r / (K * M))
            if grads is None:
                grads = g
            else:
                for name in grads:
                    grads[name] += g[name]
    n = len(probes)
    total /= n
    if want_grads:
        for name in grads:
            grads[name] /= n
        return total, grads
    return total


def make_probes(net, p, pairs, rng):
    """Freeze (x_t, t, y, mu) tuples from (s, y) pairs for grad checking."""
    probes = []
    for s, y in pairs:
        t = rng.uniform(p.t_eps, p.T)
        mu = marginal_mean(s, y, p, t)
        z = rng.standard_normal(s.shape)
        x_t = mu + apply_Lt(z, p, t)
        probes.append({"x_t": x_t, "t": t, "y": y, "mu": mu})
    return probes


def grad_check(net, probes, p, n_checks=200, step=1e-5, seed=0, mangle=None):
    """Max relative error between analytic and central-difference gradients.

    Samples >= n_checks parameter coordinates (all, if the net is smaller).
    ``mangle`` lets tests corrupt the analytic gradients to confirm the
    checker notices. Relative error uses |a - f| / max(|a| + |f|, 1e-8) so
    coordinates with genuinely zero gradient compare as equal.
    """
    if net.dtype is not np.float64:
        raise ValueError("grad_check requires double precision")
    _, grads = probe_loss_and_grads(net, probes, p)
    if mangle is not None:
        mangle(grads)
    names = sorted(net.params)
    sizes = np.array([net.params[n].size for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    n_checks = min(n_checks, total)
    flat_idx = rng.choice(total, size=n_checks, replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for fi in flat_idx:
        li = int(np.searchsorted(bounds, fi, side="right"))
        local = int(fi - (bounds[li - 1] if li else 0))
        tensor = net.params[names[li]]
        coord = np.unravel_index(local, tensor.shape)
        keep = tensor[coord]
        tensor[coord] = keep + step
        hi = probe_loss_and_grads(net, probes, p, want_grads=False)
        tensor[coord] = keep - step
        lo = probe_loss_and_grads(net, probes, p, want_grads=False)
        tensor[coord] = keep
        fd = (hi - lo) / (2.0 * step)
        an = float(grads[names[li]][coord])
        err = abs(an - fd) / max(abs(an) + abs(fd), 1e-8)
        worst = max(worst, err)
    return worst
