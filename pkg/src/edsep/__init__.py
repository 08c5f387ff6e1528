"""Diffusion-based single-channel source separation at desk scale.

The package implements a linear mean-reverting diffusion over stacked source
signals whose marginals are available in closed form, a denoiser abstraction
with an exactly solvable Gaussian oracle backend and a small trainable network
with hand-written gradients, denoising-score-matching training with a
permutation-invariant boundary branch, stochastic / probability-flow-ODE /
reverse-SDE samplers, STFT-domain feature plumbing, synthetic datasets, and
SI-SDR evaluation.
"""

__version__ = "0.1.0"

from . import data, denoise, dsp, metrics, mixalg, sample, sde, train  # noqa: F401
