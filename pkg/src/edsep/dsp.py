"""STFT analysis/synthesis, magnitude compression, and WAV / spectrogram I/O.

The framing uses a square-root periodic Hann window for both analysis and
synthesis with zero-padded centering. Synthesis is normalized weighted
overlap-add: the output is divided by the accumulated squared-window envelope,
which makes reconstruction exact on the covered interior for any hop that
keeps the envelope positive (and both transform directions stay linear maps).

The compression transform remaps spectrogram magnitudes by

    compress(x)   = beta^-1 |x|^alpha e^{j angle x}
    decompress(x) = (beta |x|)^{1/alpha} e^{j angle x}

an exact mutual-inverse pair that preserves the phase; zero maps to zero.
"""

from __future__ import annotations

import functools
import math
import wave
from dataclasses import dataclass

import numpy as np

_ENV_FLOOR = 1e-10  # squared-window envelope below this is treated as uncovered


class WavError(ValueError):
    """Base class for WAV format problems."""


class MalformedHeaderError(WavError):
    """File is not a parseable RIFF/WAVE stream."""


class ChannelCountError(WavError):
    """WAV is not mono."""


class UnsupportedEncodingError(WavError):
    """WAV is not 16-bit uncompressed PCM."""


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 510
    hop: int = 128
    sample_rate: int = 8000

    def __post_init__(self):
        if self.n_fft < 2:
            raise ValueError("n_fft too small")
        if not 1 <= self.hop <= self.n_fft // 2:
            raise ValueError("need 1 <= hop <= n_fft/2 for full overlap coverage")
        if self.sample_rate < 1:
            raise ValueError("sample_rate must be positive")

    @property
    def bins(self):
        return self.n_fft // 2 + 1

    @property
    def window(self):
        """Square-root periodic Hann, shared by analysis and synthesis."""
        n = np.arange(self.n_fft)
        return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.n_fft))


def num_frames(cfg, length):
    """Frame count used for a signal of the given length (center-padded)."""
    if length < cfg.n_fft:
        raise ValueError(f"signal length {length} shorter than one frame ({cfg.n_fft})")
    return 1 + math.ceil(length / cfg.hop)


def _pad_layout(cfg, length):
    frames = num_frames(cfg, length)
    padded = (frames - 1) * cfg.hop + cfg.n_fft
    left = cfg.n_fft // 2
    right = padded - length - left
    return frames, padded, left, right


@functools.lru_cache(maxsize=32)
def _ola_envelope(cfg, frames):
    """Accumulated squared-window envelope over the padded support."""
    padded_len = (frames - 1) * cfg.hop + cfg.n_fft
    w2 = cfg.window**2
    env = np.zeros(padded_len)
    for k in range(frames):
        lo = k * cfg.hop
        env[lo : lo + cfg.n_fft] += w2
    env.setflags(write=False)
    return env


def stft(signal, cfg):
    """Complex spectrogram, shape (frames, bins) for 1-D input and
    (channels, frames, bins) for stacked (K, M) input."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 2:
        return np.stack([stft(ch, cfg) for ch in signal])
    if signal.ndim != 1:
        raise ValueError(f"signal must be 1-D or 2-D, got shape {signal.shape}")
    frames, _, left, right = _pad_layout(cfg, signal.shape[0])
    padded = np.pad(signal, (left, right))
    idx = np.arange(cfg.n_fft)[None, :] + cfg.hop * np.arange(frames)[:, None]
    return np.fft.rfft(padded[idx] * cfg.window[None, :], axis=1)


def istft(spec, cfg, length=None):
    """Inverse transform via normalized weighted overlap-add.

    length selects how many samples to return from the centered origin;
    default is (frames - 1) * hop, the largest length consistent with the
    frame count. Linear in spec for fixed (cfg, length).
    """
    spec = np.asarray(spec, dtype=np.complex128)
    if spec.ndim == 3:
        return np.stack([istft(ch, cfg, length) for ch in spec])
    if spec.ndim != 2:
        raise ValueError(f"spectrogram must be 2-D or 3-D, got shape {spec.shape}")
    frames, bins = spec.shape
    if bins != cfg.bins:
        raise ValueError(f"bin count {bins} != {cfg.bins} for n_fft={cfg.n_fft}")
    if length is None:
        length = (frames - 1) * cfg.hop
    win = cfg.window
    pieces = np.fft.irfft(spec, n=cfg.n_fft, axis=1) * win[None, :]
    padded_len = (frames - 1) * cfg.hop + cfg.n_fft
    buf = np.zeros(padded_len)
    for k in range(frames):
        lo = k * cfg.hop
        buf[lo : lo + cfg.n_fft] += pieces[k]
    env = _ola_envelope(cfg, frames)
    covered = env > _ENV_FLOOR
    buf[covered] /= env[covered]
    buf[~covered] = 0.0
    left = cfg.n_fft // 2
    if left + length > padded_len:
        raise ValueError(f"length {length} exceeds coverage of {frames} frames")
    return buf[left : left + length]


def compress(spec, alpha=0.5, beta=0.15):
    """Magnitude power-law compression; phase preserved, zero maps to zero."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    spec = np.asarray(spec, dtype=np.complex128)
    mag = np.abs(spec)
    out = np.zeros_like(spec)
    nz = mag > 0
    out[nz] = spec[nz] * (mag[nz] ** (alpha - 1.0) / beta)
    return out


def decompress(spec, alpha=0.5, beta=0.15):
    """Exact inverse of compress for the same (alpha, beta)."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    spec = np.asarray(spec, dtype=np.complex128)
    mag = np.abs(spec)
    out = np.zeros_like(spec)
    nz = mag > 0
    out[nz] = spec[nz] * ((beta * mag[nz]) ** (1.0 / alpha) / mag[nz])
    return out


def read_wav(path):
    """Read mono 16-bit PCM; returns (float64 signal in [-1, 1), sample_rate)."""
    try:
        with wave.open(str(path), "rb") as f:
            nch = f.getnchannels()
            width = f.getsampwidth()
            comp = f.getcomptype()
            rate = f.getframerate()
            n = f.getnframes()
            raw = f.readframes(n)
    except (wave.Error, EOFError) as e:
        raise MalformedHeaderError(f"{path}: {e}") from e
    if nch != 1:
        raise ChannelCountError(f"{path}: expected mono, got {nch} channels")
    if width != 2 or comp != "NONE":
        raise UnsupportedEncodingError(
            f"{path}: expected 16-bit PCM, got width={width} comptype={comp}"
        )
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


def write_wav(path, signal, sample_rate=8000):
    """Write mono 16-bit PCM with saturating rounding (x=+1.0 clamps to 32767)."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ValueError("write_wav expects a 1-D signal")
    if not np.all(np.isfinite(signal)):
        raise ValueError("signal contains non-finite samples")
    q = np.clip(np.rint(signal * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(q.tobytes())


def write_spectrogram(signal, cfg, pgm_path, csv_path):
    """Export a log-magnitude spectrogram as 8-bit PGM plus a raw-value CSV.

    Image rows run from the highest frequency bin (top) to DC (bottom),
    columns are frames; pixel values normalize the per-image log-magnitude
    range to [0, 255]. The CSV twin holds the unnormalized log10 magnitudes in
    the same row/column layout.
    """
    spec = stft(np.asarray(signal, dtype=np.float64), cfg)
    if spec.ndim != 2:
        raise ValueError("spectrogram export expects a single channel")
    logmag = np.log10(np.abs(spec) + 1e-10).T[::-1]  # (bins, frames), top = Nyquist
    lo, hi = logmag.min(), logmag.max()
    if hi > lo:
        pix = np.rint((logmag - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pix = np.zeros_like(logmag, dtype=np.uint8)
    h, w = pix.shape
    with open(pgm_path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pix.tobytes())
    with open(csv_path, "w", encoding="utf-8") as f:
        for row in logmag:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
