import numpy as np
import pytest

from edsep import dsp


CFG = dsp.StftConfig()
SMALL = dsp.StftConfig(n_fft=64, hop=32)


def test_stft_config_defaults():
    assert CFG.n_fft == 510
    assert CFG.hop == 128
    assert CFG.sample_rate == 8000
    assert CFG.bins == 256


def test_stft_config_guards():
    with pytest.raises(ValueError):
        dsp.StftConfig(n_fft=64, hop=33)  # hop > n_fft/2 breaks overlap-add
    with pytest.raises(ValueError):
        dsp.StftConfig(n_fft=64, hop=0)


def test_window_squares_to_periodic_hann():
    w = SMALL.window
    n = SMALL.n_fft
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    np.testing.assert_allclose(w * w, hann, atol=1e-15)
    assert w[0] == 0.0


def test_num_frames():
    assert dsp.num_frames(SMALL, 64) == 3
    assert dsp.num_frames(SMALL, 65) == 1 + int(np.ceil(65 / 32))
    with pytest.raises(ValueError):
        dsp.num_frames(SMALL, 63)


def test_stft_shape(rng):
    x = rng.standard_normal(320)
    spec = dsp.stft(x, SMALL)
    assert spec.shape == (dsp.num_frames(SMALL, 320), SMALL.bins)
    assert spec.dtype == np.complex128
    stacked = dsp.stft(np.stack([x, -x]), SMALL)
    assert stacked.shape == (2, dsp.num_frames(SMALL, 320), SMALL.bins)
    np.testing.assert_allclose(stacked[1], -stacked[0], atol=0)


def test_istft_roundtrip_small(rng):
    for length in (64, 100, 320, 321, 1000):
        x = rng.standard_normal(length)
        back = dsp.istft(dsp.stft(x, SMALL), SMALL, length=length)
        np.testing.assert_allclose(back, x, atol=1e-7)


def test_istft_roundtrip_default_config(rng):
    x = rng.standard_normal(4000)
    back = dsp.istft(dsp.stft(x, CFG), CFG, length=4000)
    np.testing.assert_allclose(back, x, atol=1e-7)


def test_istft_default_length(rng):
    x = rng.standard_normal(320)
    spec = dsp.stft(x, SMALL)
    out = dsp.istft(spec, SMALL)
    assert out.shape[0] == (spec.shape[0] - 1) * SMALL.hop


def test_compress_decompress_roundtrip(rng):
    z = rng.standard_normal(100) + 1j * rng.standard_normal(100)
    z[0] = 0.0  # zero magnitude must survive
    back = dsp.decompress(dsp.compress(z))
    scale = np.abs(z)
    scale[scale == 0] = 1.0
    assert np.max(np.abs(back - z) / scale) < 1e-9
    assert back[0] == 0.0


def test_compress_values():
    # beta^-1 |x|^alpha with alpha=0.5, beta=0.15: |4| -> 2/0.15
    out = dsp.compress(np.array([4.0 + 0.0j]))
    np.testing.assert_allclose(out, [13.333333333333333 + 0.0j], rtol=1e-15)
    # phase preserved
    out = dsp.compress(np.array([0.0 + 4.0j]))
    np.testing.assert_allclose(out, [0.0 + 13.333333333333333j], atol=1e-15)


def test_compress_custom_exponent():
    out = dsp.compress(np.array([9.0 + 0.0j]), alpha=1.0, beta=0.5)
    np.testing.assert_allclose(out, [18.0 + 0.0j], rtol=1e-15)


def test_wav_roundtrip(tmp_path, rng):
    x = np.clip(rng.standard_normal(500) * 0.3, -0.999, 0.999)
    path = tmp_path / "a.wav"
    dsp.write_wav(path, x, 8000)
    back, rate = dsp.read_wav(path)
    assert rate == 8000
    assert back.dtype == np.float64
    assert np.max(np.abs(back - x)) <= 1.0 / 32768


def test_wav_clips_out_of_range(tmp_path):
    x = np.array([2.0, -2.0, 0.0])
    path = tmp_path / "clip.wav"
    dsp.write_wav(path, x, 8000)
    back, _ = dsp.read_wav(path)
    assert back[0] == 32767 / 32768
    assert back[1] == -1.0


def test_read_wav_error_types(tmp_path):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"RIFFxxxxWAVE")  # truncated header
    with pytest.raises(dsp.MalformedHeaderError):
        dsp.read_wav(bad)
    empty = tmp_path / "empty.wav"
    empty.write_bytes(b"")
    with pytest.raises(dsp.MalformedHeaderError):
        dsp.read_wav(empty)


def test_read_wav_rejects_stereo(tmp_path):
    import wave

    path = tmp_path / "stereo.wav"
    with wave.open(str(path), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(b"\x00\x00" * 20)
    with pytest.raises(dsp.ChannelCountError):
        dsp.read_wav(path)


def test_read_wav_rejects_wrong_width(tmp_path):
    import wave

    path = tmp_path / "w8.wav"
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(1)
        w.setframerate(8000)
        w.writeframes(b"\x00" * 10)
    with pytest.raises(dsp.UnsupportedEncodingError):
        dsp.read_wav(path)


def test_wav_errors_share_base(tmp_path):
    # callers can catch the family with one except clause
    assert issubclass(dsp.MalformedHeaderError, dsp.WavError)
    assert issubclass(dsp.ChannelCountError, dsp.WavError)
    assert issubclass(dsp.UnsupportedEncodingError, dsp.WavError)


def test_write_wav_rejects_nonfinite(tmp_path):
    with pytest.raises(ValueError):
        dsp.write_wav(tmp_path / "nan.wav", np.array([np.nan]), 8000)


def test_write_spectrogram(tmp_path, rng):
    x = rng.standard_normal(400)
    pgm = tmp_path / "s.pgm"
    csv = tmp_path / "s.csv"
    dsp.write_spectrogram(x, SMALL, pgm, csv)
    data = pgm.read_bytes()
    assert data.startswith(b"P5\n")
    header, rest = data.split(b"255\n", 1)
    dims = header.split(b"\n")[1].split()
    width, height = int(dims[0]), int(dims[1])
    assert width == dsp.num_frames(SMALL, 400)
    assert height == SMALL.bins
    assert len(rest) == width * height
    assert min(rest) == 0 and max(rest) == 255  # full dynamic range used
    rows = csv.read_text().splitlines()
    assert len(rows) == height  # one row per frequency bin, same layout as image
    assert all(len(r.split(",")) == width for r in rows)
    float(rows[0].split(",")[0])  # plain parseable floats
