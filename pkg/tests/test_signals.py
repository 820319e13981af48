import math
import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from acousep.errors import FormatError, ParameterError
from acousep.signals import (
    Label,
    Signal,
    SourceSpec,
    builtin_spec,
    load_multichannel_wav,
    load_wav,
    store_multichannel_wav,
    store_wav,
    synthesize,
)


def test_drone_one_second_is_peak_normalized():
    spec = SourceSpec(Label.DRONE, fundamental_hz=200, harmonic_count=8, am_rate_hz=10, seed=7)
    sig = synthesize(spec, 1.0, 22050)
    assert len(sig) == 22050
    assert sig.sample_rate == 22050
    assert np.max(np.abs(sig.samples)) == pytest.approx(1.0, abs=1e-12)
    assert sig.label is Label.DRONE


def test_wind_centroid_is_low():
    sig = synthesize(SourceSpec(Label.WIND, noise_band=(20, 400), seed=3), 1.0, 22050)
    # Centroid from a plain FFT power spectrum, independent of the package.
    power = np.abs(np.fft.rfft(sig.samples)) ** 2
    freqs = np.fft.rfftfreq(len(sig), 1 / 22050)
    centroid = float(np.sum(freqs * power) / np.sum(power))
    assert centroid < 500


@pytest.mark.parametrize("duration", [0.0, -1.0])
def test_nonpositive_duration_rejected(duration):
    with pytest.raises(ParameterError):
        synthesize(builtin_spec("drone"), duration, 22050)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(label=Label.DRONE, fundamental_hz=None, harmonic_count=8),
        dict(label=Label.DRONE, fundamental_hz=200, harmonic_count=0),
        dict(label=Label.WIND, noise_band=None),
        dict(label=Label.WIND, noise_band=(400, 20)),
        dict(label=Label.UNKNOWN, noise_band=(20, 400)),
    ],
)
def test_invalid_spec_rejected(kwargs):
    with pytest.raises(ParameterError):
        synthesize(SourceSpec(**kwargs), 0.1, 22050)


def test_synthesize_is_deterministic():
    spec = builtin_spec("bird", seed=11)
    a = synthesize(spec, 0.2, 24000).samples
    b = synthesize(spec, 0.2, 24000).samples
    assert np.array_equal(a, b)
    c = synthesize(spec.with_seed(12), 0.2, 24000).samples
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("label", [lab for lab in Label if lab is not Label.UNKNOWN])
def test_builtin_classes_are_finite_and_non_gaussian(label):
    sig = synthesize(builtin_spec(label, seed=5), 10.0, 24000)
    assert np.all(np.isfinite(sig.samples))
    assert abs(stats.kurtosis(sig.samples)) >= 0.1


def test_spec_dict_round_trip():
    spec = builtin_spec("aeroplane", seed=4, fundamental_hz=95.0)
    assert SourceSpec.from_dict(spec.to_dict()) == spec


def test_signal_is_read_only():
    sig = Signal(np.zeros(10), 8000)
    with pytest.raises(ValueError):
        sig.samples[0] = 1.0


def test_ramp_round_trip(tmp_path):
    ramp = np.linspace(-1, 1 - 2 / 1000, 1000)
    store_wav(Signal(ramp, 24000, Label.DRONE), tmp_path / "ramp.wav")
    back = load_wav(tmp_path / "ramp.wav")
    assert back.sample_rate == 24000
    assert back.label is Label.UNKNOWN
    assert np.max(np.abs(back.samples - ramp)) <= 1 / 32768


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 0.9999, allow_nan=False), min_size=1, max_size=300))
def test_round_trip_quantization_bound(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("wav") / "x.wav"
    store_wav(Signal(values, 8000), path)
    assert np.max(np.abs(load_wav(path).samples - np.asarray(values))) <= 1 / 32768


def test_stereo_file_rejected(tmp_path):
    path = tmp_path / "stereo.wav"
    with wave.open(str(path), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(b"\x00\x00" * 200)
    with pytest.raises(FormatError) as info:
        load_wav(path)
    assert info.value.offset is not None


def test_truncated_and_foreign_files_rejected(tmp_path):
    good = tmp_path / "good.wav"
    store_wav(Signal(np.zeros(100), 8000), good)
    raw = good.read_bytes()
    (tmp_path / "short.wav").write_bytes(raw[:30])
    (tmp_path / "junk.wav").write_bytes(b"OggS" + raw[4:])
    for name in ("short.wav", "junk.wav"):
        with pytest.raises(FormatError) as info:
            load_wav(tmp_path / name)
        assert "offset" in str(info.value)


def test_unsupported_encoding_rejected(tmp_path):
    path = tmp_path / "pcm8.wav"
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(1)
        w.setframerate(8000)
        w.writeframes(bytes(range(100)))
    with pytest.raises(FormatError):
        load_wav(path)


def test_sine_from_stdlib_writer_peaks_at_440(tmp_path):
    # Written with the stdlib wave/struct modules only.
    rate, n = 22050, 22050
    path = tmp_path / "a440.wav"
    frames = b"".join(struct.pack("<h", int(round(16000 * math.sin(2 * math.pi * 440 * i / rate)))) for i in range(n))
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(frames)
    sig = load_wav(path)
    assert sig.sample_rate == rate
    from acousep.features import periodogram

    psd = periodogram(sig)
    peak = psd.frequencies[np.argmax(psd.density)]
    assert abs(peak - 440) <= psd.resolution


def test_multichannel_float_round_trip(tmp_path):
    data = np.random.default_rng(0).standard_normal((3, 500))
    store_multichannel_wav(data, 16000, tmp_path / "m.wav")
    back, rate = load_multichannel_wav(tmp_path / "m.wav")
    assert rate == 16000
    assert back.shape == (3, 500)
    assert np.allclose(back, data.astype(np.float32), atol=0)
