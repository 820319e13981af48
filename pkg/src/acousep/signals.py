"""Synthetic source signals and mono WAV input/output.

Six parametric classes stand in for field recordings: three harmonic
classes (drone, aeroplane, bird) built from amplitude-modulated harmonic
series, and three noise classes (wind, rain, thunder) built from
band-limited noise under a log-normal gust envelope. Every generator is a
pure function of its :class:`SourceSpec`, so ground truth is reproducible.
"""

from __future__ import annotations

import dataclasses
import enum
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import FormatError, ParameterError

DEFAULT_SAMPLE_RATE = 24000
MIN_SAMPLE_RATE = 8000


class Label(str, enum.Enum):
    DRONE = "drone"
    AEROPLANE = "aeroplane"
    BIRD = "bird"
    WIND = "wind"
    RAIN = "rain"
    THUNDER = "thunder"
    UNKNOWN = "unknown"

    @property
    def is_drone(self) -> bool:
        return self is Label.DRONE


HARMONIC_CLASSES = frozenset({Label.DRONE, Label.AEROPLANE, Label.BIRD})
NOISE_CLASSES = frozenset({Label.WIND, Label.RAIN, Label.THUNDER})


@dataclass(frozen=True, eq=False)
class Signal:
    """A mono waveform with its sample rate and class label."""

    samples: np.ndarray
    sample_rate: int
    label: Label = Label.UNKNOWN

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ParameterError("signal samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("signal samples must be finite")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate < MIN_SAMPLE_RATE:
            raise ParameterError(
                f"sample_rate must be an integer >= {MIN_SAMPLE_RATE} Hz, got {self.sample_rate}"
            )
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "label", Label(self.label))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class SourceSpec:
    """Parameters of one synthetic source.

    Harmonic classes use ``fundamental_hz``, ``harmonic_count``,
    ``harmonic_rolloff`` (amplitude of harmonic k is ``k**-rolloff``) and an
    envelope ``(1 + am_depth * sin(2 pi am_rate_hz t))**envelope_power``; ``noise_band`` then shapes
    the background noise added at ``noise_level`` relative RMS. Noise
    classes use ``noise_band`` for the carrier and ``am_rate_hz`` /
    ``am_depth`` for the bandwidth and log-spread of the gust envelope.
    """

    label: Label
    fundamental_hz: float | None = None
    harmonic_count: int = 0
    noise_band: tuple[float, float] | None = None
    am_rate_hz: float = 10.0
    seed: int = 0
    am_depth: float = 0.8
    noise_level: float = 0.05
    harmonic_rolloff: float = 1.0
    envelope_power: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))
        if self.noise_band is not None:
            object.__setattr__(self, "noise_band", tuple(float(f) for f in self.noise_band))

    @property
    def is_harmonic(self) -> bool:
        return self.label in HARMONIC_CLASSES

    def with_seed(self, seed: int) -> "SourceSpec":
        return dataclasses.replace(self, seed=int(seed))

    def validate(self) -> None:
        if self.label is Label.UNKNOWN:
            raise ParameterError("cannot synthesize a source of unknown class")
        if self.is_harmonic:
            if self.fundamental_hz is None or not self.fundamental_hz > 0:
                raise ParameterError(f"{self.label.value}: fundamental_hz must be > 0")
            if self.harmonic_count < 1:
                raise ParameterError(f"{self.label.value}: harmonic_count must be >= 1")
            if not 0.0 <= self.am_depth <= 1.0:
                raise ParameterError("am_depth must lie in [0, 1] for harmonic classes")
            if self.noise_level < 0:
                raise ParameterError("noise_level must be non-negative")
            if not self.envelope_power > 0:
                raise ParameterError("envelope_power must be > 0")
        else:
            if self.noise_band is None:
                raise ParameterError(f"{self.label.value}: noise_band is required")
            if self.am_depth < 0:
                raise ParameterError("am_depth must be non-negative")
        if self.noise_band is not None:
            low, high = self.noise_band
            if not 0 < low < high:
                raise ParameterError(f"noise_band must satisfy 0 < low < high, got {self.noise_band}")
        if not self.am_rate_hz > 0:
            raise ParameterError("am_rate_hz must be > 0")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["label"] = self.label.value
        d["noise_band"] = list(self.noise_band) if self.noise_band is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SourceSpec":
        d = dict(d)
        if d.get("noise_band") is not None:
            d["noise_band"] = tuple(d["noise_band"])
        return cls(**d)


_BUILTIN = {
    Label.DRONE: dict(fundamental_hz=200.0, harmonic_count=8, am_rate_hz=10.0, am_depth=0.9,
                      noise_band=(100.0, 4000.0), noise_level=0.05),
    Label.AEROPLANE: dict(fundamental_hz=110.0, harmonic_count=16, am_rate_hz=7.0, am_depth=1.0,
                          harmonic_rolloff=0.7, noise_band=(300.0, 3000.0), noise_level=0.2),
    Label.BIRD: dict(fundamental_hz=3200.0, harmonic_count=3, am_rate_hz=12.0, am_depth=1.0,
                     harmonic_rolloff=2.0, envelope_power=6.0, noise_band=(1000.0, 8000.0),
                     noise_level=0.02),
    Label.WIND: dict(noise_band=(20.0, 400.0), am_rate_hz=12.0, am_depth=1.3),
    Label.RAIN: dict(noise_band=(2000.0, 8000.0), am_rate_hz=40.0, am_depth=1.0),
    Label.THUNDER: dict(noise_band=(20.0, 120.0), am_rate_hz=30.0, am_depth=1.8),
}


def builtin_spec(label: Label | str, seed: int = 0, **overrides) -> SourceSpec:
    """Default :class:`SourceSpec` for one of the six built-in classes."""
    label = Label(label)
    if label not in _BUILTIN:
        raise ParameterError(f"no built-in spec for class {label.value!r}")
    params = dict(_BUILTIN[label])
    params.update(overrides)
    return SourceSpec(label=label, seed=seed, **params)


def _bandpass_noise(rng: np.random.Generator, n: int, band: tuple[float, float], rate: int) -> np.ndarray:
    nyq = rate / 2.0
    low, high = band
    high = min(high, 0.95 * nyq)
    if low >= high:
        raise ParameterError(f"noise_band {band} lies above the Nyquist frequency {nyq} Hz")
    sos = sps.butter(4, [low, high], btype="bandpass", fs=rate, output="sos")
    # Run-in discards the filter's start-up transient.
    pad = min(4 * n, int(4 * rate / low) + 1)
    x = sps.sosfilt(sos, rng.standard_normal(n + pad))[pad:]
    return x / np.std(x)


def _gust_envelope(rng: np.random.Generator, n: int, cutoff: float, rate: int, spread: float) -> np.ndarray:
    sos = sps.butter(2, min(cutoff, 0.45 * rate), btype="lowpass", fs=rate, output="sos")
    pad = min(4 * n, int(4 * rate / cutoff) + 1)
    slow = sps.sosfilt(sos, rng.standard_normal(n + pad))[pad:]
    slow /= np.std(slow)
    return np.exp(spread * slow)


def synthesize(spec: SourceSpec, duration_s: float, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Signal:
    """Generate ``duration_s`` seconds of the source described by ``spec``.

    The output is peak-normalized to 1 and depends only on the arguments.
    """
    spec.validate()
    if not duration_s > 0:
        raise ParameterError(f"duration_s must be > 0, got {duration_s}")
    if int(sample_rate) != sample_rate or sample_rate < MIN_SAMPLE_RATE:
        raise ParameterError(f"sample_rate must be an integer >= {MIN_SAMPLE_RATE} Hz")
    n = int(round(duration_s * sample_rate))
    if n < 1:
        raise ParameterError("duration too short for a single sample")

    rng = np.random.default_rng(spec.seed)
    t = np.arange(n) / sample_rate

    if spec.is_harmonic:
        ks = np.arange(1, spec.harmonic_count + 1)
        ks = ks[ks * spec.fundamental_hz < 0.45 * sample_rate]
        if ks.size == 0:
            raise ParameterError("fundamental_hz lies above the usable band for this sample rate")
        phases = rng.uniform(0, 2 * np.pi, ks.size)
        amps = ks.astype(float) ** -spec.harmonic_rolloff
        carrier = np.zeros(n)
        for k, a, ph in zip(ks, amps, phases):
            carrier += a * np.sin(2 * np.pi * k * spec.fundamental_hz * t + ph)
        env = 1.0 + spec.am_depth * np.sin(2 * np.pi * spec.am_rate_hz * t + rng.uniform(0, 2 * np.pi))
        env = env ** spec.envelope_power
        x = carrier * env
        if spec.noise_level > 0:
            band = spec.noise_band or (20.0, 0.45 * sample_rate)
            x = x + spec.noise_level * np.std(x) * _bandpass_noise(rng, n, band, sample_rate)
    else:
        x = _bandpass_noise(rng, n, spec.noise_band, sample_rate)
        x = x * _gust_envelope(rng, n, spec.am_rate_hz, sample_rate, spec.am_depth)

    peak = np.max(np.abs(x))
    if peak > 0:
        x = x / peak
    return Signal(x, sample_rate, spec.label)


# --------------------------------------------------------------------------
# WAV input/output
# --------------------------------------------------------------------------

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class _WavData:
    channels: int
    sample_rate: int
    data: np.ndarray  # (frames, channels) float64


def _read_wav(path: str | Path) -> _WavData:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError("file too short for a RIFF header", len(raw))
    if raw[0:4] != b"RIFF":
        raise FormatError("missing RIFF signature", 0)
    if raw[8:12] != b"WAVE":
        raise FormatError("RIFF form type is not WAVE", 8)

    fmt = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = pos + 8
        if body + size > len(raw):
            if cid == b"data" and fmt is not None:
                raise FormatError(f"data chunk declares {size} bytes but file is truncated", len(raw))
            raise FormatError(f"chunk {cid!r} runs past end of file", pos)
        if cid == b"fmt ":
            if size < 16:
                raise FormatError("fmt chunk shorter than 16 bytes", pos)
            tag, channels, rate, _, align, bits = struct.unpack_from("<HHIIHH", raw, body)
            if tag == _EXTENSIBLE:
                if size < 40:
                    raise FormatError("extensible fmt chunk shorter than 40 bytes", pos)
                (tag,) = struct.unpack_from("<H", raw, body + 24)
            fmt = (tag, channels, rate, align, bits, body)
        elif cid == b"data":
            if fmt is None:
                raise FormatError("data chunk precedes fmt chunk", pos)
            tag, channels, rate, align, bits, fmt_pos = fmt
            if channels < 1:
                raise FormatError("fmt chunk declares zero channels", fmt_pos + 2)
            if tag == _PCM and bits == 16:
                dtype = np.dtype("<i2")
                scale = 1.0 / 32768.0
            elif tag == _IEEE_FLOAT and bits == 32:
                dtype = np.dtype("<f4")
                scale = 1.0
            else:
                raise FormatError(f"unsupported encoding (format tag {tag}, {bits} bits)", fmt_pos)
            if size % (dtype.itemsize * channels):
                raise FormatError("data chunk size is not a whole number of frames", pos + 4)
            data = np.frombuffer(raw, dtype=dtype, count=size // dtype.itemsize, offset=body)
            data = data.astype(np.float64).reshape(-1, channels) * scale
            return _WavData(channels, rate, data)
        pos = body + size + (size & 1)
    if fmt is None:
        raise FormatError("no fmt chunk found", pos)
    raise FormatError("no data chunk found", pos)


def load_wav(path: str | Path) -> Signal:
    """Read a mono PCM16 or float32 WAV file. The label is set to unknown."""
    wav = _read_wav(path)
    if wav.channels != 1:
        # channel count lives at byte 22 of a canonical header
        raise FormatError(f"expected a mono file, found {wav.channels} channels", 22)
    if wav.data.shape[0] == 0:
        raise FormatError("data chunk holds no samples", 44)
    return Signal(wav.data[:, 0], wav.sample_rate, Label.UNKNOWN)


def store_wav(signal: Signal, path: str | Path) -> None:
    """Write ``signal`` as mono 16-bit PCM, clipping to [-1, 1)."""
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate)
        w.writeframes(pcm.tobytes())


def load_multichannel_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read any supported WAV as a (channels, frames) array plus sample rate."""
    wav = _read_wav(path)
    return np.ascontiguousarray(wav.data.T), wav.sample_rate


def store_multichannel_wav(data: np.ndarray, sample_rate: int, path: str | Path) -> None:
    """Write a (channels, frames) array as 32-bit float WAV.

    Float storage keeps mixtures exact enough for unmixing and avoids
    clipping, since mixed amplitudes routinely exceed 1.
    """
    data = np.asarray(data, dtype="<f4")
    channels, frames = data.shape
    payload = np.ascontiguousarray(data.T).tobytes()
    header = b"RIFF" + struct.pack("<I", 4 + 24 + 8 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, _IEEE_FLOAT, channels, sample_rate,
                                    sample_rate * channels * 4, channels * 4, 32)
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)
