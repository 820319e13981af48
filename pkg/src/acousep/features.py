"""Spectral features: averaged periodogram, octave-band PSD / RMS, MFCC."""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import fft as sfft
from scipy import signal as sps

from .errors import ConfigurationError, ParameterError
from .signals import Label, Signal

LOG_FLOOR = 1e-10
DEFAULT_SEGMENT = 1024
DEFAULT_MEL_FILTERS = 26
DEFAULT_MEL_LOW_HZ = 20.0
MFCC_FIRST, MFCC_LAST = 2, 13  # 1-based, inclusive


class Method(str, enum.Enum):
    PSD9 = "psd"
    RMSPSD9 = "rms-psd"
    MFCC12 = "mfcc"

    @property
    def dimension(self) -> int:
        return 12 if self is Method.MFCC12 else 9


@dataclass(frozen=True)
class OctaveBand:
    low_hz: float
    center_hz: float
    high_hz: float

    def __post_init__(self):
        if not 0 < self.low_hz < self.center_hz < self.high_hz:
            raise ParameterError(f"band edges out of order: {self}")
        if abs(self.high_hz / self.low_hz - 2.0) > 2.0 * 0.002:
            raise ParameterError(f"band {self} is not an octave (high/low = {self.high_hz / self.low_hz:.4f})")


# Nine octave bands, 31.25 Hz to 8 kHz centers.
OCTAVE_BANDS: tuple[OctaveBand, ...] = (
    OctaveBand(22.09, 31.25, 44.2),
    OctaveBand(44.19, 62.5, 88.38),
    OctaveBand(88.38, 125.0, 176.77),
    OctaveBand(176.77, 250.0, 353.55),
    OctaveBand(353.55, 500.0, 707.10),
    OctaveBand(707.10, 1000.0, 1414.21),
    OctaveBand(1414.21, 2000.0, 2828.0),
    OctaveBand(2828.43, 4000.0, 5656.0),
    OctaveBand(5656.85, 8000.0, 11313.0),
)


@dataclass(frozen=True, eq=False)
class PSDEstimate:
    frequencies: np.ndarray
    density: np.ndarray

    @property
    def resolution(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    @property
    def total_power(self) -> float:
        return float(np.sum(self.density) * self.resolution)

    def band_mean(self, low: float, high: float) -> float:
        """Mean density over bins in ``[low, high]``; interpolated at the
        geometric center when the band is narrower than one bin."""
        inside = (self.frequencies >= low) & (self.frequencies <= high)
        if inside.any():
            return float(self.density[inside].mean())
        return float(np.interp(np.sqrt(low * high), self.frequencies, self.density))


def _samples(x) -> tuple[np.ndarray, int | None]:
    if isinstance(x, Signal):
        return x.samples, x.sample_rate
    return np.asarray(x, dtype=np.float64), None


def periodogram(
    signal: Signal,
    window: str = "hann",
    segment: int = DEFAULT_SEGMENT,
    overlap: float = 0.5,
) -> PSDEstimate:
    """One-sided Welch PSD estimate (averaged windowed periodograms).

    The averaged spectrum is rescaled so that its integral equals the
    signal's sample variance exactly; Welch averaging on its own only
    matches it in expectation.
    """
    if window != "hann":
        raise ParameterError(f"unsupported window {window!r}")
    x, rate = signal.samples, signal.sample_rate
    if segment < 2 or segment & (segment - 1):
        raise ParameterError(f"segment must be a power of two >= 2, got {segment}")
    if segment > x.size:
        raise ParameterError(f"signal of {x.size} samples is shorter than one {segment}-sample segment")
    if not 0.0 <= overlap < 1.0:
        raise ParameterError("overlap must lie in [0, 1)")
    freqs, density = sps.welch(
        x, fs=rate, window="hann", nperseg=segment, noverlap=int(overlap * segment),
        detrend="constant", scaling="density", return_onesided=True,
    )
    variance = float(np.var(x))
    total = float(np.sum(density) * (freqs[1] - freqs[0]))
    if total > 0.0 and variance > 0.0:
        density = density * (variance / total)
    else:
        density = np.zeros_like(density)
    return PSDEstimate(freqs, density)


def autocorrelation_psd(signal: Signal) -> PSDEstimate:
    """PSD as the Fourier transform of the biased sample autocorrelation.

    Direct O(L^2) route, kept as a cross-check for :func:`periodogram`
    (for a single rectangular segment the two coincide).
    """
    x = signal.samples - signal.samples.mean()
    n = x.size
    r = np.correlate(x, x, mode="full") / n  # lags -(n-1) .. n-1
    lags = np.arange(-(n - 1), n)
    freqs = np.fft.rfftfreq(n, d=1.0 / signal.sample_rate)
    # Evaluate the lag-domain transform on the DFT grid of an n-point record.
    phase = np.exp(-2j * np.pi * np.outer(np.arange(freqs.size), lags) / n)
    s = np.real(phase @ r) / signal.sample_rate
    s[1:] *= 2.0
    if n % 2 == 0:
        s[-1] /= 2.0
    return PSDEstimate(freqs, np.maximum(s, 0.0))


def _segment_for(n: int) -> int:
    seg = DEFAULT_SEGMENT
    while seg > n:
        seg //= 2
    return seg


@functools.lru_cache(maxsize=64)
def _band_sos(low: float, high: float, rate: int, order: int) -> np.ndarray:
    return sps.butter(order, [low, high], btype="bandpass", fs=rate, output="sos")


def check_bands(sample_rate: int, bands: Sequence[OctaveBand] = OCTAVE_BANDS) -> None:
    nyquist = sample_rate / 2.0
    for i, band in enumerate(bands, start=1):
        if band.high_hz >= nyquist:
            raise ConfigurationError(
                f"band {i} ({band.low_hz}-{band.high_hz} Hz) reaches the Nyquist frequency "
                f"{nyquist} Hz at sample rate {sample_rate} Hz"
            )


def octave_band_features(
    signal: Signal,
    bands: Sequence[OctaveBand] = OCTAVE_BANDS,
    order: int = 2,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-band mean PSD and RMS of the band-filtered signal.

    Each band uses a Butterworth bandpass (``order`` poles per edge, so the
    default is a 4th-order filter) applied forward only.
    """
    check_bands(signal.sample_rate, bands)
    x = signal.samples
    seg = _segment_for(x.size)
    psd = np.empty(len(bands))
    rms = np.empty(len(bands))
    for i, band in enumerate(bands):
        y = sps.sosfilt(_band_sos(band.low_hz, band.high_hz, signal.sample_rate, order), x)
        rms[i] = np.sqrt(np.mean(y * y))
        if seg >= 2:
            est = periodogram(Signal(y, signal.sample_rate), segment=seg)
            psd[i] = est.band_mean(band.low_hz, band.high_hz)
        else:
            psd[i] = 0.0
    return np.maximum(psd, 0.0), rms


# --------------------------------------------------------------------------
# Mel filter bank and MFCC
# --------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True, eq=False)
class MelFilterBank:
    sample_rate: int
    fft_size: int
    edge_hz: np.ndarray
    edge_bins: np.ndarray
    weights: np.ndarray = field(repr=False)

    @property
    def filter_count(self) -> int:
        return self.weights.shape[0]


def build_mel_bank(
    sample_rate: int,
    fft_size: int,
    filter_count: int = DEFAULT_MEL_FILTERS,
    f_low: float = DEFAULT_MEL_LOW_HZ,
    f_high: float | None = None,
) -> MelFilterBank:
    """Triangular filters on ``filter_count + 2`` mel-spaced edges.

    Edges are rounded down to FFT bins; filter m rises linearly from 0 at
    bin f(m-1) to 1 at f(m) and falls back to 0 at f(m+1).
    """
    if f_high is None:
        f_high = sample_rate / 2.0
    if filter_count < MFCC_LAST + 1:
        raise ParameterError(f"need at least {MFCC_LAST + 1} mel filters, got {filter_count}")
    if not 0 <= f_low < f_high <= sample_rate / 2.0:
        raise ParameterError(f"need 0 <= f_low < f_high <= {sample_rate / 2} Hz, got {f_low}, {f_high}")
    if fft_size < 2:
        raise ParameterError("fft_size must be >= 2")
    mels = np.linspace(hz_to_mel(f_low), hz_to_mel(f_high), filter_count + 2)
    edge_hz = mel_to_hz(mels)
    bins = np.floor((fft_size + 1) * edge_hz / sample_rate).astype(int)
    bins = np.minimum(bins, fft_size // 2)
    if np.any(np.diff(bins) <= 0):
        raise ParameterError(
            f"fft_size {fft_size} is too small to resolve {filter_count} mel filters "
            f"from {f_low} to {f_high} Hz (repeated edge bins)"
        )
    k = np.arange(fft_size // 2 + 1)
    weights = np.zeros((filter_count, k.size))
    for m in range(1, filter_count + 1):
        lo, mid, hi = bins[m - 1], bins[m], bins[m + 1]
        rise = (k >= lo) & (k <= mid)
        fall = (k >= mid) & (k <= hi)
        weights[m - 1, rise] = (k[rise] - lo) / (mid - lo)
        weights[m - 1, fall] = (hi - k[fall]) / (hi - mid)
    return MelFilterBank(int(sample_rate), int(fft_size), edge_hz, bins, weights)


@functools.lru_cache(maxsize=32)
def _default_bank(sample_rate: int, fft_size: int) -> MelFilterBank:
    return build_mel_bank(sample_rate, fft_size)


def mel_bank_for(signal: Signal) -> MelFilterBank:
    """Default bank whose FFT covers the whole signal in one frame."""
    fft_size = 1 << max(10, int(np.ceil(np.log2(len(signal)))))
    return _default_bank(signal.sample_rate, fft_size)


def mel_energies(signal: Signal, bank: MelFilterBank) -> np.ndarray:
    """Mel filter-bank energies per frame, shape (frames, filters)."""
    if signal.sample_rate != bank.sample_rate:
        raise ParameterError(f"bank built for {bank.sample_rate} Hz, signal is {signal.sample_rate} Hz")
    n = bank.fft_size
    x = signal.samples
    frames = max(1, int(np.ceil(x.size / n)))
    frames_2d = np.zeros((frames, n))
    for f in range(frames):
        # window only the samples present; the remainder is zero padding
        chunk = x[f * n:(f + 1) * n]
        frames_2d[f, :chunk.size] = chunk * sps.get_window("hann", chunk.size, fftbins=True)
    power = np.abs(np.fft.rfft(frames_2d, axis=1)) ** 2 / n
    return power @ bank.weights.T


def mfcc(signal: Signal, bank: MelFilterBank | None = None) -> np.ndarray:
    """Cepstral coefficients 2..13 (1-based) averaged over frames."""
    bank = bank or mel_bank_for(signal)
    energies = np.maximum(mel_energies(signal, bank), LOG_FLOOR)
    ceps = sfft.dct(np.log(energies), type=2, norm="ortho", axis=1)
    return ceps[:, MFCC_FIRST - 1:MFCC_LAST].mean(axis=0)


# --------------------------------------------------------------------------
# Feature vectors
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    method: Method
    label: int | None = None  # +1 drone, -1 non-drone, None when unknown
    block_length: int = 0
    source_class: Label = Label.UNKNOWN

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        method = Method(self.method)
        object.__setattr__(self, "method", method)
        if values.shape != (method.dimension,):
            raise ParameterError(f"{method.value} features must have {method.dimension} values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ParameterError("feature values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "source_class", Label(self.source_class))
        if self.label not in (None, 1, -1):
            raise ParameterError(f"label must be +1, -1 or None, got {self.label}")


def extract(signal: Signal, method: Method | str, label: int | None = None) -> FeatureVector:
    """Compute one feature family for ``signal``."""
    method = Method(method)
    if method is Method.MFCC12:
        values = mfcc(signal)
    else:
        psd, rms = octave_band_features(signal)
        values = psd if method is Method.PSD9 else rms
    return FeatureVector(values, method, label, len(signal), signal.label)


def extract_all(signal: Signal, methods: Sequence[Method | str], label: int | None = None) -> dict[Method, FeatureVector]:
    """Like :func:`extract` for several methods, sharing the band filtering."""
    methods = [Method(m) for m in methods]
    out = {}
    if Method.PSD9 in methods or Method.RMSPSD9 in methods:
        psd, rms = octave_band_features(signal)
        if Method.PSD9 in methods:
            out[Method.PSD9] = FeatureVector(psd, Method.PSD9, label, len(signal), signal.label)
        if Method.RMSPSD9 in methods:
            out[Method.RMSPSD9] = FeatureVector(rms, Method.RMSPSD9, label, len(signal), signal.label)
    if Method.MFCC12 in methods:
        out[Method.MFCC12] = FeatureVector(mfcc(signal), Method.MFCC12, label, len(signal), signal.label)
    return {m: out[m] for m in methods}
