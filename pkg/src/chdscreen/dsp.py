"""Signal primitives: Butterworth band-pass, z-scoring and the short-time power spectrum."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sps

from .exceptions import (
    ConstantSignal,
    EmptySignal,
    InvalidBand,
    InvalidConfig,
    SignalShorterThanWindow,
    TooShort,
    UnstableDesign,
)

FS_HZ = 4000
BAND_LOW_HZ = 25.0
BAND_HIGH_HZ = 400.0
FILTER_ORDER = 4


@dataclass(frozen=True)
class FilterCoefficients:
    """Cascade of biquads in second-order-section layout.

    Each row of `sections` is ``[b0, b1, b2, 1, a1, a2]``.
    """

    sections: np.ndarray
    order: int
    low_hz: float
    high_hz: float
    sample_rate_hz: float

    @property
    def design_spec(self) -> dict:
        return {
            "order": self.order,
            "low_hz": self.low_hz,
            "high_hz": self.high_hz,
            "sample_rate_hz": self.sample_rate_hz,
        }

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(sec[3:]) for sec in self.sections])

    def transfer_function(self):
        """Expanded numerator and denominator polynomials in z^-1."""
        b = np.array([1.0])
        a = np.array([1.0])
        for sec in self.sections:
            b = np.convolve(b, sec[:3])
            a = np.convolve(a, sec[3:])
        return b, a

    def gain_at(self, freq_hz) -> np.ndarray:
        """Magnitude response at the given frequencies."""
        w = np.exp(-2j * np.pi * np.asarray(freq_hz, dtype=float) / self.sample_rate_hz)
        h = np.ones_like(w)
        for sec in self.sections:
            h = h * (sec[0] + sec[1] * w + sec[2] * w**2) / (sec[3] + sec[4] * w + sec[5] * w**2)
        return np.abs(h)


def _bilinear(s: np.ndarray, fs: float) -> np.ndarray:
    return (2 * fs + s) / (2 * fs - s)


def design_butterworth_bandpass(
    order: int = FILTER_ORDER,
    low_hz: float = BAND_LOW_HZ,
    high_hz: float = BAND_HIGH_HZ,
    fs_hz: float = FS_HZ,
) -> FilterCoefficients:
    """Digital Butterworth band-pass of total order `order` (order/2 biquads).

    The order/2 analog low-pass prototype is shifted to a band-pass around
    the prewarped edges, mapped through the bilinear transform and scaled to
    unit gain at the geometric-mean frequency of the prewarped band.
    """
    if order < 2 or order % 2:
        raise InvalidBand(f"band-pass order must be a positive even integer, got {order}")
    if not (0 < low_hz < high_hz < fs_hz / 2):
        raise InvalidBand(f"need 0 < low < high < fs/2, got low={low_hz}, high={high_hz}, fs={fs_hz}")

    n = order // 2
    k = np.arange(1, n + 1)
    proto = np.exp(1j * np.pi * (2 * k + n - 1) / (2 * n))

    w_lo = 2 * fs_hz * np.tan(np.pi * low_hz / fs_hz)
    w_hi = 2 * fs_hz * np.tan(np.pi * high_hz / fs_hz)
    bw = w_hi - w_lo
    w0 = np.sqrt(w_lo * w_hi)

    half = proto * bw / 2
    root = np.sqrt(half**2 - w0**2 + 0j)
    analog = np.concatenate([half + root, half - root])
    poles = _bilinear(analog, fs_hz)

    upper = [p for p in poles if p.imag > 1e-12]
    real = sorted((p.real for p in poles if abs(p.imag) <= 1e-12), reverse=True)
    denominators = [[1.0, -2 * p.real, abs(p) ** 2] for p in sorted(upper, key=lambda p: np.angle(p))]
    for i in range(0, len(real), 2):
        p1, p2 = real[i], real[i + 1]
        denominators.append([1.0, -(p1 + p2), p1 * p2])
    if len(denominators) != n:
        raise UnstableDesign("pole pairing failed")

    sections = np.array([[1.0, 0.0, -1.0] + den for den in denominators])

    # unit gain at the centre of the band
    center_hz = fs_hz / np.pi * np.arctan(w0 / (2 * fs_hz))
    z1 = np.exp(-2j * np.pi * center_hz / fs_hz)
    per_section = []
    for sec in sections:
        h = (sec[0] + sec[1] * z1 + sec[2] * z1**2) / (sec[3] + sec[4] * z1 + sec[5] * z1**2)
        per_section.append(abs(h))
    sections[:, :3] /= np.array(per_section)[:, None]

    coeffs = FilterCoefficients(sections, order, float(low_hz), float(high_hz), float(fs_hz))
    if np.any(np.abs(coeffs.poles()) >= 1.0):
        raise UnstableDesign("designed filter has a pole on or outside the unit circle")
    return coeffs


def filter_signal(coeffs: FilterCoefficients, x) -> np.ndarray:
    """Causal single pass through the biquad cascade, zero initial state."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise EmptySignal("cannot filter an empty signal")
    return sps.sosfilt(coeffs.sections, x)


def zscore_normalize(x, min_std: float = 1e-12) -> np.ndarray:
    """Zero mean, unit sample standard deviation (ddof=1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise TooShort("z-scoring needs at least two samples")
    mu = x.mean()
    centered = x - mu
    sd = np.sqrt(np.sum(centered**2) / (x.size - 1))
    if not sd > min_std:
        raise ConstantSignal("signal has (near) zero variance")
    return centered / sd


@dataclass(frozen=True)
class StftConfig:
    win_len: int = 400
    hop: int = 200
    n_fft: int = 1024
    sample_rate_hz: float = FS_HZ
    window: str = "hamming"

    def __post_init__(self):
        if self.win_len < 2 or self.hop < 1 or self.n_fft < self.win_len:
            raise InvalidConfig(f"invalid STFT config {self}")
        if self.window != "hamming":
            raise InvalidConfig("only the Hamming window is supported")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def bin_freqs_hz(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.sample_rate_hz / self.n_fft

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.win_len:
            return 0
        return (n_samples - self.win_len) // self.hop + 1


def hamming(length: int) -> np.ndarray:
    n = np.arange(length)
    return 0.54 - 0.46 * np.cos(2 * np.pi * n / (length - 1))


@dataclass
class Spectrogram:
    """Power spectrogram; `frames` has shape (n_frames, n_bins)."""

    frames: np.ndarray
    bin_freqs_hz: np.ndarray
    frame_times_s: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def band(self, low_hz: float = BAND_LOW_HZ, high_hz: float = BAND_HIGH_HZ):
        """Return ``(freqs, power)`` restricted to bins inside ``[low_hz, high_hz]``."""
        mask = (self.bin_freqs_hz >= low_hz) & (self.bin_freqs_hz <= high_hz)
        return self.bin_freqs_hz[mask], self.frames[:, mask]


def frame_signal(x: np.ndarray, config: StftConfig) -> np.ndarray:
    """Hamming-windowed frames, shape (n_frames, win_len); trailing partial frame dropped."""
    frames = sliding_window_view(x, config.win_len)[:: config.hop]
    return frames * hamming(config.win_len)


def stft(x, config: Optional[StftConfig] = None) -> Spectrogram:
    """Unnormalized power spectrum |FFT|^2 of Hamming-windowed frames."""
    config = config or StftConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.size < config.win_len:
        raise SignalShorterThanWindow(f"signal of {x.size} samples is shorter than the {config.win_len}-sample window")
    frames = frame_signal(x, config)
    spec = np.fft.rfft(frames, n=config.n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    times = (np.arange(frames.shape[0]) * config.hop + config.win_len / 2) / config.sample_rate_hz
    return Spectrogram(power, config.bin_freqs_hz(), times, config)


def preprocess(x, coeffs: Optional[FilterCoefficients] = None) -> np.ndarray:
    """Band-pass filter then z-score, in that order."""
    coeffs = coeffs or default_bandpass()
    return zscore_normalize(filter_signal(coeffs, x))


_DEFAULT_BANDPASS: Optional[FilterCoefficients] = None


def default_bandpass() -> FilterCoefficients:
    global _DEFAULT_BANDPASS
    if _DEFAULT_BANDPASS is None:
        _DEFAULT_BANDPASS = design_butterworth_bandpass()
    return _DEFAULT_BANDPASS
