"""Heart-rate-variability and spectral-shape features of a preprocessed PCG."""

from __future__ import annotations

from dataclasses import astuple, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks

from .dsp import BAND_HIGH_HZ, BAND_LOW_HZ, FS_HZ, Spectrogram, StftConfig, stft
from .exceptions import (
    BandTooNarrow,
    ConfigError,
    NoBeatsDetected,
    SignalTooShort,
    TooFewBeats,
    ZeroPower,
)

LOG_FLOOR = 1e-10
TRIANGULAR_BIN_MS = 7.8125

# (upper age bound in months, min bpm, max bpm); the last band is open-ended
AGE_HR_BANDS: Tuple[Tuple[float, float, float], ...] = (
    (24, 100.0, 180.0),
    (144, 70.0, 140.0),
    (float("inf"), 60.0, 120.0),
)

HRV_NAMES = (
    "mean_nn_ms",
    "sdnn_ms",
    "rmssd_ms",
    "nn50_count",
    "pnn50_pct",
    "min_rr_ms",
    "max_rr_ms",
    "hrv_triangular_index",
)
SPECTRAL_NAMES = ("spectral_centroid_hz", "spectral_rolloff_hz", "spectral_contrast_nats")
FEATURE_NAMES = HRV_NAMES + SPECTRAL_NAMES


def heart_rate_range(age_months: float, bands=AGE_HR_BANDS) -> Tuple[float, float]:
    for upper, lo, hi in bands:
        if age_months <= upper:
            return lo, hi
    return bands[-1][1], bands[-1][2]


@dataclass
class BeatTimes:
    times_s: np.ndarray
    estimated_hr_bpm: float
    method_confidence: float


def shannon_envelope(x: np.ndarray, fs: float, smooth_s: float = 0.05) -> np.ndarray:
    """Shannon energy -x^2 ln x^2 of the peak-normalized signal, moving-average smoothed."""
    peak = np.max(np.abs(x))
    if peak == 0:
        return np.zeros_like(x)
    sq = (x / peak) ** 2
    energy = np.zeros_like(sq)
    nz = sq > 0
    energy[nz] = -sq[nz] * np.log(sq[nz])
    width = max(1, int(round(smooth_s * fs)))
    return np.convolve(energy, np.ones(width) / width, mode="same")


def _dominant_period(env: np.ndarray, fs: float, hr_lo: float, hr_hi: float) -> Tuple[float, float]:
    """Period (s) of the strongest envelope autocorrelation peak within the heart-rate band."""
    e = env - env.mean()
    n = len(e)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(e, nfft)
    ac = np.fft.irfft(spec.real**2 + spec.imag**2, nfft)[:n]
    if ac[0] <= 0:
        return 60.0 / ((hr_lo + hr_hi) / 2), 0.0
    ac = ac / ac[0]
    lag_lo = max(1, int(np.floor(60.0 / hr_hi * fs)))
    lag_hi = min(n - 2, int(np.ceil(60.0 / hr_lo * fs)))
    lag = lag_lo + int(np.argmax(ac[lag_lo:lag_hi + 1]))
    # parabolic refinement of the peak position
    y0, y1, y2 = ac[lag - 1], ac[lag], ac[lag + 1]
    denom = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / denom if denom < 0 else 0.0
    return (lag + shift) / fs, float(np.clip(y1, 0.0, 1.0))


def detect_beats(x, fs_hz: float = FS_HZ, age_months: float = 60, bands=AGE_HR_BANDS) -> BeatTimes:
    """Locate heart beats in a filtered, normalized PCG.

    The beat period comes from the envelope autocorrelation, searched only
    over the heart-rate range typical for the patient's age. Envelope peaks
    are then picked at least half a period apart, which keeps one dominant
    sound (normally S1) per cardiac cycle.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 2 * fs_hz:
        raise SignalTooShort(f"beat detection needs >= 2 s, got {len(x) / fs_hz:.2f} s")
    env = shannon_envelope(x, fs_hz)
    if not np.any(env > 0):
        raise NoBeatsDetected("signal is silent")

    hr_lo, hr_hi = heart_rate_range(age_months, bands)
    period, confidence = _dominant_period(env, fs_hz, hr_lo, hr_hi)
    peaks, props = find_peaks(env, distance=max(1, int(0.5 * period * fs_hz)), height=0.0)
    if len(peaks):
        heights = props["peak_heights"]
        peaks = peaks[heights >= 0.25 * np.percentile(heights, 90)]
    if len(peaks) < 3:
        raise NoBeatsDetected(f"only {len(peaks)} envelope peaks found")
    return BeatTimes(peaks / fs_hz, 60.0 / period, confidence)


def compute_hrv_from_intervals(nn_ms) -> np.ndarray:
    """The eight time-domain HRV metrics from NN intervals in milliseconds.

    Returns ``[MeanNN, SDNN, RMSSD, NN50, pNN50, minRR, maxRR, triangular index]``.
    SDNN is the sample (n-1) standard deviation; the triangular index uses
    7.8125 ms histogram bins.
    """
    nn = np.asarray(nn_ms, dtype=np.float64)
    if nn.size < 2:
        raise TooFewBeats(f"need at least 2 NN intervals (3 beats), got {nn.size}")
    diffs = np.diff(nn)
    nn50 = int(np.sum(np.abs(diffs) > 50.0))
    _, counts = np.unique(np.floor(nn / TRIANGULAR_BIN_MS), return_counts=True)
    return np.array(
        [
            nn.mean(),
            nn.std(ddof=1),
            np.sqrt(np.mean(diffs**2)),
            nn50,
            100.0 * nn50 / diffs.size,
            nn.min(),
            nn.max(),
            nn.size / counts.max(),
        ]
    )


def compute_hrv(beats) -> np.ndarray:
    times = beats.times_s if isinstance(beats, BeatTimes) else beats
    times = np.asarray(times, dtype=np.float64)
    if times.size < 3:
        raise TooFewBeats(f"need at least 3 beats, got {times.size}")
    return compute_hrv_from_intervals(np.diff(times) * 1000.0)


def _in_band(spec: Spectrogram, low_hz: float, high_hz: float):
    freqs, power = spec.band(low_hz, high_hz)
    totals = power.sum(axis=1)
    live = totals > 0
    if not np.any(live):
        raise ZeroPower("no in-band power")
    return freqs, power[live], totals[live]


def spectral_centroid(spec: Spectrogram, low_hz: float = BAND_LOW_HZ, high_hz: float = BAND_HIGH_HZ) -> float:
    freqs, power, totals = _in_band(spec, low_hz, high_hz)
    return float(np.mean(power @ freqs / totals))


def spectral_rolloff(
    spec: Spectrogram, pct: float = 0.85, low_hz: float = BAND_LOW_HZ, high_hz: float = BAND_HIGH_HZ
) -> float:
    """Mean over frames of the lowest in-band frequency holding `pct` of the frame's power."""
    if not 0.0 < pct < 1.0:
        raise ConfigError(f"roll-off fraction must lie in (0, 1), got {pct}")
    freqs, power, totals = _in_band(spec, low_hz, high_hz)
    cum = np.cumsum(power, axis=1)
    idx = np.argmax(cum >= pct * totals[:, None], axis=1)
    return float(np.mean(freqs[idx]))


def spectral_contrast(
    spec: Spectrogram,
    n_bands: int = 4,
    quantile: float = 0.2,
    low_hz: float = BAND_LOW_HZ,
    high_hz: float = BAND_HIGH_HZ,
) -> float:
    """Peak-to-valley log power ratio, averaged over log-spaced sub-bands and frames.

    Within each sub-band the contrast is ln(mean of the top `quantile` bin
    powers) - ln(mean of the bottom `quantile`), with a 1e-10 power floor.
    """
    if n_bands < 1:
        raise ConfigError("n_bands must be >= 1")
    freqs, power, _ = _in_band(spec, low_hz, high_hz)
    edges = np.geomspace(low_hz, high_hz, n_bands + 1)
    per_band = []
    for b in range(n_bands):
        upper = freqs <= edges[b + 1] if b == n_bands - 1 else freqs < edges[b + 1]
        sel = power[:, (freqs >= edges[b]) & upper]
        width = sel.shape[1]
        if width < 2:
            raise BandTooNarrow(f"sub-band {edges[b]:.1f}-{edges[b + 1]:.1f} Hz holds {width} FFT bin(s)")
        q = max(1, int(round(quantile * width)))
        s = np.sort(sel, axis=1)
        top = s[:, -q:].mean(axis=1)
        bottom = s[:, :q].mean(axis=1)
        per_band.append(np.log(np.maximum(top, LOG_FLOOR)) - np.log(np.maximum(bottom, LOG_FLOOR)))
    return float(np.mean(per_band))


@dataclass
class HandcraftedVector:
    mean_nn_ms: float
    sdnn_ms: float
    rmssd_ms: float
    nn50_count: float
    pnn50_pct: float
    min_rr_ms: float
    max_rr_ms: float
    hrv_triangular_index: float
    spectral_centroid_hz: float
    spectral_rolloff_hz: float
    spectral_contrast_nats: float
    quality_flag: bool = True

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self)[:11], dtype=np.float64)

    def __len__(self):
        return 11

    @classmethod
    def from_array(cls, values: Sequence[float], quality_flag: bool = True) -> "HandcraftedVector":
        if len(values) != 11:
            raise ValueError(f"expected 11 values, got {len(values)}")
        return cls(*(float(v) for v in values), quality_flag=quality_flag)



def extract_handcrafted(
    x,
    age_months: float,
    fs_hz: float = FS_HZ,
    spectrogram: Optional[Spectrogram] = None,
    rolloff_pct: float = 0.85,
    contrast_bands: int = 4,
    hrv_fill: Optional[Sequence[float]] = None,
) -> HandcraftedVector:
    """All 11 handcrafted features of a preprocessed recording.

    When no beats can be found, the HRV entries are taken from `hrv_fill`
    (typically training-set medians; NaN if not given) and `quality_flag`
    is cleared.
    """
    x = np.asarray(x, dtype=np.float64)
    spec = spectrogram if spectrogram is not None else stft(x, StftConfig(sample_rate_hz=fs_hz))
    spectral = [
        spectral_centroid(spec),
        spectral_rolloff(spec, rolloff_pct),
        spectral_contrast(spec, contrast_bands),
    ]
    try:
        hrv = compute_hrv(detect_beats(x, fs_hz, age_months))
        ok = True
    except (NoBeatsDetected, TooFewBeats):
        hrv = np.full(8, np.nan) if hrv_fill is None else np.asarray(hrv_fill, dtype=float)
        ok = False
    return HandcraftedVector.from_array(list(hrv) + spectral, quality_flag=ok)
