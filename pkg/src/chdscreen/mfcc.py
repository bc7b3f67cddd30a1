"""Mel-frequency cepstral coefficients with delta and delta-delta rows."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .dsp import BAND_HIGH_HZ, BAND_LOW_HZ, Spectrogram, StftConfig, stft
from .exceptions import BandTooNarrow, DataError, InvalidConfig, IoFailure

LOG_FLOOR = 1e-10
MFC_MAGIC = b"MFC1"


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MfccConfig:
    n_filters: int = 26
    f_min_hz: float = BAND_LOW_HZ
    f_max_hz: float = BAND_HIGH_HZ
    n_ceps: int = 13
    keep_c0: bool = True
    log_floor: float = LOG_FLOOR
    delta_window: int = 2
    stft: StftConfig = field(default_factory=StftConfig)

    @property
    def n_fft(self) -> int:
        return self.stft.n_fft

    @property
    def fs_hz(self) -> float:
        return self.stft.sample_rate_hz

    @property
    def n_rows(self) -> int:
        return 3 * self.n_ceps


@dataclass(frozen=True)
class MelFilterBank:
    weights: np.ndarray
    center_freqs_hz: np.ndarray
    edge_freqs_hz: np.ndarray
    edge_bins: np.ndarray


@lru_cache(maxsize=16)
def build_mel_filterbank(config: MfccConfig = MfccConfig()) -> MelFilterBank:
    """Triangular filters on the HTK mel scale, snapped to FFT bins.

    ``n_filters + 2`` points are equally spaced in mel between `f_min_hz`
    and `f_max_hz`; each filter rises from 0 at its left point to 1 at its
    centre bin and falls back to 0 at its right point.
    """
    n, fs, n_fft = config.n_filters, config.fs_hz, config.n_fft
    if n < 2:
        raise BandTooNarrow("need at least two mel filters")
    if not (0 <= config.f_min_hz < config.f_max_hz <= fs / 2):
        raise BandTooNarrow(f"invalid mel band {config.f_min_hz}..{config.f_max_hz} Hz")

    mel_points = np.linspace(hz_to_mel(config.f_min_hz), hz_to_mel(config.f_max_hz), n + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.rint(hz_points * n_fft / fs).astype(int)
    if np.any(np.diff(bins) <= 0):
        raise BandTooNarrow(f"{n} filters over {config.f_min_hz}-{config.f_max_hz} Hz collapse onto shared FFT bins")

    weights = np.zeros((n, n_fft // 2 + 1))
    k = np.arange(n_fft // 2 + 1)
    for i in range(n):
        left, center, right = bins[i], bins[i + 1], bins[i + 2]
        rising = (k >= left) & (k <= center)
        falling = (k > center) & (k <= right)
        weights[i, rising] = (k[rising] - left) / (center - left)
        weights[i, falling] = (right - k[falling]) / (right - center)
    weights.setflags(write=False)
    return MelFilterBank(weights, hz_points[1:-1], hz_points, bins)


@dataclass
class MfccMatrix:
    coeffs: np.ndarray
    frame_times_s: np.ndarray

    @property
    def shape(self):
        return self.coeffs.shape


def mfcc_from_spectrogram(spec: Spectrogram, config: MfccConfig = MfccConfig()) -> np.ndarray:
    """Static cepstra (n_ceps x n_frames) from a power spectrogram."""
    fb = build_mel_filterbank(config)
    energies = spec.frames @ fb.weights.T
    log_e = np.log(np.maximum(energies, config.log_floor))
    ceps = dct(log_e, type=2, axis=1, norm="ortho")
    start = 0 if config.keep_c0 else 1
    return ceps[:, start:start + config.n_ceps].T


def compute_mfcc(x, config: MfccConfig = MfccConfig()) -> MfccMatrix:
    spec = stft(x, config.stft)
    return MfccMatrix(mfcc_from_spectrogram(spec, config), spec.frame_times_s)


def delta_features(static, window: int = 2) -> np.ndarray:
    """Regression deltas along time with edge replication.

    d_t = sum_{n=1..N} n (c_{t+n} - c_{t-n}) / (2 sum n^2)
    """
    c = np.asarray(static, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] < 1:
        raise DataError(f"expected a (coefficients x frames) matrix, got {c.shape}")
    if window < 1:
        raise InvalidConfig("delta window must be >= 1")
    T = c.shape[1]
    padded = np.pad(c, ((0, 0), (window, window)), mode="edge")
    out = np.zeros_like(c)
    for n in range(1, window + 1):
        out += n * (padded[:, window + n:window + n + T] - padded[:, window - n:window - n + T])
    return out / (2 * sum(n * n for n in range(1, window + 1)))


def stack_with_deltas(static: np.ndarray, window: int = 2) -> np.ndarray:
    d1 = delta_features(static, window)
    d2 = delta_features(d1, window)
    return np.vstack([static, d1, d2])


def full_mfcc_stack(x, config: MfccConfig = MfccConfig()) -> MfccMatrix:
    """Rows: static cepstra, then deltas, then delta-deltas (39 x T by default)."""
    static = compute_mfcc(x, config)
    return MfccMatrix(stack_with_deltas(static.coeffs, config.delta_window), static.frame_times_s)


def write_mfc(matrix, path) -> None:
    """Binary cache: ``MFC1``, uint32 rows, cols, reserved=0, then row-major float32 (all little-endian)."""
    m = np.asarray(matrix.coeffs if isinstance(matrix, MfccMatrix) else matrix)
    rows, cols = m.shape
    try:
        with open(path, "wb") as fh:
            fh.write(MFC_MAGIC + struct.pack("<III", rows, cols, 0))
            fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def read_mfc(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if len(data) < 16 or data[:4] != MFC_MAGIC:
        raise DataError(f"{path}: not an MFC1 feature file")
    rows, cols, _ = struct.unpack("<III", data[4:16])
    body = data[16:]
    if len(body) != 4 * rows * cols:
        raise DataError(f"{path}: expected {rows}x{cols} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)
