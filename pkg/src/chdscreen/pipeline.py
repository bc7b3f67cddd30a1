"""Recording-level featurization, the on-disk feature cache and sklearn transformers."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .audio_io import PatientManifest, read_wav
from .dsp import FilterCoefficients, design_butterworth_bandpass, preprocess, stft
from .exceptions import CHDScreenError, DataError, IoFailure
from .handcrafted import FEATURE_NAMES, HRV_NAMES, HandcraftedVector, extract_handcrafted
from .mfcc import MfccConfig, mfcc_from_spectrogram, read_mfc, stack_with_deltas, write_mfc

logger = logging.getLogger(__name__)

HANDCRAFTED_CSV = "handcrafted.csv"
MFCC_DIR = "mfcc"


@dataclass
class FeatureBundle:
    mfcc: np.ndarray
    handcrafted: HandcraftedVector
    patient_id: str = ""
    site: Optional[str] = None


@dataclass(frozen=True)
class FeatureConfig:
    filter_order: int = 4
    low_hz: float = 25.0
    high_hz: float = 400.0
    mfcc: MfccConfig = MfccConfig()
    rolloff_pct: float = 0.85
    contrast_bands: int = 4

    def bandpass(self) -> FilterCoefficients:
        return _bandpass(self.filter_order, self.low_hz, self.high_hz, self.mfcc.fs_hz)


_FILTERS: Dict[tuple, FilterCoefficients] = {}


def _bandpass(order, low, high, fs) -> FilterCoefficients:
    key = (order, low, high, fs)
    if key not in _FILTERS:
        _FILTERS[key] = design_butterworth_bandpass(order, low, high, fs)
    return _FILTERS[key]


def featurize_signal(
    samples,
    age_months: float,
    config: FeatureConfig = FeatureConfig(),
    patient_id: str = "",
    site: Optional[str] = None,
) -> FeatureBundle:
    """Filter, z-score, then compute the 39 x T MFCC stack and the 11 handcrafted features."""
    x = preprocess(samples, config.bandpass())
    spec = stft(x, config.mfcc.stft)
    static = mfcc_from_spectrogram(spec, config.mfcc)
    mfcc = stack_with_deltas(static, config.mfcc.delta_window)
    hand = extract_handcrafted(
        x,
        age_months,
        fs_hz=config.mfcc.fs_hz,
        spectrogram=spec,
        rolloff_pct=config.rolloff_pct,
        contrast_bands=config.contrast_bands,
    )
    return FeatureBundle(mfcc, hand, patient_id, site)


def mfc_path(cache_dir, patient_id: str, site: str) -> Path:
    return Path(cache_dir) / MFCC_DIR / f"{patient_id}_{site}.mfc"


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def write_handcrafted_csv(rows: Iterable[FeatureBundle], path) -> None:
    """``patient_id,site,quality_flag,`` followed by the 11 feature columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "site", "quality_flag", *FEATURE_NAMES])
        for b in rows:
            w.writerow([b.patient_id, b.site, int(b.handcrafted.quality_flag), *map(_fmt, b.handcrafted.as_array())])


def read_handcrafted_csv(path) -> Dict[Tuple[str, str], HandcraftedVector]:
    out = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    with fh:
        for row in csv.DictReader(fh):
            values = [float(row[name]) for name in FEATURE_NAMES]
            out[(row["patient_id"], row["site"])] = HandcraftedVector.from_array(
                values, quality_flag=bool(int(row["quality_flag"]))
            )
    return out


def featurize_manifest(
    manifest: PatientManifest,
    out_dir,
    config: FeatureConfig = FeatureConfig(),
) -> Tuple[List[FeatureBundle], List[Tuple[Path, str]]]:
    """Featurize every recording and write the cache; returns bundles and per-file errors."""
    out_dir = Path(out_dir)
    (out_dir / MFCC_DIR).mkdir(parents=True, exist_ok=True)
    bundles, errors = [], []
    for entry, site, path in manifest.iter_recordings():
        try:
            rec = read_wav(path, entry.patient_id, site)
            bundle = featurize_signal(rec.samples, entry.age_months, config, entry.patient_id, site)
        except (CHDScreenError, OSError) as exc:
            errors.append((Path(path), str(exc)))
            logger.error("%s: %s", path, exc)
            continue
        write_mfc(bundle.mfcc, mfc_path(out_dir, entry.patient_id, site))
        bundles.append(bundle)
    write_handcrafted_csv(bundles, out_dir / HANDCRAFTED_CSV)
    return bundles, errors


class FeatureCache:
    """Read access to a featurize output directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.handcrafted = read_handcrafted_csv(self.directory / HANDCRAFTED_CSV)

    def keys(self):
        return list(self.handcrafted)

    def mfcc(self, patient_id: str, site: str) -> np.ndarray:
        return read_mfc(mfc_path(self.directory, patient_id, site))

    def assemble(self, manifest: PatientManifest, patient_ids: Optional[Sequence[str]] = None):
        """Stack cached features for the given patients (manifest order, canonical site order).

        Returns ``(mfcc (n, rows, T), handcrafted (n, 11), y (n,), keys)``.
        """
        wanted = None if patient_ids is None else set(patient_ids)
        mfccs, hands, ys, keys = [], [], [], []
        for entry, site, _ in manifest.iter_recordings():
            if wanted is not None and entry.patient_id not in wanted:
                continue
            key = (entry.patient_id, site)
            if key not in self.handcrafted:
                continue
            mfccs.append(self.mfcc(*key))
            hands.append(self.handcrafted[key].as_array())
            ys.append(entry.y)
            keys.append(key)
        if not keys:
            return np.zeros((0, 39, 0)), np.zeros((0, len(FEATURE_NAMES))), np.zeros(0, dtype=np.int64), []
        if len({m.shape for m in mfccs}) != 1:
            raise DataError("cached MFCC matrices differ in shape; recordings must share one duration")
        return np.stack(mfccs), np.vstack(hands), np.array(ys, dtype=np.int64), keys


class PCGPreprocessor(TransformerMixin, BaseEstimator):
    """Band-pass filter followed by z-scoring, applied to each signal in X."""

    def __init__(self, order: int = 4, low_hz: float = 25.0, high_hz: float = 400.0, sample_rate_hz: float = 4000):
        self.order = order
        self.low_hz = low_hz
        self.high_hz = high_hz
        self.sample_rate_hz = sample_rate_hz

    def fit(self, X, y=None):
        self.coeffs_ = design_butterworth_bandpass(self.order, self.low_hz, self.high_hz, self.sample_rate_hz)
        return self

    def transform(self, X):
        check_is_fitted(self, "coeffs_")
        out = [preprocess(x, self.coeffs_) for x in X]
        return np.stack(out) if len({len(o) for o in out}) == 1 else out


class MFCCTransformer(TransformerMixin, BaseEstimator):
    """Preprocessed signals -> (n, 3 * n_ceps, T) MFCC stacks."""

    def __init__(self, n_filters: int = 26, n_ceps: int = 13, keep_c0: bool = True, delta_window: int = 2):
        self.n_filters = n_filters
        self.n_ceps = n_ceps
        self.keep_c0 = keep_c0
        self.delta_window = delta_window

    def fit(self, X, y=None):
        self.config_ = MfccConfig(
            n_filters=self.n_filters, n_ceps=self.n_ceps, keep_c0=self.keep_c0, delta_window=self.delta_window
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        out = []
        for x in X:
            static = mfcc_from_spectrogram(stft(x, self.config_.stft), self.config_)
            out.append(stack_with_deltas(static, self.delta_window))
        return np.stack(out)


class HandcraftedTransformer(TransformerMixin, BaseEstimator):
    """Preprocessed signals -> (n, 11) handcrafted features.

    ``fit`` records the median of each HRV feature over recordings where
    beats were found; ``transform`` uses those medians when detection fails.
    Ages are passed through `ages_months` (one per signal, or a scalar).
    """

    def __init__(self, sample_rate_hz: float = 4000, rolloff_pct: float = 0.85, contrast_bands: int = 4):
        self.sample_rate_hz = sample_rate_hz
        self.rolloff_pct = rolloff_pct
        self.contrast_bands = contrast_bands

    def _extract(self, X, ages_months, fill=None):
        ages = np.broadcast_to(np.asarray(60 if ages_months is None else ages_months, dtype=float), (len(X),))
        return [
            extract_handcrafted(
                x, a, self.sample_rate_hz, None, self.rolloff_pct, self.contrast_bands, hrv_fill=fill
            )
            for x, a in zip(X, ages)
        ]

    def fit(self, X, y=None, ages_months=None):
        rows = np.array([v.as_array() for v in self._extract(X, ages_months)])
        hrv = rows[:, : len(HRV_NAMES)]
        with np.errstate(all="ignore"):
            med = np.nanmedian(hrv, axis=0)
        self.hrv_median_ = np.where(np.isfinite(med), med, 0.0)
        self.n_features_in_ = 1
        return self

    def transform(self, X, ages_months=None):
        check_is_fitted(self, "hrv_median_")
        vecs = self._extract(X, ages_months, fill=self.hrv_median_)
        self.quality_flags_ = np.array([v.quality_flag for v in vecs])
        return np.array([v.as_array() for v in vecs])

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURE_NAMES, dtype=object)
