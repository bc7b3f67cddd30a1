"""WAV input/output, dataset manifests and patient-wise splitting."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.io import wavfile

from .exceptions import (
    CorruptHeader,
    DataError,
    DuplicateSiteForPatient,
    EmptyManifest,
    InvalidConfig,
    IoFailure,
    MissingColumn,
    NotMono,
    RatioSumInvalid,
    SampleRateMismatch,
    TooFewPatients,
    UnknownLabel,
    UnknownSite,
    UnsupportedEncoding,
)

logger = logging.getLogger(__name__)

SAMPLE_RATE_HZ = 4000
SITES = ("AV", "PV", "TV", "MV")
LABELS = ("CHD", "NonCHD")
MANIFEST_COLUMNS = ("patient_id", "age_months", "sex", "label", "site", "path")

_LABEL_ALIASES = {
    "chd": "CHD",
    "1": "CHD",
    "nonchd": "NonCHD",
    "non-chd": "NonCHD",
    "non_chd": "NonCHD",
    "0": "NonCHD",
}
_SEX_ALIASES = {"m": "M", "male": "M", "f": "F", "female": "F", "": "unknown", "unknown": "unknown", "u": "unknown"}


def normalize_label(value: str) -> str:
    key = str(value).strip().lower()
    if key not in _LABEL_ALIASES:
        raise UnknownLabel(f"unknown label {value!r}; expected CHD or NonCHD")
    return _LABEL_ALIASES[key]


def normalize_site(value: str) -> str:
    site = str(value).strip().upper()
    if site not in SITES:
        raise UnknownSite(f"unknown auscultation site {value!r}; expected one of {SITES}")
    return site


@dataclass
class Recording:
    """A single mono PCG recording."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ
    patient_id: str = ""
    site: Optional[str] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise NotMono(f"expected 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate_hz <= 0:
            raise DataError("sample rate must be positive")
        if self.samples.size and (
            not np.all(np.isfinite(self.samples)) or np.max(np.abs(self.samples)) > 1.0
        ):
            raise DataError("samples must be finite and within [-1, 1]")
        if self.site is not None:
            self.site = normalize_site(self.site)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def _resample_linear(x: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    n_out = int(round(len(x) * rate_out / rate_in))
    t_in = np.arange(len(x)) / rate_in
    t_out = np.arange(n_out) / rate_out
    return np.interp(t_out, t_in, x)


def read_wav(
    path,
    patient_id: str = "",
    site: Optional[str] = None,
    expected_rate_hz: int = SAMPLE_RATE_HZ,
    resample: bool = False,
) -> Recording:
    """Read a mono PCM (8/16/24/32-bit integer) or float WAV file.

    Integer samples are scaled to [-1, 1] by dividing by ``2**(bits-1)``.
    A sample rate other than `expected_rate_hz` raises
    :class:`SampleRateMismatch` unless `resample` is set, in which case the
    signal is linearly interpolated to the expected rate.
    """
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    except ValueError as exc:
        msg = str(exc)
        if "format" in msg.lower() or "not supported" in msg.lower():
            raise UnsupportedEncoding(f"{path}: {msg}") from exc
        raise CorruptHeader(f"{path}: {msg}") from exc

    if data.ndim != 1:
        if data.ndim == 2 and data.shape[1] == 1:
            data = data[:, 0]
        else:
            raise NotMono(f"{path}: {data.shape[1]} channels")

    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy returns 24-bit data left-justified in int32
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncoding(f"{path}: sample dtype {data.dtype}")

    if rate != expected_rate_hz:
        if not resample:
            raise SampleRateMismatch(f"{path}: {rate} Hz, expected {expected_rate_hz} Hz")
        samples = _resample_linear(samples, rate, expected_rate_hz)
        rate = expected_rate_hz

    return Recording(samples=samples, sample_rate_hz=int(rate), patient_id=patient_id, site=site)


def write_wav(recording: Recording, path) -> None:
    """Write `recording` as 16-bit PCM mono, rounding to nearest with saturation."""
    ints = np.clip(np.rint(recording.samples * 32768.0), -32768, 32767).astype("<i2")
    try:
        wavfile.write(Path(path), int(recording.sample_rate_hz), ints)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


@dataclass
class PatientEntry:
    patient_id: str
    age_months: int
    sex: str
    label: str
    recordings: Dict[str, Path] = field(default_factory=dict)

    @property
    def y(self) -> int:
        return int(self.label == "CHD")


@dataclass
class PatientManifest:
    entries: List[PatientEntry]

    def __post_init__(self):
        ids = [e.patient_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate patient_id in manifest")
        paths = [p for e in self.entries for p in e.recordings.values()]
        if len(set(paths)) != len(paths):
            raise DataError("a recording path is referenced more than once")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def patient_ids(self) -> List[str]:
        return [e.patient_id for e in self.entries]

    def by_id(self) -> Dict[str, PatientEntry]:
        return {e.patient_id: e for e in self.entries}

    def labels(self) -> Dict[str, str]:
        return {e.patient_id: e.label for e in self.entries}

    def iter_recordings(self):
        """Yield ``(entry, site, path)`` in manifest order, sites in canonical order."""
        for entry in self.entries:
            for site in SITES:
                if site in entry.recordings:
                    yield entry, site, entry.recordings[site]

    def subset(self, patient_ids) -> "PatientManifest":
        keep = set(patient_ids)
        return PatientManifest([e for e in self.entries if e.patient_id in keep])


def load_manifest(path) -> PatientManifest:
    """Parse a manifest CSV with header ``patient_id,age_months,sex,label,site,path``.

    Lines starting with ``#`` are ignored. Relative recording paths are
    resolved against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(lines)
    header = reader.fieldnames or []
    missing = [c for c in MANIFEST_COLUMNS if c not in header]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")

    entries: Dict[str, PatientEntry] = {}
    for lineno, row in enumerate(reader, start=2):
        pid = row["patient_id"].strip()
        if not pid:
            raise DataError(f"{path}:{lineno}: empty patient_id")
        try:
            age = int(row["age_months"])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad age_months {row['age_months']!r}") from exc
        if age < 0:
            raise DataError(f"{path}:{lineno}: negative age_months")
        sex = _SEX_ALIASES.get(row["sex"].strip().lower())
        if sex is None:
            raise DataError(f"{path}:{lineno}: unknown sex {row['sex']!r}")
        label = normalize_label(row["label"])
        site = normalize_site(row["site"])
        rec_path = Path(row["path"].strip())
        if not rec_path.is_absolute():
            rec_path = base / rec_path

        entry = entries.get(pid)
        if entry is None:
            entry = entries[pid] = PatientEntry(pid, age, sex, label)
        elif (entry.age_months, entry.sex, entry.label) != (age, sex, label):
            raise DataError(f"{path}:{lineno}: inconsistent demographics for patient {pid}")
        if site in entry.recordings:
            raise DuplicateSiteForPatient(f"{path}:{lineno}: patient {pid} has two {site} recordings")
        entry.recordings[site] = rec_path

    return PatientManifest(list(entries.values()))


def write_manifest(manifest: PatientManifest, path, relative_to=None) -> None:
    path = Path(path)
    rel_base = Path(relative_to) if relative_to is not None else path.parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for entry, site, rec_path in manifest.iter_recordings():
            try:
                shown = Path(rec_path).relative_to(rel_base)
            except ValueError:
                shown = rec_path
            writer.writerow(
                [entry.patient_id, entry.age_months, entry.sex, entry.label, site, shown.as_posix()]
            )


@dataclass
class SplitAssignment:
    train: List[str]
    validation: List[str]
    test: List[str]
    seed: int
    ratios: Tuple[float, float, float]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "ratios": list(self.ratios),
            "train": list(self.train),
            "validation": list(self.validation),
            "test": list(self.test),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        return cls(
            train=list(d["train"]),
            validation=list(d["validation"]),
            test=list(d["test"]),
            seed=int(d["seed"]),
            ratios=tuple(d["ratios"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SplitAssignment":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def largest_remainder(n: int, ratios: Sequence[float]) -> List[int]:
    """Integer apportionment of `n` by `ratios`; ties go to the earlier index."""
    quotas = [n * r for r in ratios]
    counts = [math.floor(q + 1e-9) for q in quotas]
    short = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def _stratified_counts(label_sizes: Sequence[int], ratios: Sequence[float]) -> List[List[int]]:
    """Per-label split sizes whose column sums match the overall apportionment.

    Each cell is the floor or ceiling of its exact quota, so every label
    deviates from the global ratios by less than one patient per split.
    """
    totals = largest_remainder(sum(label_sizes), ratios)
    if len(label_sizes) == 1:
        return [totals]
    if len(label_sizes) != 2:
        raise ValueError("stratified split supports exactly two labels")

    def options(q):
        lo = math.floor(q + 1e-9)
        return (lo,) if abs(q - lo) < 1e-9 else (lo, lo + 1)

    first_q = [label_sizes[0] * r for r in ratios]
    second_q = [label_sizes[1] * r for r in ratios]
    best = None
    for row in itertools.product(*(options(q) for q in first_q)):
        if sum(row) != label_sizes[0]:
            continue
        other = [t - a for t, a in zip(totals, row)]
        if any(o not in options(q) for o, q in zip(other, second_q)):
            continue
        cost = sum((a - q) ** 2 for a, q in zip(row, first_q)) + sum(
            (b - q) ** 2 for b, q in zip(other, second_q)
        )
        if best is None or cost < best[0] - 1e-12:
            best = (cost, [list(row), other])
    if best is None:
        # no two-sided rounding exists; keep totals exact for the first label
        first = largest_remainder(label_sizes[0], ratios)
        return [first, [t - a for t, a in zip(totals, first)]]
    return best[1]


def _check_ratios(ratios) -> Tuple[float, ...]:
    ratios = tuple(float(r) for r in ratios)
    if any(not math.isfinite(r) or r <= 0 for r in ratios):
        raise RatioSumInvalid(f"ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise RatioSumInvalid(f"ratios must sum to 1, got {sum(ratios)!r}")
    return ratios


def split_patients(manifest: PatientManifest, ratios=(0.7, 0.2, 0.1), seed: int = 0) -> SplitAssignment:
    """Patient-wise, label-stratified train/validation/test split.

    Patients of each label are shuffled with a seeded generator and cut at
    cumulative boundaries. Split sizes use largest-remainder rounding, so 751
    patients at (0.7, 0.2, 0.1) give 526 / 150 / 75.
    """
    ratios = _check_ratios(ratios)
    if len(ratios) != 3:
        raise RatioSumInvalid("expected three ratios (train, validation, test)")
    if len(manifest) == 0:
        raise EmptyManifest("manifest has no patients")

    by_label = {lab: sorted(e.patient_id for e in manifest if e.label == lab) for lab in LABELS}
    present = [lab for lab in LABELS if by_label[lab]]
    counts = _stratified_counts([len(by_label[lab]) for lab in present], ratios)

    rng = np.random.default_rng(seed)
    parts: List[List[str]] = [[], [], []]
    for lab, row in zip(present, counts):
        ids = by_label[lab]
        shuffled = [ids[i] for i in rng.permutation(len(ids))]
        start = 0
        for s, size in enumerate(row):
            parts[s].extend(shuffled[start:start + size])
            start += size

    return SplitAssignment(
        train=sorted(parts[0]),
        validation=sorted(parts[1]),
        test=sorted(parts[2]),
        seed=int(seed),
        ratios=ratios,
    )


def kfold_patients(manifest: PatientManifest, k: int = 5, seed: int = 0) -> List[List[str]]:
    """Label-stratified patient folds; every patient lands in exactly one fold."""
    if k < 2:
        raise InvalidConfig("k must be at least 2")
    if len(manifest) < k:
        raise TooFewPatients(f"{len(manifest)} patients cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    folds: List[List[str]] = [[] for _ in range(k)]
    offset = 0
    for lab in LABELS:
        ids = sorted(e.patient_id for e in manifest if e.label == lab)
        for j, i in enumerate(rng.permutation(len(ids))):
            folds[(offset + j) % k].append(ids[i])
        offset += len(ids)
    return [sorted(f) for f in folds]
