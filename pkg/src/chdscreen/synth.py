"""Seeded synthetic PCG cohorts with known beat times and murmur labels.

Each patient gets four 15 s recordings (AV, PV, TV, MV). Heart sounds are
short decaying tone bursts; CHD patients additionally carry band-limited
systolic noise whose loudness depends on the auscultation site.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .audio_io import SITES, PatientEntry, PatientManifest, Recording, write_manifest, write_wav
from .dsp import design_butterworth_bandpass, filter_signal
from .exceptions import ConfigError, IoFailure

logger = logging.getLogger(__name__)

# name -> (min months, max months, min bpm, max bpm)
AGE_GROUPS: Dict[str, Tuple[int, int, float, float]] = {
    "infant": (1, 24, 110.0, 160.0),
    "child": (25, 144, 75.0, 120.0),
    "adolescent": (145, 192, 60.0, 100.0),
}
SITE_MURMUR_GAIN = {"AV": 1.0, "PV": 0.85, "TV": 0.7, "MV": 0.8}
MURMUR_BAND_HZ = (120.0, 350.0)


@dataclass
class SynthSpec:
    n_patients: int = 200
    chd_ratio: float = 0.6
    age_distribution: Dict[str, float] = field(
        default_factory=lambda: {"infant": 0.35, "child": 0.61, "adolescent": 0.04}
    )
    snr_db_range: Tuple[float, float] = (10.0, 25.0)
    murmur_amp_range: Tuple[float, float] = (0.15, 0.45)
    jitter_range: Tuple[float, float] = (0.02, 0.05)
    duration_s: float = 15.0
    sample_rate_hz: int = 4000
    seed: int = 42

    def __post_init__(self):
        if not 0.0 < self.chd_ratio < 1.0:
            raise ConfigError("chd_ratio must lie in (0, 1)")
        if self.n_patients < 2:
            raise ConfigError("need at least two patients")
        unknown = set(self.age_distribution) - set(AGE_GROUPS)
        if unknown:
            raise ConfigError(f"unknown age groups {sorted(unknown)}")
        if self.murmur_amp_range[0] < 0 or self.murmur_amp_range[1] < self.murmur_amp_range[0]:
            raise ConfigError("invalid murmur amplitude range")


def _add_burst(x: np.ndarray, fs: float, center: float, freq: float, rise_s: float, decay_s: float,
               phase: float, amp: float = 1.0) -> None:
    """Add an asymmetric-Gaussian tone burst in place; samples beyond 8 sigma are skipped."""
    lo = max(int(np.floor((center - 8 * rise_s) * fs)), 0)
    hi = min(int(np.ceil((center + 8 * decay_s) * fs)) + 1, len(x))
    if lo >= hi:
        return
    dt = np.arange(lo, hi) / fs - center
    sigma = np.where(dt < 0, rise_s, decay_s)
    x[lo:hi] += amp * np.exp(-0.5 * (dt / sigma) ** 2) * np.sin(2 * np.pi * freq * dt + phase)


def _beat_times(rng, rr_s: float, jitter: float, duration_s: float) -> np.ndarray:
    start = rng.uniform(0.1, 0.1 + rr_s)
    n_intervals = int((duration_s - 0.4 - start) / rr_s)
    rr = rr_s * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=n_intervals))
    # zero-mean jitter over the kept beats: mean NN equals the nominal interval
    rr += rr_s - rr.mean()
    return start + np.concatenate([[0.0], np.cumsum(rr)])


def systole_s(rr_s: float) -> float:
    """S1-to-S2 spacing for a given beat interval."""
    return 0.1 + 0.25 * rr_s


def generate_recording(
    rng: np.random.Generator,
    hr_bpm: float,
    murmur_amp: float,
    site: str,
    spec: SynthSpec,
    s1_freq: float,
    s2_freq: float,
    jitter: float,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """One clean-plus-noise waveform; returns ``(samples, beat_times_s, snr_db)``."""
    fs = spec.sample_rate_hz
    n = int(round(spec.duration_s * fs))
    t = np.arange(n) / fs
    rr_s = 60.0 / hr_bpm
    beats = _beat_times(rng, rr_s, jitter, spec.duration_s)
    sys_s = systole_s(rr_s)

    x = np.zeros(n)
    gate = np.zeros(n)
    s2_gain = 0.6 * rng.uniform(0.8, 1.1)
    for tb in beats:
        _add_burst(x, fs, tb, s1_freq, 0.005, 0.02, rng.uniform(0, 2 * np.pi))
        _add_burst(x, fs, tb + sys_s, s2_freq, 0.004, 0.015, rng.uniform(0, 2 * np.pi), s2_gain)
        lo, hi = tb + 0.05, tb + sys_s - 0.03
        i0, i1 = int(np.ceil(lo * fs)), min(int(np.ceil(hi * fs)), n)
        if i1 > i0:
            gate[i0:i1] = np.sin(np.pi * (t[i0:i1] - lo) / (hi - lo)) ** 2

    if murmur_amp > 0:
        band = design_butterworth_bandpass(4, *MURMUR_BAND_HZ, fs)
        noise = filter_signal(band, rng.standard_normal(n))
        noise /= np.sqrt(np.mean(noise**2))
        x += murmur_amp * SITE_MURMUR_GAIN[site] * gate * noise

    snr_db = rng.uniform(*spec.snr_db_range)
    noise_rms = np.sqrt(np.mean(x**2) / 10 ** (snr_db / 10))
    x += noise_rms * rng.standard_normal(n)
    x *= 0.9 / np.max(np.abs(x))
    return x, beats, snr_db


def generate_patient(
    label: str,
    age_group: str,
    seed,
    spec: Optional[SynthSpec] = None,
    patient_id: str = "",
    age_months: Optional[int] = None,
):
    """Four site recordings for one synthetic patient plus its ground truth.

    `seed` may be an int or a sequence of ints. Returns
    ``(recordings, truth)`` where `truth` holds the label, heart rate,
    murmur amplitude and per-site beat times.
    """
    spec = spec or SynthSpec()
    if age_group not in AGE_GROUPS:
        raise ConfigError(f"unknown age group {age_group!r}")
    rng = np.random.default_rng(seed)
    lo_m, hi_m, lo_hr, hi_hr = AGE_GROUPS[age_group]
    if age_months is None:
        age_months = int(rng.integers(lo_m, hi_m + 1))
    hr = float(rng.uniform(lo_hr, hi_hr))
    s1_freq = float(rng.uniform(35.0, 80.0))
    s2_freq = float(rng.uniform(50.0, 120.0))
    jitter = float(rng.uniform(*spec.jitter_range))
    murmur = float(rng.uniform(*spec.murmur_amp_range)) if label == "CHD" else 0.0

    recordings: List[Recording] = []
    truth_sites = {}
    for site in SITES:
        x, beats, snr = generate_recording(rng, hr, murmur, site, spec, s1_freq, s2_freq, jitter)
        recordings.append(Recording(x, spec.sample_rate_hz, patient_id, site))
        truth_sites[site] = {"beat_times_s": beats.tolist(), "snr_db": snr}
    truth = {
        "label": label,
        "age_group": age_group,
        "age_months": age_months,
        "hr_bpm": hr,
        "murmur_amp": murmur,
        "recordings": truth_sites,
    }
    return recordings, truth


def cohort_plan(spec: SynthSpec):
    """Deterministic per-patient (id, label, age group, age months, sex)."""
    rng = np.random.default_rng([spec.seed, 0])
    n = spec.n_patients
    n_chd = int(round(n * spec.chd_ratio))
    labels = np.array(["CHD"] * n_chd + ["NonCHD"] * (n - n_chd))[rng.permutation(n)]
    groups = list(spec.age_distribution)
    probs = np.array([spec.age_distribution[g] for g in groups], dtype=float)
    ages = rng.choice(len(groups), size=n, p=probs / probs.sum())
    sexes = rng.choice(["M", "F"], size=n, p=[0.6, 0.4])
    width = max(4, len(str(n)))
    plan = []
    for i in range(n):
        group = groups[ages[i]]
        lo_m, hi_m = AGE_GROUPS[group][:2]
        months = int(rng.integers(lo_m, hi_m + 1))
        plan.append((f"P{i + 1:0{width}d}", str(labels[i]), group, months, str(sexes[i])))
    return plan


def generate_dataset(spec: SynthSpec, out_dir) -> Tuple[PatientManifest, Path]:
    """Write WAVs, ``manifest.csv`` and ``truth.json`` under `out_dir`."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    try:
        wav_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"{out_dir}: {exc}") from exc

    entries = []
    truth_doc = {"spec": asdict(spec), "patients": {}}
    for i, (pid, label, group, months, sex) in enumerate(cohort_plan(spec)):
        recs, truth = generate_patient(label, group, [spec.seed, 1, i], spec, pid, months)
        paths = {}
        for rec in recs:
            path = wav_dir / f"{pid}_{rec.site}.wav"
            write_wav(rec, path)
            paths[rec.site] = path
        entries.append(PatientEntry(pid, months, sex, label, paths))
        truth_doc["patients"][pid] = truth
    manifest = PatientManifest(entries)
    write_manifest(manifest, out_dir / "manifest.csv")
    truth_path = out_dir / "truth.json"
    truth_path.write_text(json.dumps(truth_doc, indent=1) + "\n", encoding="utf-8")
    logger.info("wrote %d patients to %s", len(entries), out_dir)
    return manifest, truth_path
