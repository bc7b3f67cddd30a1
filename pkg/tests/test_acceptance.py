"""Acceptance suite: one PASS/FAIL line per primary criterion, printed in the terminal summary."""

import contextlib
import io
import json
import time
from pathlib import Path

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from chdscreen import network as nn
from chdscreen.audio_io import SplitAssignment, kfold_patients, load_manifest, split_patients
from chdscreen.cli import main
from chdscreen.dsp import design_butterworth_bandpass, filter_signal, zscore_normalize
from chdscreen.handcrafted import compute_hrv_from_intervals, detect_beats
from chdscreen.metrics import AT_LEAST_ONE, AVERAGE_PROB, MAJORITY, aggregate_patient, roc_auroc
from chdscreen.mfcc import compute_mfcc
from chdscreen.selection import mann_whitney_u
from conftest import ACCEPTANCE_LINES
from oracles import auroc_pairs_ref, mfcc_ref, mw_exact_p_ref, sine_gain_db, u_pairs_ref
from test_audio_io import dummy_manifest
from test_handcrafted import click_train, nearest_errors
from test_network import gradient_errors

FS = 4000


def record(name, passed, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    assert passed, f"{name}: {detail}"


def run_cli(*argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main([str(a) for a in argv])
    assert code == 0, f"chdscreen {argv[0]} exited with {code}"
    return json.loads(buf.getvalue())


def test_mfcc_oracle_equivalence():
    rng = np.random.default_rng(100)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(FS) * rng.uniform(0.01, 10.0)
        worst = max(worst, float(np.max(np.abs(compute_mfcc(x).coeffs - mfcc_ref(x)))))
    elapsed = time.perf_counter() - t0
    record(
        "MFCC oracle equivalence",
        worst < 1e-6 and elapsed < 60.0,
        f"max |diff| {worst:.2e} (< 1e-6) over 100 signals in {elapsed:.1f} s (< 60 s)",
    )


def test_butterworth_response():
    bp = design_butterworth_bandpass(4, 25, 400, FS)
    gains = {f: sine_gain_db(lambda x: filter_signal(bp, x), f) for f in (25, 100, 400)}
    targets = {25: (-3.01, 0.5), 100: (0.0, 0.1), 400: (-3.01, 0.5)}
    ok = all(abs(gains[f] - m) <= tol for f, (m, tol) in targets.items())
    dc = float(np.max(np.abs(filter_signal(bp, np.ones(4 * FS))[-FS:])))
    record(
        "Butterworth response",
        ok and dc < 1e-6,
        ", ".join(f"{f} Hz {gains[f]:+.3f} dB" for f in gains) + f"; DC residual {dc:.1e} (< 1e-6)",
    )


def test_gradient_fidelity():
    t0 = time.perf_counter()
    errors, skipped = gradient_errors(nn.ModelConfig(), 240, seed=3)
    elapsed = time.perf_counter() - t0
    record(
        "Gradient fidelity",
        len(errors) >= 200 and errors.max() < 1e-4 and elapsed < 30.0,
        f"max rel err {errors.max():.2e} (< 1e-4) over {len(errors)} params, batch 4, "
        f"{skipped} ReLU-crossing draws replaced, {elapsed:.1f} s (< 30 s)",
    )


def test_mann_whitney_exactness():
    rng = np.random.default_rng(500)
    worst, complement_ok, cases = 0.0, True, 0
    while cases < 500:
        n_a = int(rng.integers(1, 13))
        n_b = int(rng.integers(1, 15 - n_a))
        pooled = rng.permutation(rng.standard_normal(n_a + n_b))
        a, b = pooled[:n_a], pooled[n_a:]
        res = mann_whitney_u(a, b)
        worst = max(worst, abs(res.p_value - mw_exact_p_ref(a, b)))
        complement_ok &= res.U + mann_whitney_u(b, a).U == n_a * n_b and res.U == u_pairs_ref(a, b)
        cases += 1
    record(
        "Mann-Whitney exactness",
        worst < 1e-9 and complement_ok,
        f"max |p - enumeration| {worst:.1e} (< 1e-9) over {cases} tie-free cases, U_a + U_b = n_a n_b: {complement_ok}",
    )


def test_auroc_u_identity():
    rng = np.random.default_rng(1000)
    worst = 0.0
    for _ in range(1000):
        n1, n0 = int(rng.integers(1, 30)), int(rng.integers(1, 30))
        scores = rng.integers(0, 8, n1 + n0).astype(float) / 7.0
        labels = np.r_[np.ones(n1), np.zeros(n0)]
        _, auroc = roc_auroc(scores, labels)
        u = mann_whitney_u(scores[:n1], scores[n1:]).U
        worst = max(worst, abs(auroc - u / (n1 * n0)), abs(auroc - auroc_pairs_ref(scores, labels)))
    record("AUROC/U identity", worst <= 1e-12, f"max |auroc - U/(n1 n0)| {worst:.1e} (<= 1e-12) over 1000 tied sets")


def test_aggregation_hand_checks():
    p = [0.9, 0.2, 0.2, 0.2]
    alo, maj, avg = (aggregate_patient(p, m) for m in (AT_LEAST_ONE, MAJORITY, AVERAGE_PROB))
    example = alo[1] == "CHD" and maj[1] == "NonCHD" and avg[1] == "NonCHD" and abs(avg[0] - 0.375) < 1e-12
    rng = np.random.default_rng(10_000)
    violations = 0
    for _ in range(10_000):
        q = rng.uniform(size=rng.integers(1, 9))
        if aggregate_patient(q, MAJORITY)[1] == "CHD" and aggregate_patient(q, AT_LEAST_ONE)[1] != "CHD":
            violations += 1
    record(
        "Aggregation hand-checks",
        example and violations == 0,
        f"example AtLeastOne={alo[1]} Majority={maj[1]} AverageProb={avg[0]:.3f}->{avg[1]}; "
        f"dominance violations {violations}/10000",
    )


@pytest.fixture(scope="module")
def end_to_end(tmp_path_factory):
    """The full CLI pipeline at seed 42 plus the murmur-free negative control, single-threaded."""
    root = tmp_path_factory.mktemp("e2e")
    timings = {}
    with threadpool_limits(1):
        t0 = time.perf_counter()
        run_cli("synth", "--seed", 42, "--n-patients", 200, "--chd-ratio", 0.6, "--out", root / "data")
        run_cli("featurize", "--seed", 42, "--manifest", root / "data" / "manifest.csv", "--out", root / "features")
        train = run_cli("train", "--seed", 42, "--features", root / "features", "--out", root / "model")
        report = run_cli(
            "evaluate", "--seed", 42, "--features", root / "features", "--model", root / "model",
            "--aggregate", "AverageProb",
        )
        timings["pipeline"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        run_cli("synth", "--seed", 42, "--n-patients", 200, "--murmur-amp", 0, "--out", root / "null_data")
        run_cli("featurize", "--seed", 42, "--manifest", root / "null_data" / "manifest.csv", "--out", root / "null_features")
        null_cv = run_cli("cv", "--seed", 42, "--features", root / "null_features", "--k", 5)
        timings["negative_control"] = time.perf_counter() - t0
    return {"root": root, "train": train, "report": report, "null_cv": null_cv, "timings": timings}


def test_synthetic_end_to_end(end_to_end):
    report, t = end_to_end["report"], end_to_end["timings"]
    null_auroc = end_to_end["null_cv"]["pooled_out_of_fold"]["auroc"]
    total = t["pipeline"] + t["negative_control"]
    split = end_to_end["train"]["split"]
    record(
        "Synthetic end-to-end",
        report["auroc"] >= 0.90 and report["accuracy"] >= 0.85 and abs(null_auroc - 0.5) <= 0.08 and total <= 600,
        f"test AUROC {report['auroc']:.3f} (>= 0.90), accuracy {report['accuracy']:.3f} (>= 0.85) on "
        f"{split['test']} patients; negative-control pooled 5-fold AUROC {null_auroc:.3f} (0.5 +- 0.08); "
        f"runtime {t['pipeline']:.0f} s + {t['negative_control']:.0f} s = {total:.0f} s (<= 600 s)",
    )


def test_predict_latency(end_to_end):
    root = end_to_end["root"]
    split = SplitAssignment.load(root / "model" / "split.json")
    by_id = load_manifest(root / "data" / "manifest.csv").by_id()
    latencies = []
    with threadpool_limits(1):
        for pid in split.test[:5]:
            e = by_id[pid]
            out = run_cli("predict", "--model", root / "model", "--age-months", e.age_months, *e.recordings.values())
            latencies += [f["latency_ms"] for f in out["files"]]
    mean = float(np.mean(latencies))
    record(
        "Latency",
        mean <= 440.0,
        f"mean {mean:.1f} ms, max {max(latencies):.1f} ms per 15 s recording over {len(latencies)} files "
        f"(<= 440 ms; stretch <= 100 ms {'met' if mean <= 100 else 'missed'})",
    )


def test_hrv_exactness():
    v = compute_hrv_from_intervals([400, 500, 600])
    exact = v.tolist() == [500.0, 100.0, 100.0, 2.0, 100.0, 400.0, 600.0, 3.0]
    x, truth = click_train(bpm=120.0)
    beats = detect_beats(zscore_normalize(x), FS, age_months=120)
    worst = float(np.max(nearest_errors(beats.times_s, truth)))
    ok = exact and len(beats.times_s) == len(truth) and worst <= 0.010
    record(
        "HRV exactness",
        ok,
        f"[400,500,600] ms -> MeanNN {v[0]:g} SDNN {v[1]:g} RMSSD {v[2]:g} NN50 {v[3]:g} pNN50 {v[4]:g} "
        f"TI {v[7]:g} exact: {exact}; 120 bpm click train {len(beats.times_s)}/{len(truth)} beats, "
        f"max error {worst * 1000:.2f} ms (<= 10 ms)",
    )


def test_split_and_cv_hygiene():
    m = dummy_manifest(473, 278)
    s = split_patients(m, (0.7, 0.2, 0.1), seed=0)
    sizes = (len(s.train), len(s.validation), len(s.test))
    folds = kfold_patients(m, 5, seed=0)
    held = sorted(p for f in folds for p in f)
    once = held == sorted(m.patient_ids)
    again = split_patients(m, (0.7, 0.2, 0.1), seed=0).to_dict() == s.to_dict() and kfold_patients(m, 5, 0) == folds
    record(
        "Split/CV hygiene",
        sizes == (526, 150, 75) and once and again,
        f"751 patients -> {sizes[0]}/{sizes[1]}/{sizes[2]} (526/150/75); every patient held out once: {once}; "
        f"rerun identical: {again}",
    )


def _tree_bytes(root: Path):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_determinism_suite(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"model": {"stem_channels": 8, "branch_channels": 8, "hidden_dense": 16},
                               "train": {"batch_size": 16, "max_epochs": 4}}))
    common = ("--config", cfg, "--seed", 11)
    for run in ("a", "b"):
        run_cli("synth", *common, "--n-patients", 12, "--out", tmp_path / run / "data")
    # both feature runs read the same WAVs so the copied manifests list the same paths
    data = tmp_path / "a" / "data" / "manifest.csv"
    for run in ("a", "b"):
        d = tmp_path / run
        run_cli("featurize", *common, "--manifest", data, "--out", d / "features")
        run_cli("train", *common, "--features", d / "features", "--out", d / "model")
        run_cli("evaluate", *common, "--features", d / "features", "--model", d / "model",
                "--aggregate", "all", "--out", d / "eval")
    results = {}
    for stage in ("data", "features", "model", "eval"):
        a, b = _tree_bytes(tmp_path / "a" / stage), _tree_bytes(tmp_path / "b" / stage)
        results[stage] = (len(a), a == b and len(a) > 0)
    ok = all(same for _, same in results.values())
    record(
        "Determinism suite",
        ok,
        ", ".join(f"{stage} {n} files {'identical' if same else 'DIFFER'}" for stage, (n, same) in results.items()),
    )

