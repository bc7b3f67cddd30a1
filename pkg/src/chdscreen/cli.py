"""Command-line entry point: ``chdscreen <command> [options]``.

Results go to stdout as JSON, logs to stderr. Exit status is 0 on success,
1 for data errors (unreadable or invalid inputs) and 2 for configuration
errors.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .audio_io import PatientManifest, SplitAssignment, load_manifest, read_wav, split_patients, write_manifest
from .dsp import StftConfig
from .estimator import FusionCNNClassifier
from .evaluation import DEFAULT_ABLATION, ablate, cross_validate, fit_on_ids, recording_probs
from .exceptions import CHDScreenError, CheckpointMismatch, ConfigError, InvalidConfig
from .handcrafted import FEATURE_NAMES
from .metrics import METHODS, aggregate_patient, evaluate_patients
from .mfcc import MfccConfig
from .pipeline import FeatureCache, FeatureConfig, featurize_manifest, featurize_signal
from .selection import FeatureTable, select_features
from .synth import SynthSpec, generate_dataset

logger = logging.getLogger("chdscreen")

DEFAULT_CONFIG = {
    "seed": 0,
    "filter": {"order": 4, "low_hz": 25.0, "high_hz": 400.0},
    "mfcc": {
        "n_filters": 26,
        "f_min_hz": 25.0,
        "f_max_hz": 400.0,
        "n_ceps": 13,
        "keep_c0": True,
        "delta_window": 2,
        "win_len": 400,
        "hop": 200,
        "n_fft": 1024,
    },
    "handcrafted": {"rolloff_pct": 0.85, "contrast_bands": 4},
    "selection": {"alpha": 0.05},
    "model": {
        "in_rows": 39,
        "stem_channels": 32,
        "stem_kernel": 3,
        "branch_channels": 32,
        "branch_kernels": [3, 5, 7],
        "hidden_dense": 64,
    },
    "train": {
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "batch_size": 32,
        "max_epochs": 50,
        "patience": 10,
    },
    "split": {"ratios": [0.7, 0.2, 0.1]},
    "evaluation": {"aggregate": "AverageProb", "threshold": 0.5, "k": 5},
    "synth": {
        "n_patients": 200,
        "chd_ratio": 0.6,
        "age_distribution": {"infant": 0.35, "child": 0.61, "adolescent": 0.04},
        "snr_db_range": [10.0, 25.0],
        "murmur_amp_range": [0.15, 0.45],
        "jitter_range": [0.02, 0.05],
        "duration_s": 15.0,
    },
}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise InvalidConfig(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and key != "age_distribution":
            if not isinstance(value, dict):
                raise InvalidConfig(f"config key {where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def check_config(cfg: dict) -> None:
    """Cross-section consistency checks."""
    if cfg["model"]["in_rows"] != 3 * cfg["mfcc"]["n_ceps"]:
        raise InvalidConfig(
            f"model.in_rows={cfg['model']['in_rows']} but mfcc.n_ceps={cfg['mfcc']['n_ceps']} yields "
            f"{3 * cfg['mfcc']['n_ceps']} rows"
        )
    if cfg["evaluation"]["aggregate"] not in METHODS:
        raise InvalidConfig(f"evaluation.aggregate must be one of {METHODS}")
    feature_config(cfg)


def load_config(path: Optional[str], seed: Optional[int] = None) -> dict:
    """Defaults, overlaid by the JSON file at `path` (created with defaults if missing), then by `seed`."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        p = Path(path)
        if p.exists():
            try:
                doc = json.loads(p.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise InvalidConfig(f"{p}: {exc}") from exc
            if not isinstance(doc, dict):
                raise InvalidConfig(f"{p}: expected a JSON object")
            cfg = _merge(cfg, doc)
        else:
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
            logger.info("wrote default config to %s", p)
    if seed is not None:
        cfg["seed"] = int(seed)
    check_config(cfg)
    return cfg


def feature_config(cfg: dict) -> FeatureConfig:
    m = cfg["mfcc"]
    try:
        stft = StftConfig(win_len=m["win_len"], hop=m["hop"], n_fft=m["n_fft"])
        mfcc = MfccConfig(
            n_filters=m["n_filters"],
            f_min_hz=m["f_min_hz"],
            f_max_hz=m["f_max_hz"],
            n_ceps=m["n_ceps"],
            keep_c0=m["keep_c0"],
            delta_window=m["delta_window"],
            stft=stft,
        )
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from exc
    f = cfg["filter"]
    return FeatureConfig(
        filter_order=f["order"],
        low_hz=f["low_hz"],
        high_hz=f["high_hz"],
        mfcc=mfcc,
        rolloff_pct=cfg["handcrafted"]["rolloff_pct"],
        contrast_bands=cfg["handcrafted"]["contrast_bands"],
    )


def estimator_params(cfg: dict) -> dict:
    m, t = cfg["model"], cfg["train"]
    return {
        "stem_channels": m["stem_channels"],
        "stem_kernel": m["stem_kernel"],
        "branch_channels": m["branch_channels"],
        "branch_kernels": tuple(m["branch_kernels"]),
        "hidden_dense": m["hidden_dense"],
        "learning_rate": t["learning_rate"],
        "beta1": t["beta1"],
        "beta2": t["beta2"],
        "eps": t["eps"],
        "batch_size": t["batch_size"],
        "max_epochs": t["max_epochs"],
        "patience": t["patience"],
        "random_state": cfg["seed"],
    }


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _emit(obj) -> None:
    sys.stdout.write(_dumps(obj))
    sys.stdout.flush()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dumps(obj), encoding="utf-8")


def _out_dir(args, default: Optional[str] = None) -> Path:
    out = args.out or default
    if out is None:
        raise InvalidConfig(f"{args.command} needs --out DIR")
    return Path(out)


def _parse_floats(text: str, n: Optional[int] = None, what: str = "value") -> list:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise InvalidConfig(f"cannot parse {what} {text!r}") from exc
    if n is not None and len(values) != n:
        raise InvalidConfig(f"{what} needs {n} comma-separated numbers, got {text!r}")
    return values


def _features_manifest(args) -> PatientManifest:
    path = Path(args.manifest) if args.manifest else Path(args.features) / "manifest.csv"
    return load_manifest(path)


def _load_split(args, manifest: PatientManifest, cfg: dict, model_dir: Optional[Path] = None) -> SplitAssignment:
    split = getattr(args, "split", None)
    if split and Path(split).is_file():
        return SplitAssignment.load(split)
    if split is None and model_dir is not None and (model_dir / "split.json").is_file():
        return SplitAssignment.load(model_dir / "split.json")
    ratios = _parse_floats(split, 3, "--split") if split else cfg["split"]["ratios"]
    return split_patients(manifest, ratios, cfg["seed"])


# commands


def cmd_synth(args, cfg) -> int:
    s = dict(cfg["synth"])
    if args.n_patients is not None:
        s["n_patients"] = args.n_patients
    if args.chd_ratio is not None:
        s["chd_ratio"] = args.chd_ratio
    if args.murmur_amp is not None:
        lo_hi = _parse_floats(args.murmur_amp, None, "--murmur-amp")
        s["murmur_amp_range"] = lo_hi * 2 if len(lo_hi) == 1 else lo_hi
    spec = SynthSpec(
        n_patients=int(s["n_patients"]),
        chd_ratio=float(s["chd_ratio"]),
        age_distribution=dict(s["age_distribution"]),
        snr_db_range=tuple(s["snr_db_range"]),
        murmur_amp_range=tuple(s["murmur_amp_range"]),
        jitter_range=tuple(s["jitter_range"]),
        duration_s=float(s["duration_s"]),
        seed=cfg["seed"],
    )
    out = _out_dir(args)
    manifest, truth = generate_dataset(spec, out)
    labels = list(manifest.labels().values())
    _write_json(out / "config.json", cfg)
    _emit(
        {
            "out": str(out),
            "manifest": str(out / "manifest.csv"),
            "truth": str(truth),
            "n_patients": len(manifest),
            "n_chd": labels.count("CHD"),
            "n_nonchd": labels.count("NonCHD"),
            "n_wav": sum(len(e.recordings) for e in manifest),
        }
    )
    return 0


def cmd_featurize(args, cfg) -> int:
    manifest = load_manifest(args.manifest)
    out = _out_dir(args)
    bundles, errors = featurize_manifest(manifest, out, feature_config(cfg))
    write_manifest(manifest, out / "manifest.csv")
    _write_json(out / "config.json", cfg)
    no_beats = sum(not b.handcrafted.quality_flag for b in bundles)
    logger.info(
        "featurized %d recordings: %d failed, %d without detected beats", len(bundles), len(errors), no_beats
    )
    _emit(
        {
            "out": str(out),
            "n_recordings": len(bundles),
            "n_failed": len(errors),
            "n_without_beats": no_beats,
            "errors": [{"path": str(p), "error": msg} for p, msg in errors],
        }
    )
    return 1 if errors else 0


def cmd_select_features(args, cfg) -> int:
    manifest = _features_manifest(args)
    cache = FeatureCache(args.features)
    ids = None
    if args.split:
        ids = _load_split(args, manifest, cfg).train
    by_id = manifest.by_id()
    rows, labels = [], []
    for pid, site in cache.keys():
        if pid in by_id and (ids is None or pid in ids):
            rows.append(cache.handcrafted[(pid, site)].as_array())
            labels.append(by_id[pid].label)
    values = np.array(rows, dtype=np.float64).reshape(-1, len(FEATURE_NAMES))
    # missing HRV (no beats found) is median-imputed before testing
    with np.errstate(all="ignore"):
        med = np.nanmedian(values, axis=0) if len(values) else np.zeros(values.shape[1])
    values = np.where(np.isnan(values), np.where(np.isfinite(med), med, 0.0), values)
    alpha = cfg["selection"]["alpha"] if args.alpha is None else args.alpha
    result = select_features(FeatureTable(values, labels, list(FEATURE_NAMES)), alpha)
    doc = json.loads(result.to_json())
    if args.out:
        _write_json(Path(args.out) / "selection.json", doc)
    _emit(doc)
    return 0


def cmd_train(args, cfg) -> int:
    manifest = _features_manifest(args)
    cache = FeatureCache(args.features)
    split = _load_split(args, manifest, cfg)
    out = _out_dir(args)
    t0 = time.perf_counter()
    est = fit_on_ids(cache, manifest, split.train, split.validation, **estimator_params(cfg))
    elapsed = time.perf_counter() - t0
    split_sizes = {"train": len(split.train), "validation": len(split.validation), "test": len(split.test)}
    est.save(out, extra={"features": {k: cfg[k] for k in ("filter", "mfcc", "handcrafted")}})
    split.save(out / "split.json")
    _write_json(out / "config.json", cfg)
    history = {"split": split_sizes, "best_epoch": est.best_epoch_, "epochs": est.history_}
    _write_json(out / "history.json", history)
    logger.info("trained %d epochs in %.1f s; best epoch %d", len(est.history_), elapsed, est.best_epoch_)
    best = est.history_[est.best_epoch_ - 1] if est.history_ else {}
    _emit(
        {
            "model": str(out),
            "split": split_sizes,
            "epochs_run": len(est.history_),
            "best_epoch": est.best_epoch_,
            "best_val_auroc": best.get("val_auroc"),
        }
    )
    return 0


def _load_model(path) -> FusionCNNClassifier:
    return FusionCNNClassifier.load(path)


def _check_rows(est: FusionCNNClassifier, rows: int) -> None:
    if est.use_mfcc and rows != est.model_config_.in_rows:
        raise CheckpointMismatch(f"checkpoint expects {est.model_config_.in_rows} MFCC rows, features have {rows}")


def cmd_evaluate(args, cfg) -> int:
    model_dir = Path(args.model)
    est = _load_model(model_dir)
    manifest = _features_manifest(args)
    cache = FeatureCache(args.features)
    split = _load_split(args, manifest, cfg, model_dir)
    mfcc, _, _, _ = cache.assemble(manifest, split.test[:1])
    if len(mfcc):
        _check_rows(est, mfcc.shape[1])
    probs = recording_probs(est, cache, manifest, split.test)
    labels = manifest.labels()
    threshold = cfg["evaluation"]["threshold"]
    method = args.aggregate or cfg["evaluation"]["aggregate"]
    if method == "all":
        doc = {"reports": {m: evaluate_patients(probs, labels, m, threshold).to_dict() for m in METHODS}}
    elif method in METHODS:
        doc = evaluate_patients(probs, labels, method, threshold).to_dict()
    else:
        raise InvalidConfig(f"--aggregate must be 'all' or one of {METHODS}")
    if args.out:
        _write_json(Path(args.out) / "report.json", doc)
    _emit(doc)
    return 0


def _checkpoint_feature_config(est: FusionCNNClassifier, cfg: dict) -> FeatureConfig:
    stored = est.checkpoint_doc_.get("features")
    if stored is None:
        return feature_config(cfg)
    return feature_config(_merge(cfg, stored))


def cmd_predict(args, cfg) -> int:
    est = _load_model(args.model)
    fcfg = _checkpoint_feature_config(est, cfg)
    threshold = cfg["evaluation"]["threshold"]
    method = args.aggregate or cfg["evaluation"]["aggregate"]
    if method not in METHODS:
        raise InvalidConfig(f"--aggregate must be one of {METHODS}")
    files = []
    for path in args.wav:
        t0 = time.perf_counter()
        rec = read_wav(path)
        bundle = featurize_signal(rec.samples, args.age_months, fcfg)
        _check_rows(est, bundle.mfcc.shape[0])
        # match the float32 precision of the on-disk feature cache
        mfcc = bundle.mfcc.astype(np.float32).astype(np.float64)
        prob = float(est.predict_proba((mfcc[None], bundle.handcrafted.as_array()[None]))[0, 1])
        latency = (time.perf_counter() - t0) * 1000.0
        files.append(
            {
                "path": str(path),
                "prob_CHD": prob,
                "beats_detected": bundle.handcrafted.quality_flag,
                "latency_ms": latency,
            }
        )
    score, decision = aggregate_patient([f["prob_CHD"] for f in files], method, threshold)
    _emit(
        {
            "files": files,
            "method": method,
            "threshold": threshold,
            "aggregated_prob": score,
            "decision": decision,
            "mean_latency_ms": float(np.mean([f["latency_ms"] for f in files])),
        }
    )
    return 0


def cmd_cv(args, cfg) -> int:
    manifest = _features_manifest(args)
    cache = FeatureCache(args.features)
    k = args.k or cfg["evaluation"]["k"]
    params = estimator_params(cfg)
    params.pop("random_state")
    report = cross_validate(manifest, cache, k, cfg["seed"], cfg["evaluation"]["threshold"], **params)
    doc = report.to_dict()
    if args.out:
        _write_json(Path(args.out) / "cv.json", doc)
        _write_json(Path(args.out) / "config.json", cfg)
    _emit(doc)
    return 0


def _parse_groups(text: Optional[str]):
    if not text:
        return DEFAULT_ABLATION
    return [tuple(g for g in part.split("+") if g) for part in text.split(",")]


def cmd_ablate(args, cfg) -> int:
    manifest = _features_manifest(args)
    cache = FeatureCache(args.features)
    split = _load_split(args, manifest, cfg)
    rows = ablate(
        manifest, cache, split, _parse_groups(args.groups), cfg["evaluation"]["threshold"], **estimator_params(cfg)
    )
    doc = {"seed": cfg["seed"], "split": {"train": len(split.train), "validation": len(split.validation),
                                          "test": len(split.test)}, "groups": rows}
    if args.out:
        _write_json(Path(args.out) / "ablation.json", doc)
        _write_json(Path(args.out) / "config.json", cfg)
    _emit(doc)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; created with defaults if missing")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="chdscreen", description="PCG screening for congenital heart disease")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--n-patients", type=int)
    p.add_argument("--chd-ratio", type=float)
    p.add_argument("--murmur-amp", help="LO,HI murmur amplitude range, or one value (0 for a negative control)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", parents=[common], help="compute the MFCC and handcrafted feature cache")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_featurize)

    def with_features(p):
        p.add_argument("--features", required=True, help="feature cache directory")
        p.add_argument("--manifest", help="defaults to the manifest copy inside the cache")
        return p

    p = with_features(sub.add_parser("select-features", parents=[common], help="Mann-Whitney feature report"))
    p.add_argument("--split", help="split.json; restricts the test to training patients")
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_select_features)

    p = with_features(sub.add_parser("train", parents=[common], help="train the fusion CNN"))
    p.add_argument("--split", help="train,validation,test ratios (e.g. 0.7,0.2,0.1) or a split.json")
    p.set_defaults(func=cmd_train)

    p = with_features(sub.add_parser("evaluate", parents=[common], help="score the test split"))
    p.add_argument("--model", required=True)
    p.add_argument("--split", help="split.json (defaults to the one saved with the model)")
    p.add_argument("--aggregate", help="all, AtLeastOne, Majority or AverageProb")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="classify one patient's recordings")
    p.add_argument("--model", required=True)
    p.add_argument("--age-months", type=float, required=True)
    p.add_argument("--aggregate", help="AtLeastOne, Majority or AverageProb")
    p.add_argument("wav", nargs="+")
    p.set_defaults(func=cmd_predict)

    p = with_features(sub.add_parser("cv", parents=[common], help="patient-wise k-fold cross-validation"))
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_cv)

    p = with_features(sub.add_parser("ablate", parents=[common], help="feature-group ablation"))
    p.add_argument("--split", help="ratios or a split.json")
    p.add_argument("--groups", help="comma-separated groups, members joined by '+', e.g. MFCC+HRV,MFCC")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        cfg = load_config(args.config, args.seed)
        return args.func(args, cfg)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 2
    except (CHDScreenError, OSError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
