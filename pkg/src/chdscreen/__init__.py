"""Phonocardiogram screening for congenital heart disease."""

__version__ = "0.1.0"

from .audio_io import (
    PatientManifest,
    Recording,
    SplitAssignment,
    kfold_patients,
    load_manifest,
    read_wav,
    split_patients,
    write_wav,
)
from .dsp import design_butterworth_bandpass, filter_signal, preprocess, stft, zscore_normalize
from .estimator import FusionCNNClassifier
from .evaluation import ablate, cross_validate
from .handcrafted import FEATURE_NAMES, compute_hrv, detect_beats, extract_handcrafted
from .metrics import aggregate_patient, confusion_metrics, evaluate_patients, pr_auprc, roc_auroc
from .mfcc import MfccConfig, compute_mfcc, full_mfcc_stack
from .pipeline import (
    FeatureBundle,
    FeatureCache,
    HandcraftedTransformer,
    MFCCTransformer,
    PCGPreprocessor,
    featurize_signal,
)
from .selection import MannWhitneySelector, mann_whitney_u, select_features
from .synth import SynthSpec, generate_dataset, generate_patient

__all__ = [
    "FEATURE_NAMES",
    "FeatureBundle",
    "FeatureCache",
    "FusionCNNClassifier",
    "HandcraftedTransformer",
    "MFCCTransformer",
    "MannWhitneySelector",
    "MfccConfig",
    "PCGPreprocessor",
    "PatientManifest",
    "Recording",
    "SplitAssignment",
    "SynthSpec",
    "ablate",
    "aggregate_patient",
    "compute_hrv",
    "compute_mfcc",
    "confusion_metrics",
    "cross_validate",
    "design_butterworth_bandpass",
    "detect_beats",
    "evaluate_patients",
    "extract_handcrafted",
    "featurize_signal",
    "filter_signal",
    "full_mfcc_stack",
    "generate_dataset",
    "generate_patient",
    "kfold_patients",
    "load_manifest",
    "mann_whitney_u",
    "pr_auprc",
    "preprocess",
    "read_wav",
    "roc_auroc",
    "select_features",
    "split_patients",
    "stft",
    "write_wav",
    "zscore_normalize",
]
