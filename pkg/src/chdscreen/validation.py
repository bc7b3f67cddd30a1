"""Input validation helpers shared by the estimators."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import LengthMismatch, ShapeMismatch, UnknownLabel


def check_feature_matrix(X, n_features: Optional[int] = None, allow_nan: bool = False) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan" if allow_nan else True)
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeMismatch(f"expected {n_features} feature columns, got {X.shape[1]}")
    return X


def check_binary_labels(y, n: Optional[int] = None) -> np.ndarray:
    """Coerce labels to 0/1 ints; accepts bools, 0/1 and ``"CHD"``/``"NonCHD"`` strings."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeMismatch(f"labels must be 1-D, got shape {y.shape}")
    if y.dtype.kind in "USO":
        from .audio_io import normalize_label

        y = np.array([normalize_label(v) == "CHD" for v in y], dtype=np.int64)
    else:
        y = y.astype(np.int64)
        if not np.isin(y, (0, 1)).all():
            raise UnknownLabel("numeric labels must be 0 (NonCHD) or 1 (CHD)")
    if n is not None and len(y) != n:
        raise LengthMismatch(f"{len(y)} labels for {n} samples")
    return y


def check_fusion_input(X, n_mfcc_rows: Optional[int] = None, n_handcrafted: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Split a fusion input into ``(mfcc, handcrafted)`` arrays.

    `X` is either a ``(mfcc, handcrafted)`` pair or a mapping with those
    keys; mfcc has shape (n, rows, T) and handcrafted (n, features).
    """
    if isinstance(X, dict):
        mfcc, hand = X["mfcc"], X["handcrafted"]
    else:
        try:
            mfcc, hand = X
        except (TypeError, ValueError) as exc:
            raise ShapeMismatch("expected an (mfcc, handcrafted) pair") from exc
    mfcc = np.asarray(mfcc, dtype=np.float64)
    hand = np.asarray(hand, dtype=np.float64)
    if mfcc.ndim == 2:
        mfcc = mfcc[None]
    if hand.ndim == 1:
        hand = hand[None]
    if mfcc.ndim != 3 or (n_mfcc_rows is not None and mfcc.shape[1] != n_mfcc_rows):
        raise ShapeMismatch(f"mfcc must have shape (n, {n_mfcc_rows}, T), got {mfcc.shape}")
    if hand.ndim != 2 or (n_handcrafted is not None and hand.shape[1] != n_handcrafted):
        raise ShapeMismatch(f"handcrafted must have shape (n, {n_handcrafted}), got {hand.shape}")
    if len(mfcc) != len(hand):
        raise LengthMismatch(f"{len(mfcc)} mfcc matrices vs {len(hand)} handcrafted rows")
    if not np.all(np.isfinite(mfcc)):
        raise ShapeMismatch("mfcc contains non-finite values")
    return mfcc, hand
