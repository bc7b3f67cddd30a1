"""scikit-learn compatible wrapper around the fusion CNN."""

from __future__ import annotations

import logging
from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import network as nn
from .exceptions import EmptyDataset, ShapeMismatch
from .handcrafted import FEATURE_NAMES
from .metrics import roc_auroc
from .validation import check_binary_labels, check_fusion_input

logger = logging.getLogger(__name__)

N_HANDCRAFTED = len(FEATURE_NAMES)


class FusionCNNClassifier(ClassifierMixin, BaseEstimator):
    """Three-branch 1D CNN over MFCC frames, fused with handcrafted features.

    ``X`` is a pair ``(mfcc, handcrafted)`` with shapes (n, 39, T) and
    (n, 11). Missing HRV entries (NaN) are imputed with training medians,
    and handcrafted columns are standardized with training statistics
    before fusion. Labels are 1 for CHD and 0 for NonCHD.

    Parameters
    ----------
    use_mfcc : bool
        If False the convolutional path is dropped and only handcrafted
        features feed the dense head.
    handcrafted_columns : sequence of int or None
        Subset of the 11 handcrafted columns to fuse; None keeps all, an
        empty sequence keeps none.
    max_epochs, patience : int
        Training stops after `patience` epochs without a validation AUROC
        improvement; the best-scoring parameters are kept.
    """

    def __init__(
        self,
        stem_channels: int = 32,
        stem_kernel: int = 3,
        branch_channels: int = 32,
        branch_kernels: Sequence[int] = (3, 5, 7),
        hidden_dense: int = 64,
        use_mfcc: bool = True,
        handcrafted_columns: Optional[Sequence[int]] = None,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        batch_size: int = 32,
        max_epochs: int = 50,
        patience: int = 10,
        random_state: int = 0,
    ):
        self.stem_channels = stem_channels
        self.stem_kernel = stem_kernel
        self.branch_channels = branch_channels
        self.branch_kernels = branch_kernels
        self.hidden_dense = hidden_dense
        self.use_mfcc = use_mfcc
        self.handcrafted_columns = handcrafted_columns
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state

    def _columns(self) -> List[int]:
        if self.handcrafted_columns is None:
            return list(range(N_HANDCRAFTED))
        return [int(c) for c in self.handcrafted_columns]

    def train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig(
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.random_state,
        )

    def _fit_handcrafted_stats(self, hand: np.ndarray) -> None:
        with np.errstate(all="ignore"):
            med = np.nanmedian(hand, axis=0) if len(hand) else np.zeros(hand.shape[1])
        self.hand_median_ = np.where(np.isfinite(med), med, 0.0)
        filled = np.where(np.isnan(hand), self.hand_median_, hand)
        self.hand_mean_ = filled.mean(axis=0)
        std = filled.std(axis=0)
        self.hand_std_ = np.where(std > 1e-12, std, 1.0)

    def _standardize(self, hand: np.ndarray) -> np.ndarray:
        hand = hand[:, self.columns_]
        filled = np.where(np.isnan(hand), self.hand_median_, hand)
        return (filled - self.hand_mean_) / self.hand_std_

    def _split(self, X):
        mfcc, hand = check_fusion_input(X, n_handcrafted=N_HANDCRAFTED)
        return mfcc, hand

    def fit(self, X, y, validation_data=None):
        """Train with mini-batch Adam on class-weighted BCE.

        `validation_data` is an optional ``(X_val, y_val)`` pair used for
        early stopping on AUROC, with ties broken by the weighted validation
        loss. Without it every epoch is run and the last parameters are kept.
        """
        mfcc, hand = self._split(X)
        y = check_binary_labels(y, len(mfcc))
        if len(y) == 0:
            raise EmptyDataset("no training samples")
        tc = self.train_config()
        self.columns_ = self._columns()
        self._fit_handcrafted_stats(hand[:, self.columns_])
        hand_z = self._standardize(hand)

        self.model_config_ = nn.ModelConfig(
            in_rows=mfcc.shape[1],
            stem_channels=self.stem_channels,
            stem_kernel=self.stem_kernel,
            branch_channels=self.branch_channels,
            branch_kernels=tuple(self.branch_kernels),
            handcrafted_dim=len(self.columns_),
            hidden_dense=self.hidden_dense,
            use_mfcc=self.use_mfcc,
        )
        self.class_weights_ = nn.class_weights(y)
        self.classes_ = np.array([0, 1])

        if validation_data is not None:
            val_mfcc, val_hand = self._split(validation_data[0])
            val_y = check_binary_labels(validation_data[1], len(val_mfcc))
            val_hand_z = self._standardize(val_hand)

        params = nn.init_model(self.model_config_, tc.seed)
        opt = nn.Adam(params, tc.learning_rate, tc.beta1, tc.beta2, tc.eps)
        rng = np.random.default_rng(tc.seed)
        history = []
        best_score, best_params, best_epoch, stale = (-np.inf, -np.inf), None, 0, 0

        for epoch in range(1, tc.max_epochs + 1):
            order = rng.permutation(len(y))
            total = 0.0
            for start in range(0, len(y), tc.batch_size):
                idx = order[start:start + tc.batch_size]
                loss, grads = nn.loss_and_grad(
                    params, self.model_config_, mfcc[idx], hand_z[idx], y[idx], self.class_weights_
                )
                opt.step(params, grads)
                total += loss * len(idx)
            record = {"epoch": epoch, "train_loss": total / len(y), "val_auroc": None, "val_loss": None}

            if validation_data is not None:
                probs = self._predict_raw(params, val_mfcc, val_hand_z)[:, 1]
                record["val_loss"] = nn.weighted_bce(probs, val_y, self.class_weights_)
                if 0 < val_y.sum() < len(val_y):
                    record["val_auroc"] = roc_auroc(probs, val_y)[1]
                # AUROC saturates quickly on separable data; lower loss breaks ties
                auroc = record["val_auroc"] if record["val_auroc"] is not None else -np.inf
                score = (auroc, -record["val_loss"])
                if score > best_score:
                    best_score, best_epoch, stale = score, epoch, 0
                    best_params = {k: v.copy() for k, v in params.items()}
                else:
                    stale += 1
            history.append(record)
            logger.debug("epoch %d loss %.5f val_auroc %s", epoch, record["train_loss"], record["val_auroc"])
            if validation_data is not None and stale >= tc.patience:
                break

        if best_params is None:
            best_params, best_epoch = params, len(history)
        # checkpoints hold float32, so keep the in-memory model identical to a reloaded one
        self.params_ = nn.to_float32(best_params)
        self.history_ = history
        self.best_epoch_ = best_epoch
        self.n_features_in_ = N_HANDCRAFTED
        return self

    def _predict_raw(self, params, mfcc, hand_z, chunk: int = 64) -> np.ndarray:
        out = []
        for start in range(0, len(hand_z), chunk):
            sl = slice(start, start + chunk)
            out.append(nn.forward(params, self.model_config_, mfcc[sl] if mfcc is not None else None, hand_z[sl]))
        return np.concatenate(out) if out else np.zeros((0, 2))

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities (n, 2); column 1 is CHD.

        The MFCC part may be a list of matrices with differing frame counts.
        """
        check_is_fitted(self, "params_")
        if not isinstance(X, dict):
            mfcc, hand = X
            if isinstance(mfcc, (list, tuple)) and len({np.shape(m) for m in mfcc}) > 1:
                hand = np.atleast_2d(np.asarray(hand, dtype=np.float64))
                return np.vstack([self.predict_proba((m[None], h[None])) for m, h in zip(mfcc, hand)])
        mfcc, hand = self._split(X)
        if self.use_mfcc and mfcc.shape[1] != self.model_config_.in_rows:
            raise ShapeMismatch(f"model expects {self.model_config_.in_rows} MFCC rows, got {mfcc.shape[1]}")
        return self._predict_raw(self.params_, mfcc, self._standardize(hand))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def save(self, directory, extra: Optional[dict] = None) -> None:
        check_is_fitted(self, "params_")
        doc = {
            "estimator_params": _jsonable(self.get_params()),
            "handcrafted_columns": self.columns_,
            "handcrafted_stats": {
                "median": self.hand_median_.tolist(),
                "mean": self.hand_mean_.tolist(),
                "std": self.hand_std_.tolist(),
            },
            "class_weights": self.class_weights_.tolist(),
            "best_epoch": self.best_epoch_,
        }
        doc.update(extra or {})
        nn.save_checkpoint(directory, self.params_, self.model_config_, self.train_config(), doc)

    @classmethod
    def load(cls, directory) -> "FusionCNNClassifier":
        params, config, doc = nn.load_checkpoint(directory)
        init = dict(doc["estimator_params"])
        init["branch_kernels"] = tuple(init["branch_kernels"])
        est = cls(**init)
        est.params_ = params
        est.model_config_ = config
        est.columns_ = list(doc["handcrafted_columns"])
        stats = doc["handcrafted_stats"]
        est.hand_median_ = np.array(stats["median"], dtype=np.float64)
        est.hand_mean_ = np.array(stats["mean"], dtype=np.float64)
        est.hand_std_ = np.array(stats["std"], dtype=np.float64)
        est.class_weights_ = np.array(doc["class_weights"], dtype=np.float64)
        est.best_epoch_ = doc.get("best_epoch")
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = N_HANDCRAFTED
        est.history_ = []
        est.checkpoint_doc_ = doc
        return est


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out
