"""Rating-prediction metrics on the original rating scale.

RMSE and MAE are computed after inverse-scaling predictions back from the
normalized training space; precision/recall/F1 are micro-averaged over all
test rows after thresholding both predictions and targets (boundary
inclusive: a value equal to the threshold is positive).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .model import EmbeddingSpace, Variant
from .training import predict_batch


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mae: float
    precision: float
    recall: float
    f1: float
    n: int
    threshold: float

    def __post_init__(self):
        # power-mean inequality, small slack for float rounding
        if self.mae > self.rmse + 1e-12:
            raise ValueError(f"MAE {self.mae} exceeds RMSE {self.rmse}")

    def to_json(self) -> str:
        doc = {
            "rmse": self.rmse,
            "mae": self.mae,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "n": self.n,
            "threshold": self.threshold,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def format_table(self) -> str:
        rows = [
            ("rmse", self.rmse),
            ("mae", self.mae),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ]
        lines = [f"{name:<10} {value:>10.4f}" for name, value in rows]
        lines.append(f"{'n':<10} {self.n:>10d}")
        lines.append(f"{'threshold':<10} {self.threshold:>10.4f}")
        return "\n".join(lines) + "\n"


def rmse_mae(predictions, targets) -> tuple[float, float]:
    preds = np.asarray(predictions, dtype=np.float64)
    targ = np.asarray(targets, dtype=np.float64)
    if preds.shape != targ.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {targ.shape}")
    if preds.size == 0:
        raise ValueError("empty prediction list")
    err = preds - targ
    return float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err)))


def binarize(values, threshold: float) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("binarize requires finite values")
    return arr >= threshold


def classification_metrics(predicted, target) -> tuple[float, float, float]:
    """Micro-averaged precision/recall/F1; zero denominators yield 0."""
    pred = np.asarray(predicted, dtype=bool)
    targ = np.asarray(target, dtype=bool)
    if pred.shape != targ.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {targ.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    tp = int(np.sum(pred & targ))
    fp = int(np.sum(pred & ~targ))
    fn = int(np.sum(~pred & targ))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def evaluate_model(
    space: EmbeddingSpace,
    dataset: Dataset,
    variant: Variant,
    threshold: float,
    backend: str | None = None,
) -> MetricsReport:
    """Predict every test interaction and score on the original scale."""
    if not dataset.test:
        raise ValueError("empty test partition")
    queries = [(i.user, i.item, i.situation) for i in dataset.test]
    preds_norm = predict_batch(space, dataset.catalog, queries, variant, backend=backend)
    preds = dataset.scale.to_original(preds_norm)
    targets = np.asarray([i.rating for i in dataset.test])
    rmse, mae = rmse_mae(preds, targets)
    p, r, f1 = classification_metrics(
        binarize(preds, threshold), binarize(targets, threshold)
    )
    return MetricsReport(
        rmse=rmse, mae=mae, precision=p, recall=r, f1=f1,
        n=len(dataset.test), threshold=threshold,
    )
