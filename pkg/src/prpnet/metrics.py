"""Classification and regression metrics and the Bit Efficiency Score."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricReport:
    accuracy: float | None = None
    macro_f1: float | None = None
    mse: float | None = None
    mae: float | None = None
    r2: float | None = None
    bes: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _labels(pred, true) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred).ravel()
    true = np.asarray(true).ravel()
    if pred.size == 0 or true.size == 0:
        raise ValueError("metrics need at least one sample")
    if pred.shape != true.shape:
        raise ValueError(f"prediction count {pred.size} != target count {true.size}")
    return pred, true


def accuracy(pred_classes, true_classes) -> float:
    pred, true = _labels(pred_classes, true_classes)
    return float(np.mean(pred == true))


def macro_f1(pred_classes, true_classes, n_classes: int) -> float:
    """Unweighted mean of per-class F1; a class absent from both vectors scores 0."""
    pred, true = _labels(pred_classes, true_classes)
    pred = pred.astype(np.int64)
    true = true.astype(np.int64)
    if pred.min() < 0 or true.min() < 0 or pred.max() >= n_classes or true.max() >= n_classes:
        raise ValueError(f"class indices must lie in [0, {n_classes})")
    tp = np.bincount(true[pred == true], minlength=n_classes).astype(np.float64)
    n_pred = np.bincount(pred, minlength=n_classes).astype(np.float64)
    n_true = np.bincount(true, minlength=n_classes).astype(np.float64)
    # F1 = 2TP / (2TP + FP + FN) = 2TP / (n_pred + n_true)
    denom = n_pred + n_true
    f1 = np.divide(2.0 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    return float(f1.mean())


def regression_metrics(pred, target) -> tuple[float, float, float]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise ValueError(f"prediction count {pred.size} != target count {target.size}")
    if pred.size < 2:
        raise ValueError("regression metrics need at least two samples")
    resid = pred - target
    mse = float(np.mean(resid ** 2))
    mae = float(np.mean(np.abs(resid)))
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined for a constant target")
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return mse, mae, r2


def bes(accuracy: float, chance_baseline: float, n_samples: int, d_in: int, n_params: int) -> float:
    """Bit Efficiency Score: accuracy gain over chance times log2(N*D) / log2(params)."""
    if n_params <= 1:
        raise ValueError(f"BES needs more than one parameter, got {n_params}")
    if n_samples * d_in < 2:
        raise ValueError("BES needs n_samples * d_in >= 2")
    return (accuracy - chance_baseline) * math.log2(n_samples * d_in) / math.log2(n_params)


def chance_baseline(n_classes: int) -> float:
    return 1.0 / n_classes
