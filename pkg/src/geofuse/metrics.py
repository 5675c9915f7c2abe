"""Segmentation and regression metrics with unknown-pixel masking.

* Pixel accuracy and mean intersection-over-union come from a confusion
  matrix. Classes whose union is empty (never present, never predicted) are
  left out of the mean rather than counted as zero.
* ``rmse_log`` compares ``log1p`` of prediction (clamped at 0) and target, so
  zero heights are well defined.
"""
from __future__ import annotations

from typing import Iterable, Optional, Union

import numpy as np

from .errors import ContractViolation

IgnoreSpec = Union[int, Iterable[int], None]


def _ignore_set(ignore: IgnoreSpec) -> tuple[int, ...]:
    if ignore is None:
        return ()
    if isinstance(ignore, (int, np.integer)):
        return (int(ignore),)
    return tuple(int(v) for v in ignore)


class ConfusionAccumulator:
    """``counts[true, pred]`` over non-ignored pixels.

    Accumulators are mergeable with ``+`` / :meth:`merge`, which is associative,
    so evaluation can be split across workers.
    """

    def __init__(self, num_classes: int, ignore_label: IgnoreSpec = 255):
        if num_classes < 1:
            raise ContractViolation("num_classes must be positive")
        self.num_classes = int(num_classes)
        self.ignore = _ignore_set(ignore_label)
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.ignored = 0

    @property
    def counted(self) -> int:
        return int(self.counts.sum())

    @property
    def total_seen(self) -> int:
        return self.counted + self.ignored

    def accumulate(self, pred, true) -> "ConfusionAccumulator":
        pred = np.asarray(pred)
        true = np.asarray(true)
        if pred.shape != true.shape:
            raise ContractViolation(f"prediction shape {pred.shape} != label shape {true.shape}")
        keep = ~np.isin(true, self.ignore) if self.ignore else np.ones(true.shape, dtype=bool)
        t = true[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        K = self.num_classes
        for name, v in (("label", t), ("prediction", p)):
            if v.size and (v.min() < 0 or v.max() >= K):
                bad = v[(v < 0) | (v >= K)][0]
                raise ContractViolation(f"{name} {bad} outside [0, {K})")
        self.counts += np.bincount(t * K + p, minlength=K * K).reshape(K, K)
        self.ignored += int((~keep).sum())
        return self

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        if other.num_classes != self.num_classes:
            raise ContractViolation("cannot merge accumulators with different class counts")
        out = ConfusionAccumulator(self.num_classes, self.ignore)
        out.counts = self.counts + other.counts
        out.ignored = self.ignored + other.ignored
        return out

    __add__ = merge

    def per_class_iou(self) -> np.ndarray:
        """IOU per class, NaN where the union is empty."""
        tp = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(0) + self.counts.sum(1) - np.diag(self.counts)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(union > 0, tp / union, np.nan)


def miou_acc(acc: ConfusionAccumulator) -> tuple[float, float]:
    """``(mean IOU over classes with non-empty union, pixel accuracy)``."""
    total = acc.counted
    if total == 0:
        raise ContractViolation("no counted pixels: every pixel was ignored")
    iou = acc.per_class_iou()
    return float(np.nanmean(iou)), float(np.trace(acc.counts) / total)


def rmse_rmselog(pred, target, mask: Optional[np.ndarray] = None) -> tuple[float, float]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractViolation(f"prediction shape {pred.shape} != target shape {target.shape}")
    mask = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractViolation("empty mask")
    p, t = pred[mask], target[mask]
    if (t < 0).any():
        raise ContractViolation("negative targets under the mask; log error undefined")
    rmse = np.sqrt(np.mean((p - t) ** 2))
    rmse_log = np.sqrt(np.mean((np.log1p(np.maximum(p, 0.0)) - np.log1p(t)) ** 2))
    return float(rmse), float(rmse_log)


class RegressionAccumulator:
    """Running sums for RMSE / RMSE-log; mergeable like the confusion matrix."""

    def __init__(self):
        self.n = 0
        self.sq = 0.0
        self.sq_log = 0.0

    def accumulate(self, pred, target, mask=None) -> "RegressionAccumulator":
        pred = np.asarray(pred, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        mask = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        p, t = pred[mask], target[mask]
        self.n += int(p.size)
        self.sq += float(np.sum((p - t) ** 2))
        self.sq_log += float(np.sum((np.log1p(np.maximum(p, 0.0)) - np.log1p(t)) ** 2))
        return self

    def merge(self, other: "RegressionAccumulator") -> "RegressionAccumulator":
        out = RegressionAccumulator()
        out.n, out.sq, out.sq_log = self.n + other.n, self.sq + other.sq, self.sq_log + other.sq_log
        return out

    def result(self) -> tuple[float, float]:
        if self.n == 0:
            raise ContractViolation("empty mask")
        return float(np.sqrt(self.sq / self.n)), float(np.sqrt(self.sq_log / self.n))


CSV_HEADER = "epoch,loss,miou,acc,rmse,rmse_log"


def csv_row(epoch, loss, miou=float("nan"), acc=float("nan"), rmse=float("nan"), rmse_log=float("nan")) -> str:
    def f(v):
        return "nan" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))
    return f"{epoch}," + ",".join(f(v) for v in (loss, miou, acc, rmse, rmse_log))


def read_csv(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ContractViolation(f"{path}: missing metrics header")
    keys = CSV_HEADER.split(",")
    rows = []
    for ln in lines[1:]:
        vals = ln.split(",")
        rows.append({k: (int(v) if k == "epoch" else float(v)) for k, v in zip(keys, vals)})
    return rows
