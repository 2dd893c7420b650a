"""Pixel-level binary segmentation metrics (blade = class 1)."""

from dataclasses import astuple, dataclass, fields

import numpy as np

SWEEP_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    def __add__(self, other):
        return Confusion(*(a + b for a, b in zip(astuple(self), astuple(other))))

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, mask):
    p = np.asarray(pred).astype(bool).ravel()
    m = np.asarray(mask).astype(bool).ravel()
    if p.shape != m.shape:
        raise ValueError(f"confusion: prediction size {p.size} != mask size {m.size}")
    tp = int(np.count_nonzero(p & m))
    fp = int(np.count_nonzero(p & ~m))
    fn = int(np.count_nonzero(~p & m))
    return Confusion(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num, den, empty):
    return num / den if den else empty


@dataclass(frozen=True)
class SegMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    iou_c0: float
    iou_c1: float
    miou: float

    @classmethod
    def from_confusion(cls, c):
        """Metrics from counts. Empty denominators count as perfect only when nothing was missed."""
        acc = _ratio(c.tp + c.tn, c.total, 1.0)
        precision = _ratio(c.tp, c.tp + c.fp, 1.0 if c.fn == 0 else 0.0)
        recall = _ratio(c.tp, c.tp + c.fn, 1.0 if c.fp == 0 else 0.0)
        f1 = _ratio(2 * precision * recall, precision + recall, 0.0)
        iou1 = _ratio(c.tp, c.tp + c.fp + c.fn, 1.0)
        iou0 = _ratio(c.tn, c.tn + c.fp + c.fn, 1.0)
        return cls(acc, precision, recall, f1, iou0, iou1, (iou0 + iou1) / 2)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def segmentation_metrics(pred, mask):
    return SegMetrics.from_confusion(confusion(pred, mask))


def threshold_sweep(scores, mask, thresholds=SWEEP_THRESHOLDS):
    """Threshold maximizing pixel accuracy of ``scores > t``; ties go to the lowest t.

    Returns:
        (best threshold, its accuracy)
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    m = np.asarray(mask).astype(bool).ravel()
    best_t, best_acc = None, -1.0
    for t in sorted(thresholds):
        acc = float(np.mean((s > t) == m))
        if acc > best_acc:
            best_t, best_acc = t, acc
    return best_t, best_acc
