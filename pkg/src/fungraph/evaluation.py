"""Structure-recovery metrics: confusion counts, ROC curves, AUC, precision/recall."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DegenerateTruthError, DimensionError, ValidationError
from .neighborhood import GraphEstimate


class Confusion(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int


def _pairs(adj: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(adj.shape[0], 1)
    return np.asarray(adj, dtype=bool)[iu]


def confusion(est: GraphEstimate, truth: GraphEstimate) -> Confusion:
    """Counts over unordered node pairs (diagonal excluded)."""
    if est.p != truth.p:
        raise DimensionError(f"estimate has p={est.p} but truth has p={truth.p}")
    e, t = _pairs(est.adjacency), _pairs(truth.adjacency)
    return Confusion(int(np.sum(e & t)), int(np.sum(e & ~t)), int(np.sum(~e & ~t)), int(np.sum(~e & t)))


def rates(c: Confusion) -> tuple:
    """``(fpr, tpr)``; a rate with an empty denominator is reported as 0."""
    fpr = c.fp / (c.fp + c.tn) if c.fp + c.tn else 0.0
    tpr = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    return fpr, tpr


@dataclass(frozen=True)
class RocCurve:
    """ROC points sorted by FPR, anchored at (0, 0) and (1, 1).

    ``lambda_trace`` holds the path parameter behind each point (``nan`` for
    the anchors).
    """

    fpr: np.ndarray
    tpr: np.ndarray
    lambda_trace: np.ndarray

    @property
    def points(self) -> list:
        return [(float(f), float(t)) for f, t in zip(self.fpr, self.tpr)]

    def rows(self) -> list:
        return [(float(l), float(f), float(t)) for l, f, t in zip(self.lambda_trace, self.fpr, self.tpr)]


def roc(estimates: Sequence[GraphEstimate], truth: GraphEstimate,
        t_values: Optional[Sequence[float]] = None) -> RocCurve:
    """ROC curve of a sequence of estimates, e.g. one per penalty on a path."""
    if len(estimates) == 0:
        raise ValidationError("need at least one estimate")
    t_true = _pairs(truth.adjacency)
    if t_true.all() or not t_true.any():
        raise DegenerateTruthError("ROC is undefined when the true graph has no edges or no non-edges")
    if t_values is None:
        t_values = np.full(len(estimates), np.nan)
    elif len(t_values) != len(estimates):
        raise ValidationError("one t value per estimate required")
    pts = [rates(confusion(est, truth)) + (float(t),) for est, t in zip(estimates, t_values)]
    pts = [(0.0, 0.0, np.nan)] + pts + [(1.0, 1.0, np.nan)]
    # stable sort keeps path order within ties; tpr breaks ties so the curve is a staircase
    order = sorted(range(len(pts)), key=lambda i: (pts[i][0], pts[i][1]))
    arr = np.array([pts[i] for i in order])
    return RocCurve(arr[:, 0], arr[:, 1], arr[:, 2])


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve on ``fpr`` in [0, 1]."""
    f, t = curve.fpr, curve.tpr
    return float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2.0))


class PrecisionRecall(NamedTuple):
    precision: float
    recall: float
    empty_prediction: bool


def precision_recall(est: GraphEstimate, truth: GraphEstimate) -> PrecisionRecall:
    """Precision and recall of one estimated graph.

    An empty estimate has precision 1 (nothing predicted wrongly) and is
    flagged with ``empty_prediction``; recall against an empty truth is 1.
    """
    c = confusion(est, truth)
    empty = c.tp + c.fp == 0
    precision = 1.0 if empty else c.tp / (c.tp + c.fp)
    recall = 1.0 if c.tp + c.fn == 0 else c.tp / (c.tp + c.fn)
    return PrecisionRecall(float(precision), float(recall), bool(empty))
