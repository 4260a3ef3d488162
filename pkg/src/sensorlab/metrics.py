"""Evaluation metrics and cross-fold aggregation in transform space.

Pearson correlations aggregate as mean +- sd of their Fisher z-transforms and
come back through tanh; ROC AUC aggregates in logit space and comes back
through the sigmoid. The resulting errors are asymmetric:
err_minus = |back(m - s) - back(m)|, err_plus = |back(m + s) - back(m)|.
F1 and MAE aggregate arithmetically. Boundary values (r = +-1, AUC in {0,1})
are clamped just inside the open domain and flagged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

CLAMP = 1.0 - 1e-9


class MetricError(ValueError):
    pass


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"pearson_r expects matching 1-D arrays, got "
                          f"{x.shape} and {y.shape}")
    if x.size < 2:
        raise MetricError("pearson_r needs at least two samples")
    xc = x - x.mean()
    yc = y - y.mean()
    den = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if den == 0.0:
        raise MetricError("pearson_r undefined for constant input")
    return float((xc * yc).sum() / den)


def mae(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    return float(np.abs(y_true - y_pred).mean())


def roc_auc(y_true, scores) -> float:
    """Rank-based AUC with midranks for ties (equivalent to the
    Mann-Whitney U statistic)."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricError("roc_auc needs both classes present")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1_score(y_true, y_pred) -> float:
    y = np.asarray(y_true).astype(bool)
    p = np.asarray(y_pred).astype(bool)
    tp = int((y & p).sum())
    fp = int((~y & p).sum())
    fn = int((y & ~p).sum())
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z))


@dataclass
class MetricSummary:
    kind: str                 # pearson | auc | f1 | mae
    per_fold: tuple
    mean: float
    err_minus: float
    err_plus: float
    clamped: bool = False


def aggregate_metrics(values, kind: str) -> MetricSummary:
    """Cross-fold aggregate with the transform appropriate for `kind`."""
    vals = [float(v) for v in values]
    if not vals:
        raise MetricError("no fold values to aggregate")
    clamped = False
    if kind == "pearson":
        tv = []
        for v in vals:
            if abs(v) >= 1.0:
                v = math.copysign(CLAMP, v)
                clamped = True
            tv.append(math.atanh(v))
        fwd, back = tv, math.tanh
    elif kind == "auc":
        tv = []
        for v in vals:
            if v <= 0.0 or v >= 1.0:
                v = min(max(v, 1.0 - CLAMP), CLAMP)
                clamped = True
            tv.append(_logit(v))
        fwd, back = tv, _sigmoid
    elif kind in ("f1", "mae"):
        fwd, back = vals, lambda z: z
    else:
        raise MetricError(f"unknown metric kind '{kind}'")
    m = float(np.mean(fwd))
    s = float(np.std(fwd, ddof=1)) if len(fwd) > 1 else 0.0
    center = back(m)
    return MetricSummary(
        kind=kind, per_fold=tuple(vals), mean=center,
        err_minus=abs(back(m - s) - center),
        err_plus=abs(back(m + s) - center),
        clamped=clamped,
    )
