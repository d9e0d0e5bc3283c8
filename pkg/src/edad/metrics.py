"""Point-wise and threshold-free detection metrics.

``auc_roc`` and ``auc_pr`` accept labels in ``[0, 1]``: each point contributes
``label`` of positive mass and ``1 - label`` of negative mass.  With hard 0/1
labels they reduce to the usual Mann-Whitney AUC and step-wise average
precision, and the buffered VUS metrics reuse them on softened labels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class MetricUndefinedError(ValueError):
    pass


def _pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if ((y < 0) | (y > 1)).any():
        raise ValueError("labels must lie in [0, 1]")
    return s, y


def prf1(preds, labels) -> tuple[float, float, float]:
    p = np.asarray(preds).astype(bool).reshape(-1)
    y = np.asarray(labels).astype(bool).reshape(-1)
    if p.shape != y.shape:
        raise ValueError("preds and labels differ in length")
    tp = int(np.sum(p & y))
    fp = int(np.sum(p & ~y))
    fn = int(np.sum(~p & y))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall, f1_score(precision, recall)


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def _grouped(s: np.ndarray, y: np.ndarray):
    """Positive and negative mass per distinct score, scores ascending."""
    _, inv = np.unique(s, return_inverse=True)
    pos = np.bincount(inv, weights=y)
    neg = np.bincount(inv, weights=1.0 - y)
    return pos, neg


def auc_roc(scores, labels) -> float:
    """Rank (Mann-Whitney) AUC with midrank credit for tied scores."""
    s, y = _pair(scores, labels)
    P, N = y.sum(), (1.0 - y).sum()
    if P <= 0 or N <= 0:
        raise MetricUndefinedError("ROC needs both positive and negative mass")
    pos, neg = _grouped(s, y)
    neg_below = np.cumsum(neg) - neg
    return float(np.sum(pos * (neg_below + 0.5 * neg)) / (P * N))


def auc_pr(scores, labels) -> float:
    """Step-wise area: sum over distinct thresholds of recall gain times precision."""
    s, y = _pair(scores, labels)
    P = y.sum()
    if P <= 0:
        raise MetricUndefinedError("PR needs positive mass")
    pos, neg = _grouped(s, y)
    tp = np.cumsum(pos[::-1])
    fp = np.cumsum(neg[::-1])
    recall = tp / P
    precision = tp / (tp + fp)
    gain = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(gain * precision))


def soften_labels(labels, width: int) -> np.ndarray:
    """Linear ramps of ``width`` points outside every anomaly segment."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if width <= 0:
        return y.copy()
    hard = y >= 1.0
    pos = np.flatnonzero(hard)
    if pos.size == 0:
        return y.copy()
    t = np.arange(y.size)
    k = np.searchsorted(pos, t)
    left = np.abs(t - pos[np.clip(k - 1, 0, pos.size - 1)])
    right = np.abs(pos[np.clip(k, 0, pos.size - 1)] - t)
    dist = np.minimum(left, right)
    ramp = np.clip(1.0 - dist / (width + 1.0), 0.0, 1.0)
    return np.maximum(y, ramp)


def vus(scores, labels, max_buffer: int) -> tuple[float, float]:
    """Volume under the PR and ROC surfaces over buffer widths ``0..max_buffer``."""
    if max_buffer < 0:
        raise ValueError("max_buffer must be >= 0")
    prs, rocs = [], []
    for width in range(max_buffer + 1):
        soft = soften_labels(labels, width)
        prs.append(auc_pr(scores, soft))
        rocs.append(auc_roc(scores, soft))
    return float(np.mean(prs)), float(np.mean(rocs))


@dataclass
class EvalReport:
    P: float
    R: float
    F1: float
    A_PR: float
    A_ROC: float
    V_PR: float
    V_ROC: float
    TP: int
    FP: int
    FN: int
    TN: int
    buffer: int

    FIELDS = ("P", "R", "F1", "A-PR", "A-ROC", "V-PR", "V-ROC", "TP", "FP", "FN", "TN", "buffer")

    def values(self) -> list:
        return list(asdict(self).values())

    def to_text(self) -> str:
        lines = []
        for key, val in zip(self.FIELDS, self.values()):
            lines.append(f"{key}={val:.6f}" if isinstance(val, float) else f"{key}={val}")
        return "\n".join(lines) + "\n"

    def csv_header(self) -> str:
        return ",".join(self.FIELDS)

    def to_csv_row(self) -> str:
        return ",".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in self.values())


def evaluate(scores, preds, labels, max_buffer: int = 50) -> EvalReport:
    """All seven metrics; threshold-free ones are NaN when undefined for ``labels``."""
    y = np.asarray(labels).astype(np.int64)
    p = np.asarray(preds).astype(np.int64)
    P, R, F1 = prf1(p, y)
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    tn = int(np.sum((p == 0) & (y == 0)))
    try:
        apr, aroc = auc_pr(scores, y), auc_roc(scores, y)
        vpr, vroc = vus(scores, y, max_buffer)
    except MetricUndefinedError:
        apr = aroc = vpr = vroc = float("nan")
    return EvalReport(P, R, F1, apr, aroc, vpr, vroc, tp, fp, fn, tn, max_buffer)
