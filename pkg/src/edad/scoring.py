"""Per-timestamp anomaly scores, overlap/channel aggregation and thresholding."""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import TimeSeries, WindowBatch, preprocess
from .decomposer import split
from .encoder import encode, frozen
from .mi import critic_scores, Critic


class ScoringError(RuntimeError):
    pass


@dataclass
class AnomalyScoreSeries:
    scores: np.ndarray
    coverage: np.ndarray

    def __len__(self) -> int:
        return len(self.scores)


def score_windows(model, windows, chunk: int = 128) -> np.ndarray:
    """Negated point-wise MI between ``Y`` and ``Y_aux``, one row per window.

    No shuffling happens here; the result depends only on the model and input.
    """
    if isinstance(windows, WindowBatch):
        windows = windows.windows
    windows = np.asarray(windows, dtype=np.float64)
    single = windows.ndim == 1
    windows = np.atleast_2d(windows)
    enc = frozen(model.encoder)
    critic = Critic(model.critic.kind, frozen(model.critic.params))
    for t in list(enc.values()) + list(critic.params.values()):
        if not np.isfinite(t.data).all():
            raise ScoringError("model parameters contain non-finite values")
    est = copy.copy(model.estimator)
    out = np.empty(windows.shape, dtype=np.float64)
    for start in range(0, len(windows), chunk):
        Y = encode(windows[start:start + chunk], enc, model.encoder_config)
        _, Y_aux = split(Y)
        out[start:start + chunk] = -est.pointwise(critic_scores(Y, Y_aux, critic)).data
    return out[0] if single else out


def aggregate(window_scores: Sequence[np.ndarray], offsets: Sequence[np.ndarray], n: int,
              reduce: str = "mean", channel_reduce: str = "mean") -> AnomalyScoreSeries:
    """Fold per-window scores back onto the timeline.

    ``window_scores[c]`` is an ``n_windows x B`` array for channel ``c`` with
    matching ``offsets[c]``.  Within a channel overlapping windows are reduced
    per timestamp, then channels are reduced.
    """
    per_channel = []
    coverage = np.zeros(n, dtype=np.int64)
    for scores, offs in zip(window_scores, offsets):
        scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
        offs = np.asarray(offs, dtype=np.int64)
        B = scores.shape[1]
        idx = (offs[:, None] + np.arange(B)[None, :]).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ScoringError("window extends outside the series")
        cnt = np.bincount(idx, minlength=n)
        if (cnt == 0).any():
            raise ScoringError(f"timestamp {int(np.argmin(cnt))} is not covered by any window")
        if reduce == "mean":
            agg = np.bincount(idx, weights=scores.reshape(-1), minlength=n) / cnt
        elif reduce == "max":
            agg = np.full(n, -np.inf)
            np.maximum.at(agg, idx, scores.reshape(-1))
        else:
            raise ValueError(f"unknown overlap reduction {reduce!r}")
        per_channel.append(agg)
        coverage += cnt
    stacked = np.vstack(per_channel)
    if channel_reduce == "mean":
        final = stacked.mean(axis=0)
    elif channel_reduce == "max":
        final = stacked.max(axis=0)
    else:
        raise ValueError(f"unknown channel reduction {channel_reduce!r}")
    return AnomalyScoreSeries(final, coverage)


def threshold(scores, ratio: float) -> np.ndarray:
    """Flag the ``ceil(ratio * N)`` highest scores; ties go to the earlier timestamp."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    scores = np.asarray(scores, dtype=np.float64)
    k = min(len(scores), int(math.ceil(ratio * len(scores) - 1e-9)))
    order = np.lexsort((np.arange(len(scores)), -scores))
    preds = np.zeros(len(scores), dtype=np.int64)
    preds[order[:k]] = 1
    return preds


def segments(labels) -> list[tuple[int, int]]:
    """Half-open ``[start, end)`` runs of ones."""
    lab = np.asarray(labels).astype(np.int8)
    diff = np.diff(np.concatenate(([0], lab, [0])))
    return list(zip(np.flatnonzero(diff == 1).tolist(), np.flatnonzero(diff == -1).tolist()))


def point_adjust(preds, labels) -> np.ndarray:
    preds = np.asarray(preds).astype(np.int64).copy()
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in length")
    for s, e in segments(labels):
        if preds[s:e].any():
            preds[s:e] = 1
    return preds


def detect(model, ts: TimeSeries, stride: int | None = None, reduce: str = "mean",
           channel_reduce: str = "mean") -> AnomalyScoreSeries:
    """Standardize with the model's training stats, window, score and aggregate."""
    stride = stride or model.B
    batches, _ = preprocess(ts, model.B, stride, stats=model.stats or None)
    scores = [score_windows(model, b.windows) for b in batches]
    return aggregate(scores, [b.offsets for b in batches], ts.n, reduce, channel_reduce)


def detect_with(score_fn, ts: TimeSeries, B: int, stride: int, stats) -> AnomalyScoreSeries:
    """Same pipeline for any ``windows -> per-timestamp scores`` callable."""
    batches, _ = preprocess(ts, B, stride, stats=stats or None)
    return aggregate([score_fn(b.windows) for b in batches], [b.offsets for b in batches], ts.n)


SCORE_HEADER = ("timestamp", "score", "coverage", "prediction", "label")


def write_scores(path, result: AnomalyScoreSeries, preds, labels=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_HEADER if labels is not None else SCORE_HEADER[:-1])
        for i in range(len(result)):
            row = [i, repr(float(result.scores[i])), int(result.coverage[i]), int(preds[i])]
            if labels is not None:
                row.append(int(labels[i]))
            w.writerow(row)


def read_scores(path):
    """Returns ``(scores, predictions, labels or None)`` from a scores CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    scores = np.array([float(r["score"]) for r in rows])
    preds = np.array([int(r["prediction"]) for r in rows])
    labels = np.array([int(r["label"]) for r in rows]) if rows and "label" in rows[0] else None
    return scores, preds, labels
