"""Time-series ingestion, per-channel preprocessing, windowing and anomaly fixtures."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import make_rng

KINDS = ("global", "contextual", "shapelet", "seasonal", "trend")
CONTAMINATION_GRID = (0.01, 0.02, 0.04, 0.06, 0.08, 0.10, 0.20)
LOCAL_WINDOW = 32


class IngestionError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass
class TimeSeries:
    values: np.ndarray
    labels: np.ndarray | None = None
    name: str = "series"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError("values must be an N x D matrix with N >= 1")
        self.values = v
        if self.labels is not None:
            lab = np.asarray(self.labels).astype(np.int64).reshape(-1)
            if lab.shape[0] != v.shape[0]:
                raise ValueError(f"labels length {lab.shape[0]} != N={v.shape[0]}")
            self.labels = lab

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]

    @property
    def column(self) -> np.ndarray:
        """The single column of a univariate series."""
        if self.dims != 1:
            raise ValueError(f"series {self.name!r} is not univariate (D={self.dims})")
        return self.values[:, 0]


@dataclass
class WindowBatch:
    channel: int
    offsets: np.ndarray
    windows: np.ndarray
    B: int
    stride: int

    def __len__(self) -> int:
        return len(self.offsets)


@dataclass(frozen=True)
class InjectionSpec:
    kind: str
    ratio: float
    magnitude: float = 3.0
    seed: int = 0
    length: int = 50  # segment length for shapelet/seasonal/trend

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown anomaly kind {self.kind!r}")
        if not 0.0 < self.ratio <= 0.5:
            raise ConfigurationError(f"ratio must be in (0, 0.5], got {self.ratio}")
        if self.magnitude <= 0:
            raise ConfigurationError("magnitude must be positive")
        if self.length < 2:
            raise ConfigurationError("segment length must be >= 2")


@dataclass(frozen=True)
class Stats:
    mean: float
    std: float


# ---------------------------------------------------------------- IO

def load_csv(path) -> TimeSeries:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        label_col = header.index("label") if "label" in header else None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for col, cell in zip(header, row):
                try:
                    x = float(cell)
                except ValueError:
                    raise IngestionError(f"{path}: row {lineno}, column {col!r}: non-numeric {cell!r}") from None
                if not math.isfinite(x):
                    raise IngestionError(f"{path}: row {lineno}, column {col!r}: non-finite value")
                parsed.append(x)
            rows.append(parsed)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    labels = None
    if label_col is not None:
        labels = table[:, label_col]
        if not np.isin(labels, (0.0, 1.0)).all():
            raise IngestionError(f"{path}: label column must contain only 0/1")
        table = np.delete(table, label_col, axis=1)
    if table.shape[1] == 0:
        raise IngestionError(f"{path}: no value columns")
    return TimeSeries(table, labels, name=path.stem)


def write_csv(ts: TimeSeries, path, columns: list[str] | None = None) -> None:
    columns = columns or ([f"v{j}" for j in range(ts.dims)] if ts.dims > 1 else ["value"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns + (["label"] if ts.labels is not None else []))
        for i in range(ts.n):
            row = [repr(float(x)) for x in ts.values[i]]
            if ts.labels is not None:
                row.append(str(int(ts.labels[i])))
            w.writerow(row)


# ---------------------------------------------------------------- preprocessing

def channel_split(ts: TimeSeries) -> list[TimeSeries]:
    """Dimension independence: one univariate series per column, labels copied."""
    return [
        TimeSeries(ts.values[:, j].copy(), None if ts.labels is None else ts.labels.copy(),
                   name=f"{ts.name}[{j}]")
        for j in range(ts.dims)
    ]


def standardize(series, stats: Stats | None = None):
    """Z-score a univariate series with population std; returns ``(series, stats)``.

    A near-constant series (std < 1e-12) is divided by 1 instead.
    """
    ts = series if isinstance(series, TimeSeries) else TimeSeries(series)
    x = ts.column
    if stats is None:
        sd = float(x.std())
        stats = Stats(float(x.mean()), sd if sd >= 1e-12 else 1.0)
    sd = stats.std if stats.std >= 1e-12 else 1.0
    out = replace(ts, values=((x - stats.mean) / sd)[:, None])
    return out, stats


def window_offsets(n: int, B: int, stride: int) -> np.ndarray:
    if B > n:
        raise ConfigurationError(f"window length {B} exceeds series length {n}")
    if stride < 1 or B < 1:
        raise ConfigurationError("window length and stride must be positive")
    if stride > B:
        raise ConfigurationError(f"stride {stride} exceeds window length {B}; timestamps would go unscored")
    offs = list(range(0, n - B + 1, stride))
    if offs[-1] + B < n:
        offs.append(n - B)
    return np.asarray(offs, dtype=np.int64)


def windowize(series, B: int, stride: int, channel: int = 0) -> WindowBatch:
    x = series.column if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64).reshape(-1)
    offs = window_offsets(len(x), B, stride)
    idx = offs[:, None] + np.arange(B)[None, :]
    return WindowBatch(channel=channel, offsets=offs, windows=x[idx], B=B, stride=stride)


def train_test_split(ts: TimeSeries, train_fraction: float = 0.7) -> tuple[TimeSeries, TimeSeries]:
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError("train_fraction must be in (0, 1)")
    cut = int(round(ts.n * train_fraction))
    if cut < 1 or cut >= ts.n:
        raise ConfigurationError("split leaves an empty part")
    lab = ts.labels
    return (TimeSeries(ts.values[:cut], None if lab is None else lab[:cut], name=f"{ts.name}-train"),
            TimeSeries(ts.values[cut:], None if lab is None else lab[cut:], name=f"{ts.name}-test"))


# ---------------------------------------------------------------- fixtures

def sine_series(n: int, period: float = 50.0, noise: float = 0.1, seed: int = 0,
                name: str = "sine") -> TimeSeries:
    rng = make_rng(seed, 11)
    t = np.arange(n, dtype=np.float64)
    return TimeSeries(np.sin(2 * np.pi * t / period) + noise * rng.standard_normal(n),
                      np.zeros(n, dtype=np.int64), name=name)


def _local_stats(x: np.ndarray, t: int, fallback: float) -> tuple[float, float]:
    lo = max(0, t - LOCAL_WINDOW // 2)
    hi = min(len(x), lo + LOCAL_WINDOW)
    lo = max(0, hi - LOCAL_WINDOW)
    seg = x[lo:hi]
    sd = float(seg.std())
    return float(seg.mean()), sd if sd >= 1e-12 else fallback


def _global_sigma(x: np.ndarray) -> float:
    sd = float(x.std())
    return sd if sd >= 1e-12 else 1.0


def _point_count(ratio: float, n: int) -> int:
    return min(n, int(math.ceil(ratio * n - 1e-9)))


def _place_segments(rng, n: int, length: int, count: int, span: int) -> list[int]:
    """Non-overlapping segment starts with ``start + span <= n``."""
    if span > n:
        raise ConfigurationError(f"segment of length {span} does not fit in {n} points")
    starts: list[int] = []
    for _ in range(count):
        for _attempt in range(1000):
            s = int(rng.integers(0, n - span + 1))
            if all(s + length <= o or o + length <= s for o in starts):
                starts.append(s)
                break
        else:
            raise ConfigurationError("could not place non-overlapping segments; lower the ratio")
    return sorted(starts)


def _inject_column(x: np.ndarray, spec: InjectionSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    n = len(x)
    y = x.copy()
    touched = np.zeros(n, dtype=bool)
    mu, sigma = float(x.mean()), _global_sigma(x)
    m = spec.magnitude
    if spec.kind in ("global", "contextual"):
        idx = rng.choice(n, size=_point_count(spec.ratio, n), replace=False)
        signs = rng.choice((-1.0, 1.0), size=len(idx))
        for t, s in zip(idx, signs):
            if spec.kind == "global":
                center, scale = mu, sigma
            else:
                center, scale = _local_stats(x, int(t), sigma)
            v = center + s * m * scale
            if v == x[t]:
                v = center - s * m * scale
            y[t] = v
            touched[t] = True
        return y, touched
    L = min(spec.length, n)
    count = max(1, int(math.ceil(spec.ratio * n / L - 1e-9)))
    span = 2 * L - 1 if spec.kind == "seasonal" else L
    for s in _place_segments(rng, n, L, count, span):
        seg = slice(s, s + L)
        if spec.kind == "shapelet":
            center, _ = _local_stats(x, s + L // 2, sigma)
            y[seg] = center
        elif spec.kind == "seasonal":
            y[seg] = x[s + 2 * np.arange(L)]
        else:  # trend
            ramp_len = max(1, L // 2)
            k = np.arange(L)
            y[seg] = x[seg] + m * sigma * np.minimum(k + 1, ramp_len) / ramp_len
        touched[seg] = True
    return y, touched


def inject_anomalies(series: TimeSeries, spec: InjectionSpec) -> TimeSeries:
    """Corrupt ``series`` per ``spec``; labels mark exactly the changed points.

    Existing labels are OR-ed with the new ones.
    """
    rng = make_rng(spec.seed, 21, KINDS.index(spec.kind))
    values = series.values.copy()
    changed = np.zeros(series.n, dtype=bool)
    for j in range(series.dims):
        y, touched = _inject_column(series.values[:, j], spec, rng)
        values[:, j] = y
        changed |= touched & (y != series.values[:, j])
    labels = changed.astype(np.int64)
    if series.labels is not None:
        labels = np.maximum(labels, series.labels)
    return TimeSeries(values, labels, name=f"{series.name}+{spec.kind}")


def contaminate(train_series: TimeSeries, ratio: float, seed: int) -> TimeSeries:
    """Replace ``ratio`` of the points with an even mix of global and contextual anomalies."""
    if ratio == 0:
        return TimeSeries(train_series.values.copy(), np.zeros(train_series.n, dtype=np.int64),
                          name=train_series.name)
    if not 0.0 < ratio <= 0.5:
        raise ConfigurationError(f"ratio must be in (0, 0.5], got {ratio}")
    rng = make_rng(seed, 31)
    n = train_series.n
    values = train_series.values.copy()
    changed = np.zeros(n, dtype=bool)
    for j in range(train_series.dims):
        x = train_series.values[:, j]
        mu, sigma = float(x.mean()), _global_sigma(x)
        idx = rng.choice(n, size=_point_count(ratio, n), replace=False)
        signs = rng.choice((-1.0, 1.0), size=len(idx))
        n_global = (len(idx) + 1) // 2
        for k, (t, s) in enumerate(zip(idx, signs)):
            center, scale = (mu, sigma) if k < n_global else _local_stats(x, int(t), sigma)
            v = center + s * 3.0 * scale
            if v == x[t]:
                v = center - s * 3.0 * scale
            values[t, j] = v
        changed[idx] |= values[idx, j] != x[idx]
    return TimeSeries(values, changed.astype(np.int64), name=f"{train_series.name}+cr{ratio:g}")


def preprocess(ts: TimeSeries, B: int, stride: int,
               stats: list[Stats] | None = None) -> tuple[list[WindowBatch], list[Stats]]:
    """Channel split, z-score (fitting stats unless given), and window every channel."""
    channels = channel_split(ts)
    if stats is not None and len(stats) != len(channels):
        raise ConfigurationError(f"have stats for {len(stats)} channels, series has {len(channels)}")
    batches, fitted = [], []
    for j, ch in enumerate(channels):
        z, st = standardize(ch, None if stats is None else stats[j])
        fitted.append(st)
        batches.append(windowize(z, B, stride, channel=j))
    return batches, fitted
