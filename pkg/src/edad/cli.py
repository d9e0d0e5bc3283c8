"""Command line: ``inject``, ``train``, ``score``, ``eval`` and ``bench``.

Every command reads one flat ``key=value`` configuration (file via ``--config``,
then ``--key value`` overrides), validates it, and writes the resolved snapshot
``config.resolved`` next to its outputs.  Feeding that snapshot back through
``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import (KINDS, InjectionSpec, TimeSeries, contaminate, inject_anomalies, load_csv,
                   preprocess, sine_series, train_test_split, write_csv)
from .metrics import EvalReport, evaluate
from .mi import CRITICS, ESTIMATORS
from .scoring import (detect, detect_with, point_adjust, read_scores,
                      threshold, write_scores)
from .trainer import EDADModel, TrainConfig, train, train_reconstruction_baseline

log = logging.getLogger("edad")

SNAPSHOT = "config.resolved"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig(TrainConfig):
    # data: CSV paths, or a synthetic sine series when empty
    input: str = ""
    train_path: str = ""
    test_path: str = ""
    n: int = 10000
    period: float = 50.0
    noise: float = 0.1
    split: float = 0.7
    # injection (the ``inject`` command and the synthetic test split)
    kind: str = "global"
    ratio: float = 0.02
    magnitude: float = 3.0
    length: int = 50
    contamination: float = 0.05
    # scoring and evaluation
    checkpoint: str = ""
    scores: str = ""
    anomaly_ratio: float = 0.01
    score_stride: int = 0  # 0 means the training stride
    reduce: str = "mean"
    channel_reduce: str = "mean"
    point_adjust: bool = False
    pool_train_scores: bool = False
    max_buffer: int = 50
    # sweeps
    grid: str = "contamination"
    cr_grid: str = "0.01,0.02,0.04,0.06,0.08,0.1,0.2"
    estimators: str = ",".join(ESTIMATORS)
    critics: str = ",".join(CRITICS)
    out: str = "out"

    def __post_init__(self):
        super().__post_init__()
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        if not 0.0 < self.split < 1.0:
            raise ConfigError("split must lie in (0, 1)")
        if not 0.0 < self.anomaly_ratio < 1.0:
            raise ConfigError("anomaly_ratio must lie in (0, 1)")
        if not 0.0 <= self.contamination <= 0.5:
            raise ConfigError("contamination must lie in [0, 0.5]")
        if self.reduce not in ("mean", "max") or self.channel_reduce not in ("mean", "max"):
            raise ConfigError("reduce and channel_reduce must be 'mean' or 'max'")
        if self.grid not in ("contamination", "ablation"):
            raise ConfigError("grid must be 'contamination' or 'ablation'")
        for name in self.estimator_list():
            if name not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {name!r} in estimators")
        for name in self.critic_list():
            if name not in CRITICS:
                raise ConfigError(f"unknown critic {name!r} in critics")
        self.cr_list()

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: getattr(self, k) for k in names})

    def cr_list(self) -> list[float]:
        try:
            return [float(x) for x in self.cr_grid.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"cr_grid is not a comma-separated list of ratios: {self.cr_grid!r}") from None

    def estimator_list(self) -> list[str]:
        return [x.strip() for x in self.estimators.split(",") if x.strip()]

    def critic_list(self) -> list[str]:
        return [x.strip() for x in self.critics.split(",") if x.strip()]


FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(key: str, text: str):
    default = FIELDS[key].default
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


def read_config(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, val)
    return values


def write_config(cfg: RunConfig, path) -> None:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name}={repr(v) if isinstance(v, float) else v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def resolve(args: argparse.Namespace) -> RunConfig:
    values = read_config(args.config) if args.config else {}
    for key in FIELDS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = _parse_value(key, v)
    try:
        return RunConfig(**values)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- data plumbing

def _series(cfg: RunConfig, seed_offset: int = 0) -> TimeSeries:
    return sine_series(cfg.n, cfg.period, cfg.noise, seed=cfg.seed + seed_offset)


def load_train(cfg: RunConfig, contamination: float | None = None) -> TimeSeries:
    if cfg.train_path:
        return load_csv(cfg.train_path)
    train_part, _ = train_test_split(_series(cfg), cfg.split)
    cr = cfg.contamination if contamination is None else contamination
    return contaminate(train_part, cr, seed=cfg.seed + 1)


def load_test(cfg: RunConfig) -> TimeSeries:
    if cfg.test_path:
        return load_csv(cfg.test_path)
    _, test_part = train_test_split(_series(cfg), cfg.split)
    return inject_anomalies(test_part, InjectionSpec(cfg.kind, cfg.ratio, cfg.magnitude, cfg.seed + 2, cfg.length))


def _predict(cfg: RunConfig, test_scores: np.ndarray, train_scores: np.ndarray | None, labels):
    if train_scores is None:
        preds = threshold(test_scores, cfg.anomaly_ratio)
    else:
        pooled = threshold(np.concatenate([train_scores, test_scores]), cfg.anomaly_ratio)
        preds = pooled[len(train_scores):]
    if cfg.point_adjust and labels is not None:
        preds = point_adjust(preds, labels)
    return preds


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / SNAPSHOT)
    return out


# ---------------------------------------------------------------- commands

def cmd_inject(cfg: RunConfig) -> int:
    out = _out(cfg)
    base = load_csv(cfg.input) if cfg.input else _series(cfg)
    spec = InjectionSpec(cfg.kind, cfg.ratio, cfg.magnitude, cfg.seed, cfg.length)
    ts = inject_anomalies(base, spec)
    write_csv(ts, out / "series.csv")
    log.info("wrote %s with %d labeled rows", out / "series.csv", int(ts.labels.sum()))
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out = _out(cfg)
    tc = cfg.train_config()
    batches, stats = preprocess(load_train(cfg), tc.B, tc.stride)
    train(batches, tc, stats=stats, out_dir=out)
    return 0


def cmd_score(cfg: RunConfig) -> int:
    out = _out(cfg)
    model = EDADModel.load(cfg.checkpoint or out / "checkpoint.bin")
    stride = cfg.score_stride or cfg.stride
    test = load_test(cfg)
    res = detect(model, test, stride, cfg.reduce, cfg.channel_reduce)
    train_scores = None
    if cfg.pool_train_scores:
        train_scores = detect(model, load_train(cfg), stride, cfg.reduce, cfg.channel_reduce).scores
    preds = _predict(cfg, res.scores, train_scores, test.labels)
    write_scores(out / "scores.csv", res, preds, test.labels)
    return 0


def write_report(report: EvalReport, out: Path, stem: str = "report") -> None:
    (out / f"{stem}.txt").write_text(report.to_text(), encoding="utf-8")
    (out / f"{stem}.csv").write_text(report.csv_header() + "\n" + report.to_csv_row() + "\n", encoding="utf-8")


def cmd_eval(cfg: RunConfig) -> int:
    out = _out(cfg)
    scores, preds, labels = read_scores(cfg.scores or out / "scores.csv")
    if labels is None:
        raise ConfigError("scores file has no label column; cannot evaluate")
    report = evaluate(scores, preds, labels, cfg.max_buffer)
    write_report(report, out)
    sys.stdout.write(report.to_text())
    return 0


METRIC_KEYS = ("P", "R", "F1", "A_PR", "A_ROC", "V_PR", "V_ROC")


def _bench_cell(cfg: RunConfig, cell: dict) -> dict:
    """One sweep cell: train both arms, score the shared test split, evaluate."""
    cfg = replace(cfg, **{k: v for k, v in cell.items() if k in FIELDS})
    tc = cfg.train_config()
    train_ts = load_train(cfg, cell.get("contamination"))
    test = load_test(cfg)
    batches, stats = preprocess(train_ts, tc.B, tc.stride)
    stride = cfg.score_stride or cfg.stride
    model, _ = train(batches, tc, stats=stats)
    edad = detect(model, test, stride, cfg.reduce, cfg.channel_reduce)
    base_model, _ = train_reconstruction_baseline(batches, tc, stats=stats)
    base = detect_with(base_model.score_windows, test, tc.B, stride, stats)
    row = dict(cell)
    for arm, res in (("edad", edad), ("baseline", base)):
        preds = _predict(cfg, res.scores, None, test.labels)
        report = evaluate(res.scores, preds, test.labels, cfg.max_buffer)
        for key in METRIC_KEYS:
            row[f"{arm}_{key}"] = getattr(report, key)
    return row


def _cells(cfg: RunConfig) -> list[dict]:
    if cfg.grid == "contamination":
        return [{"contamination": cr} for cr in cfg.cr_list()]
    return [{"estimator": e, "critic": c} for e in cfg.estimator_list() for c in cfg.critic_list()]


def _run_cell(args):
    cfg, cell = args
    try:
        return _bench_cell(cfg, cell), None
    except Exception as exc:  # a failed cell is recorded, the sweep goes on
        return dict(cell), f"{type(exc).__name__}: {exc}"


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def cmd_bench(cfg: RunConfig) -> int:
    out = _out(cfg)
    cells = _cells(cfg)
    keys = list(cells[0]) if cells else []
    metric_cols = [f"{arm}_{k}" for arm in ("edad", "baseline") for k in METRIC_KEYS]
    workers = max(1, int(os.environ.get("EDAD_THREADS", "1") or 1))
    jobs = [(cfg, c) for c in cells]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    failed = 0
    with open(out / "bench.csv", "w", newline="", encoding="utf-8") as wide, \
            open(out / "bench_long.csv", "w", newline="", encoding="utf-8") as long_:
        w = csv.writer(wide, lineterminator="\n")
        lw = csv.writer(long_, lineterminator="\n")
        w.writerow(keys + metric_cols + ["error"])
        lw.writerow(keys + ["arm", "metric", "value"])
        for row, err in results:
            failed += err is not None
            w.writerow([_fmt(row[k]) for k in keys]
                       + [_fmt(row.get(c, float("nan"))) for c in metric_cols] + [err or ""])
            if err is None:
                for arm in ("edad", "baseline"):
                    for k in METRIC_KEYS:
                        lw.writerow([_fmt(row[c]) for c in keys] + [arm, k.replace("_", "-"), _fmt(row[f"{arm}_{k}"])])
            else:
                log.error("cell %s failed: %s", {k: row[k] for k in keys}, err)
    return 1 if failed else 0


COMMANDS = {"inject": cmd_inject, "train": cmd_train, "score": cmd_score, "eval": cmd_eval, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edad", description="Encode-then-decompose anomaly detection")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value file")
        p.add_argument("-v", "--verbose", action="store_true")
        for key in FIELDS:
            p.add_argument(f"--{key}", dest=key, metavar=type(FIELDS[key].default).__name__.upper())
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ValueError, OSError, RuntimeError, nx.CheckpointError) as exc:
        sys.stderr.write(f"edad {args.command}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
