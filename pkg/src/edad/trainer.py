"""Objective assembly, mean-teacher regularizer, training loop and the AE baseline."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .data import Stats, WindowBatch
from .decomposer import aux_loss, decompose, frobenius_sq, sta_loss
from .encoder import EncoderConfig, encode, frozen, init_encoder
from .mi import CRITICS, ESTIMATORS, Critic, MIEstimator, init_critic
from .numerics import AdamState, NonFiniteError, Tensor

log = logging.getLogger(__name__)

LAMBDA_GRID = (0.1, 0.5, 1.0, 2.0, 3.0)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lr: float = 5e-4
    max_epochs: int = 10
    patience: int = 3
    min_delta: float = 1e-4
    batch_size: int = 64
    ema_decay: float = 0.99
    seed: int = 0
    estimator: str = "infonce"
    critic: str = "separable"
    standard_infonce: bool = False
    d: int = 256
    layers: int = 3
    heads: int = 8
    d_ff: int = 0  # 0 means 4 * d
    B: int = 100
    stride: int = 10
    conventional_addnorm: bool = False
    tie_projection: bool = True
    baseline_lr: float = 1e-3
    normalize_terms: bool = True  # divide Frobenius terms by B * d

    def __post_init__(self):
        for lam in (self.lambda1, self.lambda2, self.lambda3):
            if lam < 0:
                raise ValueError("loss weights must be non-negative")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.critic not in CRITICS:
            raise ValueError(f"unknown critic {self.critic!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError("batch_size and max_epochs must be >= 1, patience >= 0")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(d=self.d, layers=self.layers, heads=self.heads,
                             d_ff=self.d_ff or None, conventional_addnorm=self.conventional_addnorm)


# ---------------------------------------------------------------- model container

@dataclass
class EDADModel:
    encoder_config: EncoderConfig
    encoder: dict[str, Tensor]
    W_p: Tensor
    critic: Critic
    estimator: MIEstimator
    teacher: dict[str, np.ndarray]
    W_p_sta: Tensor | None = None
    adam: AdamState = field(default_factory=AdamState)
    stats: list[Stats] = field(default_factory=list)
    B: int = 100

    @classmethod
    def initialize(cls, config: TrainConfig) -> "EDADModel":
        rng = nx.make_rng(config.seed, 1)
        ec = config.encoder_config()
        enc = init_encoder(ec, rng)
        d = ec.d
        if d % 2:
            raise ValueError("model width must be even to halve the latent")
        W_p = nx.init_uniform(rng, (d, d), name="W_p")
        W_p_sta = None if config.tie_projection else nx.init_uniform(rng, (d, d), name="W_p_sta")
        critic = init_critic(config.critic, d, d // 2, rng,
                             hidden=d // 2 if config.critic == "concatenated" else None)
        est = MIEstimator(config.estimator, standard_infonce=config.standard_infonce)
        model = cls(ec, enc, W_p, critic, est, teacher={}, W_p_sta=W_p_sta, B=config.B)
        model.sync_teacher()
        model.adam = AdamState.for_params(model.trainable())
        return model

    def trainable(self) -> dict[str, Tensor]:
        p = {f"encoder.{k}": v for k, v in self.encoder.items()}
        p["decomposer.W_p"] = self.W_p
        if self.W_p_sta is not None:
            p["decomposer.W_p_sta"] = self.W_p_sta
        p.update({f"critic.{k}": v for k, v in self.critic.params.items()})
        return p

    def sync_teacher(self) -> None:
        self.teacher = {k: v.data.copy() for k, v in self.encoder.items()}

    def teacher_tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.teacher.items()}

    # -- serialization (numerics checkpoint format)

    def to_arrays(self) -> dict[str, np.ndarray]:
        ec = self.encoder_config
        meta = {
            "meta.d": ec.d, "meta.layers": ec.layers, "meta.heads": ec.heads,
            "meta.d_ff": ec.hidden, "meta.eps": ec.eps,
            "meta.conventional_addnorm": float(ec.conventional_addnorm),
            "meta.estimator": ESTIMATORS.index(self.estimator.kind),
            "meta.standard_infonce": float(self.estimator.standard_infonce),
            "meta.critic": CRITICS.index(self.critic.kind),
            "meta.B": self.B,
        }
        out = {k: np.asarray(v, dtype=np.float64) for k, v in meta.items()}
        if self.stats:
            out["stats.mean"] = np.array([s.mean for s in self.stats])
            out["stats.std"] = np.array([s.std for s in self.stats])
        for k, v in self.trainable().items():
            out[k] = v.data.copy()
        for k, v in self.teacher.items():
            out[f"teacher.{k}"] = v
        out["mine.average"] = np.asarray(self.estimator.mine_average)
        out["adam.step"] = np.asarray(float(self.adam.step))
        for k in self.adam.m:
            out[f"adam.m.{k}"] = self.adam.m[k]
            out[f"adam.v.{k}"] = self.adam.v[k]
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "EDADModel":
        def scalar(k):
            return float(arrays[k])

        ec = EncoderConfig(d=int(scalar("meta.d")), layers=int(scalar("meta.layers")),
                           heads=int(scalar("meta.heads")), d_ff=int(scalar("meta.d_ff")),
                           eps=scalar("meta.eps"),
                           conventional_addnorm=bool(scalar("meta.conventional_addnorm")))

        def group(prefix):
            return {k[len(prefix):]: nx.parameter(v, name=k[len(prefix):])
                    for k, v in arrays.items() if k.startswith(prefix)}

        encoder = group("encoder.")
        critic = Critic(CRITICS[int(scalar("meta.critic"))], group("critic."))
        est = MIEstimator(ESTIMATORS[int(scalar("meta.estimator"))],
                          standard_infonce=bool(scalar("meta.standard_infonce")),
                          mine_average=scalar("mine.average"))
        W_p_sta = nx.parameter(arrays["decomposer.W_p_sta"]) if "decomposer.W_p_sta" in arrays else None
        teacher = {k[len("teacher."):]: np.array(v) for k, v in arrays.items() if k.startswith("teacher.")}
        stats = []
        if "stats.mean" in arrays:
            stats = [Stats(float(m), float(s)) for m, s in zip(arrays["stats.mean"], arrays["stats.std"])]
        adam = AdamState(step=int(scalar("adam.step")))
        for k, v in arrays.items():
            if k.startswith("adam.m."):
                adam.m[k[len("adam.m."):]] = np.array(v)
            elif k.startswith("adam.v."):
                adam.v[k[len("adam.v."):]] = np.array(v)
        return cls(ec, encoder, nx.parameter(arrays["decomposer.W_p"]), critic, est, teacher,
                   W_p_sta=W_p_sta, adam=adam, stats=stats, B=int(scalar("meta.B")))

    def save(self, path) -> None:
        nx.save_checkpoint(path, self.to_arrays())

    @classmethod
    def load(cls, path) -> "EDADModel":
        return cls.from_arrays(nx.load_checkpoint(path))


# ---------------------------------------------------------------- loss terms

def consistency_loss(Y_student, Y_teacher, W_p) -> Tensor:
    """Per-window ``||Y_s W_p - Y_t W_p||_F^2``; the teacher latent is a constant."""
    Y_teacher = Tensor(nx.as_tensor(Y_teacher).data)
    return frobenius_sq(nx.as_tensor(Y_student) @ W_p - Y_teacher @ W_p)


def ema_update(teacher: dict[str, np.ndarray], student: Mapping[str, Tensor], decay: float) -> dict[str, np.ndarray]:
    for k, v in student.items():
        teacher[k] = decay * teacher[k] + (1.0 - decay) * v.data
    return teacher


def _term(name: str, fn):
    try:
        value = fn()
    except NonFiniteError as exc:
        raise TrainingError(f"non-finite value while computing {name}: {exc}") from None
    if not np.isfinite(value.data).all():
        raise TrainingError(f"{name} is non-finite")
    return value


def total_loss(windows, model: EDADModel, config: TrainConfig,
               rng: np.random.Generator | None = None, update_mine: bool = False,
               perms: tuple[np.ndarray, np.ndarray] | None = None):
    """Weighted objective over a batch of windows plus the raw ``(sta, aux, reg)`` terms."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 1:
        windows = windows[None, :]
    Y = _term("encoder", lambda: encode(windows, model.encoder, model.encoder_config))
    pa, ps = perms if perms is not None else (None, None)
    try:
        pair = decompose(Y, model.W_p, rng, W_p_sta=model.W_p_sta, perm_aux=pa, perm_sta=ps)
    except NonFiniteError as exc:
        raise TrainingError(f"non-finite value in the L_sta/L_aux branches: {exc}") from None
    scale = 1.0 / (Y.shape[-2] * Y.shape[-1]) if config.normalize_terms else 1.0
    L_sta = _term("L_sta", lambda: sta_loss(Y, pair.Y_hat_sta, pair.Y_sta, model.estimator, model.critic,
                                            update=update_mine, recon_scale=scale).mean())
    L_aux = _term("L_aux", lambda: aux_loss(Y, pair.Y_hat_aux, pair.perm_aux).mean() * scale)

    def reg():
        Y_t = encode(windows, model.teacher_tensors(), model.encoder_config)
        return consistency_loss(Y, Y_t, model.W_p).mean() * scale

    L_reg = _term("L_reg", reg)
    total = L_sta * config.lambda1 + L_aux * config.lambda2 + L_reg * config.lambda3
    total = _term("total", lambda: total)
    return total, {"total": total.item(), "sta": L_sta.item(), "aux": L_aux.item(), "reg": L_reg.item()}


# ---------------------------------------------------------------- training loop

@dataclass
class EpochRecord:
    epoch: int
    total: float
    sta: float
    aux: float
    reg: float
    seconds: float


LOG_HEADER = ("epoch", "total", "L_sta", "L_aux", "L_reg", "seconds")


def write_log(records: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in records:
            w.writerow([r.epoch, repr(r.total), repr(r.sta), repr(r.aux), repr(r.reg), f"{r.seconds:.3f}"])


def stack_windows(batches: Sequence[WindowBatch] | np.ndarray) -> np.ndarray:
    if isinstance(batches, np.ndarray):
        return batches.reshape(-1, batches.shape[-1])
    if not batches:
        raise ValueError("no windows to train on")
    return np.concatenate([b.windows for b in batches], axis=0)


class EarlyStopping:
    """Stop after ``max(patience, 1)`` consecutive epochs without a ``min_delta`` gain."""

    def __init__(self, patience: int, min_delta: float):
        self.patience = max(patience, 1)
        self.min_delta = min_delta
        self.best = np.inf
        self.bad = 0

    def update(self, value: float) -> bool:
        """Record an epoch; returns True if it is the new best."""
        if value < self.best - self.min_delta:
            self.best = value
            self.bad = 0
            return True
        self.bad += 1
        return False

    @property
    def stop(self) -> bool:
        return self.bad >= self.patience


def train(dataset, config: TrainConfig, stats: list[Stats] | None = None,
          out_dir=None, model: EDADModel | None = None) -> tuple[EDADModel, list[EpochRecord]]:
    """Fit EDAD on windows (``WindowBatch`` list or ``n x B`` array).

    Returns the best-epoch model.  With ``out_dir`` the log and both the best and
    final checkpoints are written there.
    """
    windows = stack_windows(dataset)
    if windows.shape[1] != config.B:
        raise ValueError(f"windows have length {windows.shape[1]}, config.B={config.B}")
    model = model or EDADModel.initialize(config)
    model.stats = list(stats or model.stats)
    model.sync_teacher()
    params = model.trainable()
    order_rng = nx.make_rng(config.seed, 2)
    perm_rng = nx.make_rng(config.seed, 3)
    stopper = EarlyStopping(config.patience, config.min_delta)
    records: list[EpochRecord] = []
    best_arrays = model.to_arrays()
    n = len(windows)
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = order_rng.permutation(n)
        sums = np.zeros(4)
        for start in range(0, n, config.batch_size):
            batch = windows[order[start:start + config.batch_size]]
            total, parts = total_loss(batch, model, config, perm_rng, update_mine=True)
            grads = nx.gradient(total, params)
            nx.adam_step(params, grads, model.adam, config.lr)
            ema_update(model.teacher, model.encoder, config.ema_decay)
            sums += len(batch) * np.array([parts["total"], parts["sta"], parts["aux"], parts["reg"]])
        means = sums / n
        rec = EpochRecord(epoch, *map(float, means), time.perf_counter() - t0)
        records.append(rec)
        log.info("epoch %d total=%.6g sta=%.6g aux=%.6g reg=%.6g (%.1fs)", epoch, *means, rec.seconds)
        if stopper.update(rec.total):
            best_arrays = model.to_arrays()
        if stopper.stop:
            break
    final_arrays = model.to_arrays()
    best = EDADModel.from_arrays(best_arrays)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        nx.save_checkpoint(out / "checkpoint.bin", best_arrays)
        nx.save_checkpoint(out / "checkpoint_last.bin", final_arrays)
        write_log(records, out / "train_log.csv")
    return best, records


# ---------------------------------------------------------------- reconstruction baseline

@dataclass
class ReconstructionBaseline:
    """Bottleneck autoencoder ``B -> hidden -> B`` over raw (standardized) windows."""

    params: dict[str, Tensor]
    stats: list[Stats] = field(default_factory=list)

    @classmethod
    def initialize(cls, B: int, hidden: int | None = None, seed: int = 0) -> "ReconstructionBaseline":
        hidden = hidden or max(1, B // 4)
        rng = nx.make_rng(seed, 5)
        return cls({
            "W1": nx.init_uniform(rng, (B, hidden)),
            "b1": nx.parameter(np.zeros(hidden)),
            "W2": nx.init_uniform(rng, (hidden, B)),
            "b2": nx.parameter(np.zeros(B)),
        })

    def reconstruct(self, windows, params=None) -> Tensor:
        p = params or self.params
        h = nx.relu(nx.as_tensor(windows) @ p["W1"] + p["b1"])
        return h @ p["W2"] + p["b2"]

    def loss(self, windows) -> Tensor:
        err = nx.as_tensor(windows) - self.reconstruct(windows)
        return (err * err).sum(axis=-1).mean()

    def score_windows(self, windows) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.float64)
        p = frozen(self.params)
        return (windows - self.reconstruct(windows, p).data) ** 2


def train_reconstruction_baseline(dataset, config: TrainConfig, hidden: int | None = None,
                                  stats: list[Stats] | None = None) -> tuple[ReconstructionBaseline, list[float]]:
    windows = stack_windows(dataset)
    model = ReconstructionBaseline.initialize(windows.shape[1], hidden, config.seed)
    model.stats = list(stats or [])
    adam = AdamState.for_params(model.params)
    rng = nx.make_rng(config.seed, 6)
    stopper = EarlyStopping(config.patience, config.min_delta)
    best = {k: v.data.copy() for k, v in model.params.items()}
    history = []
    for _ in range(config.max_epochs):
        order = rng.permutation(len(windows))
        total = 0.0
        for start in range(0, len(windows), config.batch_size):
            batch = windows[order[start:start + config.batch_size]]
            loss = _term("reconstruction", lambda: model.loss(batch))
            nx.adam_step(model.params, nx.gradient(loss, model.params), adam, config.baseline_lr)
            total += loss.item() * len(batch)
        history.append(total / len(windows))
        if stopper.update(history[-1]):
            best = {k: v.data.copy() for k, v in model.params.items()}
        if stopper.stop:
            break
    for k, v in best.items():
        model.params[k].data = v
    return model, history


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)


def config_field_names() -> list[str]:
    return [f.name for f in fields(TrainConfig)]
