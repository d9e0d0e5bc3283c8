"""Critic networks and variational mutual-information estimators.

A critic maps two row-aligned matrices ``A`` (``B x d_a``) and ``Z``
(``B x d_z``) to a score matrix ``F`` with ``F[i, j] = f(A_i, Z_j)``.  The
diagonal holds joint samples, off-diagonal entries act as negatives drawn
from the product of marginals within the same window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor

ESTIMATORS = ("infonce", "nwj", "mine", "jsd")
CRITICS = ("separable", "bilinear", "concatenated")
SCORE_CLAMP = 50.0


@dataclass
class Critic:
    kind: str
    params: dict[str, Tensor]

    def scores(self, A, Z) -> Tensor:
        return critic_scores(A, Z, self)


def init_critic(kind: str, d_a: int, d_z: int, rng: np.random.Generator,
                hidden: int | None = None, out: int | None = None) -> Critic:
    """Fresh critic.  Separable default widths: ``d_a -> d_a -> d_a // 2``."""
    if kind not in CRITICS:
        raise ValueError(f"unknown critic kind {kind!r}")
    hidden = hidden or d_a
    out = out or max(1, d_a // 2)
    if kind == "separable":
        p = {
            "phi.a.W": nx.init_uniform(rng, (d_a, hidden)),
            "phi.a.b": nx.parameter(np.zeros(hidden)),
            "phi.z.W": nx.init_uniform(rng, (d_z, hidden)),
            "phi.z.b": nx.parameter(np.zeros(hidden)),
            "phi.W_out": nx.init_uniform(rng, (hidden, out)),
        }
    elif kind == "bilinear":
        p = {"bilinear.W": nx.init_uniform(rng, (d_a, d_z))}
    else:
        p = {
            "concat.W_a": nx.init_uniform(rng, (d_a, hidden), fan_in=d_a + d_z),
            "concat.W_z": nx.init_uniform(rng, (d_z, hidden), fan_in=d_a + d_z),
            "concat.b": nx.parameter(np.zeros(hidden)),
            "concat.w_out": nx.init_uniform(rng, (hidden, 1)),
        }
    return Critic(kind, p)


def phi(x, p, side: str) -> Tensor:
    """Separable embedding: per-argument input layer, ReLU, shared output layer."""
    h = nx.relu(nx.as_tensor(x) @ p[f"phi.{side}.W"] + p[f"phi.{side}.b"])
    return h @ p["phi.W_out"]


def critic_scores(A, Z, critic: Critic) -> Tensor:
    p = critic.params
    if critic.kind == "separable":
        return phi(A, p, "a") @ phi(Z, p, "z").T
    if critic.kind == "bilinear":
        return nx.as_tensor(A) @ p["bilinear.W"] @ nx.as_tensor(Z).T
    ha = nx.as_tensor(A) @ p["concat.W_a"]
    hz = nx.as_tensor(Z) @ p["concat.W_z"]
    lead = ha.shape[:-2]
    B, h = ha.shape[-2], ha.shape[-1]
    pair = nx.reshape(ha, lead + (B, 1, h)) + nx.reshape(hz, lead + (1, B, h)) + p["concat.b"]
    out = nx.relu(pair) @ p["concat.w_out"]
    return nx.reshape(out, lead + (B, B))


def _off_mask(B: int) -> np.ndarray:
    if B < 2:
        raise ValueError("need at least two samples to form negatives")
    return 1.0 - np.eye(B)


@dataclass
class MIEstimator:
    """Estimator of one kind plus its mutable training state.

    ``estimate`` returns one value per window (leading axes of ``F``);
    ``pointwise`` returns per-timestamp contributions whose mean is the
    estimate (MINE: current-batch partition instead of the running one).
    """

    kind: str = "infonce"
    standard_infonce: bool = False
    mine_decay: float = 0.99
    mine_average: float = 1.0
    clamp: float = SCORE_CLAMP
    clamp_events: int = field(default=0)

    def __post_init__(self):
        if self.kind not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.kind!r}")

    def _clamped(self, F: Tensor) -> Tensor:
        hits = int(np.count_nonzero(np.abs(F.data) > self.clamp))
        if hits:
            self.clamp_events += hits
            return nx.clamp(F, -self.clamp, self.clamp)
        return F

    def estimate(self, F, update: bool = False) -> Tensor:
        F = nx.as_tensor(F)
        B = F.shape[-1]
        off = _off_mask(B)
        joint = nx.diagonal(F).mean(axis=-1)
        n_off = B * (B - 1)
        if self.kind == "jsd":
            pos = nx.neg(nx.softplus(nx.neg(nx.diagonal(F)))).mean(axis=-1)
            neg = (nx.softplus(F) * off).sum(axis=(-2, -1)) * (1.0 / n_off)
            return pos - neg
        Fc = self._clamped(F)
        if self.kind == "infonce" and self.standard_infonce:
            return joint - (nx.logsumexp(Fc, axis=-1) - math.log(B)).mean(axis=-1)
        marg = (nx.exp(Fc) * off).sum(axis=(-2, -1)) * (1.0 / n_off)
        if self.kind == "infonce":
            return joint - marg
        if self.kind == "nwj":
            return joint - marg * math.exp(-1.0)
        # mine: log of a running partition average, gradient bias-corrected by it
        batch_value = float(np.mean(marg.data))
        avg = self.mine_average
        if update:
            avg = self.mine_decay * avg + (1.0 - self.mine_decay) * batch_value
            self.mine_average = avg
        return joint - (math.log(avg) + (marg - Tensor(marg.data)) * (1.0 / avg))

    def pointwise(self, F) -> Tensor:
        F = nx.as_tensor(F)
        B = F.shape[-1]
        off = _off_mask(B)
        diag = nx.diagonal(F)
        if self.kind == "jsd":
            return nx.neg(nx.softplus(nx.neg(diag))) - (nx.softplus(F) * off).sum(axis=-1) * (1.0 / (B - 1))
        Fc = self._clamped(F)
        if self.kind == "infonce" and self.standard_infonce:
            return diag - (nx.logsumexp(Fc, axis=-1) - math.log(B))
        row = (nx.exp(Fc) * off).sum(axis=-1) * (1.0 / (B - 1))
        if self.kind == "infonce":
            return diag - row
        if self.kind == "nwj":
            return diag - row * math.exp(-1.0)
        return diag - nx.log(row)


def estimate(kind: str, F, *, standard_infonce: bool = False, mine_average: float = 1.0) -> Tensor:
    return MIEstimator(kind, standard_infonce=standard_infonce, mine_average=mine_average).estimate(F)


def pointwise_scores(kind: str, F, *, standard_infonce: bool = False) -> Tensor:
    """Per-timestamp contributions ``c_i``; the anomaly score is ``-c_i``."""
    return MIEstimator(kind, standard_infonce=standard_infonce).pointwise(F)


def fit_critic(sample, kind: str = "infonce", critic: str = "separable", steps: int = 2000,
               batch: int = 128, lr: float = 1e-3, seed: int = 0, standard_infonce: bool = False,
               hidden: int = 32, out: int = 16, eval_batches: int = 20) -> tuple[float, Critic]:
    """Train a critic alone to maximize the bound on pairs from ``sample(rng, n)``.

    ``sample`` returns ``(A, Z)`` arrays of shape ``n x d_a`` and ``n x d_z``.
    Returns the bound averaged over ``eval_batches`` fresh batches, and the critic.
    """
    rng = nx.make_rng(seed, 41)
    A0, Z0 = sample(rng, 2)
    c = init_critic(critic, A0.shape[1], Z0.shape[1], rng, hidden=hidden, out=out)
    est = MIEstimator(kind, standard_infonce=standard_infonce)
    state = nx.AdamState.for_params(c.params)
    for _ in range(steps):
        A, Z = sample(rng, batch)
        loss = nx.neg(est.estimate(critic_scores(A, Z, c), update=True))
        nx.adam_step(c.params, nx.gradient(loss, c.params), state, lr)
    frozen = Critic(c.kind, {k: Tensor(v.data) for k, v in c.params.items()})
    vals = [est.estimate(critic_scores(*sample(rng, batch), frozen)).item() for _ in range(eval_batches)]
    return float(np.mean(vals)), c


def gaussian_pairs(rho: float):
    """Sampler of unit-variance 1-D Gaussian pairs with correlation ``rho``."""
    def sample(rng, n):
        x = rng.standard_normal((n, 1))
        z = rho * x + math.sqrt(1 - rho * rho) * rng.standard_normal((n, 1))
        return x, z
    return sample


def gaussian_mi(rho: float) -> float:
    return -0.5 * math.log(1 - rho * rho)
