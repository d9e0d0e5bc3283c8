"""Stable/auxiliary decomposition of the latent and its two reconstruction losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .mi import Critic, MIEstimator, critic_scores
from .numerics import Tensor


@dataclass
class LatentPair:
    Y: Tensor
    Y_sta: Tensor
    Y_aux: Tensor
    perm_aux: np.ndarray
    perm_sta: np.ndarray
    Y_hat_aux: Tensor
    Y_hat_sta: Tensor


def split(Y) -> tuple[Tensor, Tensor]:
    Y = nx.as_tensor(Y)
    d = Y.shape[-1]
    if d % 2:
        raise ValueError(f"latent width {d} is odd; cannot halve it")
    h = d // 2
    return Y[..., :h], Y[..., h:]


def shuffle(X, perm) -> Tensor:
    """Reorder timestamps (rows); every feature column moves with its row."""
    return nx.permute_rows(X, perm)


def random_perms(rng: np.random.Generator, n: int, B: int) -> np.ndarray:
    """``n`` uniform permutations of ``range(B)``.

    For tiny windows (2 <= B <= 3) the identity is redrawn, since it would make
    the shuffle a no-op far too often to be a useful sanity fixture.
    """
    perms = np.argsort(rng.random((n, B)), axis=-1)
    if 2 <= B <= 3:
        ident = (perms == np.arange(B)).all(axis=1)
        while ident.any():
            perms[ident] = np.argsort(rng.random((int(ident.sum()), B)), axis=-1)
            ident = (perms == np.arange(B)).all(axis=1)
    return perms


def aux_branch(Y_sta, Y_aux, perm, W_p) -> Tensor:
    return nx.concat([Y_sta, shuffle(Y_aux, perm)], axis=-1) @ W_p


def sta_branch(Y_sta, Y_aux, perm, W_p) -> Tensor:
    return nx.concat([shuffle(Y_sta, perm), Y_aux], axis=-1) @ W_p


def frobenius_sq(X) -> Tensor:
    """Squared Frobenius norm over the last two axes."""
    X = nx.as_tensor(X)
    return (X * X).sum(axis=(-2, -1))


def aux_loss(Y, Y_hat_aux, perm) -> Tensor:
    """Per-window ``||shuffle(Y) - Y_hat_aux||_F^2`` with the branch's own permutation."""
    return frobenius_sq(shuffle(Y, perm) - Y_hat_aux)


def sta_loss(Y, Y_hat_sta, Y_sta, estimator: MIEstimator, critic: Critic,
             mi_weight: float = 1.0, update: bool = False, recon_scale: float = 1.0) -> Tensor:
    """Per-window ``recon_scale * ||Y - Y_hat_sta||_F^2 - I(Y, Y_sta)``."""
    recon = frobenius_sq(nx.as_tensor(Y) - Y_hat_sta)
    if recon_scale != 1.0:
        recon = recon * recon_scale
    if mi_weight == 0:
        return recon
    return recon - estimator.estimate(critic_scores(Y, Y_sta, critic), update=update) * mi_weight


def decompose(Y, W_p, rng: np.random.Generator | None = None, W_p_sta=None,
              perm_aux=None, perm_sta=None) -> LatentPair:
    """Both branches with independent per-window permutations (identity if no rng)."""
    Y = nx.as_tensor(Y)
    B = Y.shape[-2]
    lead = Y.shape[:-2]
    n = int(np.prod(lead)) if lead else 1
    if perm_aux is None:
        perm_aux = random_perms(rng, n, B).reshape(lead + (B,)) if rng is not None else np.arange(B)
    if perm_sta is None:
        perm_sta = random_perms(rng, n, B).reshape(lead + (B,)) if rng is not None else np.arange(B)
    Y_sta, Y_aux = split(Y)
    return LatentPair(
        Y, Y_sta, Y_aux, perm_aux, perm_sta,
        aux_branch(Y_sta, Y_aux, perm_aux, W_p),
        sta_branch(Y_sta, Y_aux, perm_sta, W_p if W_p_sta is None else W_p_sta),
    )
