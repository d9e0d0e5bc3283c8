"""Attention encoder: instance norm, linear embedding, stacked self-attention layers.

Row-vector convention throughout: a window of ``B`` timestamps embeds to a
``B x d`` matrix and every linear map is ``X @ W``.  Leading axes are batch
axes, so ``encode`` accepts a single window or an ``n x B`` stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 256
    layers: int = 3
    heads: int = 8
    d_ff: int | None = None
    eps: float = 1e-5
    conventional_addnorm: bool = False

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")

    @property
    def hidden(self) -> int:
        return 4 * self.d if self.d_ff is None else self.d_ff


def init_encoder(config: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d, ff = config.d, config.hidden
    p: dict[str, Tensor] = {
        "norm.gamma": nx.parameter(np.ones(1)),
        "norm.beta": nx.parameter(np.zeros(1)),
        "embed.W": nx.init_uniform(rng, (1, d)),
    }
    for l in range(config.layers):
        pre = f"layer{l}."
        for role in ("W_Q", "W_K", "W_V", "W_mult"):
            p[pre + role] = nx.init_uniform(rng, (d, d))
        p[pre + "norm1.gamma"] = nx.parameter(np.ones(d))
        p[pre + "norm1.beta"] = nx.parameter(np.zeros(d))
        p[pre + "W_1"] = nx.init_uniform(rng, (d, ff))
        p[pre + "W_2"] = nx.init_uniform(rng, (ff, d))
        p[pre + "norm2.gamma"] = nx.parameter(np.ones(d))
        p[pre + "norm2.beta"] = nx.parameter(np.zeros(d))
    for name, t in p.items():
        t.name = name
    return p


def instance_norm(window, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Standardize each window over its own timestamps, then scale and shift."""
    x = nx.as_tensor(window)
    mu = x.mean(axis=-1, keepdims=True)
    c = x - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    return c / nx.sqrt(var + eps) * gamma + beta


def _feature_norm(x: Tensor, gamma, beta, eps: float) -> Tensor:
    # statistics per timestamp over the feature axis
    mu = x.mean(axis=-1, keepdims=True)
    c = x - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    return c / nx.sqrt(var + eps) * gamma + beta


def _add_norm(x: Tensor, residual: Tensor | None, gamma, beta, eps: float, conventional: bool) -> Tensor:
    if conventional:
        return _feature_norm(residual + x, gamma, beta, eps)
    return x + _feature_norm(x, gamma, beta, eps)


def multi_head_attention(X: Tensor, W_Q, W_K, W_V, W_mult, heads: int, attention_out: list | None = None) -> Tensor:
    B, d = X.shape[-2], X.shape[-1]
    dh = d // heads
    lead = X.shape[:-2]

    def split(t: Tensor) -> Tensor:
        return nx.reshape(t, lead + (B, heads, dh)).swapaxes(-2, -3)

    Q, K, V = split(X @ W_Q), split(X @ W_K), split(X @ W_V)
    S = nx.softmax(Q @ K.T * (1.0 / np.sqrt(dh)), axis=-1)
    if attention_out is not None:
        attention_out.append(S.data)
    heads_out = nx.reshape((S @ V).swapaxes(-2, -3), lead + (B, d))
    return heads_out @ W_mult


def attention_layer(X, p: Mapping[str, Tensor], heads: int, eps: float = 1e-5,
                    conventional_addnorm: bool = False, attention_out: list | None = None) -> Tensor:
    """One encoder block; ``p`` holds the layer's weights without the layer prefix."""
    X = nx.as_tensor(X)
    Y1 = multi_head_attention(X, p["W_Q"], p["W_K"], p["W_V"], p["W_mult"], heads, attention_out)
    Y2 = _add_norm(Y1, X, p["norm1.gamma"], p["norm1.beta"], eps, conventional_addnorm)
    Y3 = nx.relu(Y2 @ p["W_1"]) @ p["W_2"]
    return _add_norm(Y3, Y2, p["norm2.gamma"], p["norm2.beta"], eps, conventional_addnorm)


def layer_params(params: Mapping[str, Tensor], l: int) -> dict[str, Tensor]:
    pre = f"layer{l}."
    return {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}


def encode(window, params: Mapping[str, Tensor], config: EncoderConfig,
           attention_out: list | None = None) -> Tensor:
    """Map a window (``B``) or stack of windows (``n x B``) to latents ``... x B x d``."""
    x = nx.as_tensor(window)
    if x.shape[-1] < 2:
        raise ValueError("windows need at least two timestamps")
    H = instance_norm(x, params["norm.gamma"], params["norm.beta"], config.eps)
    Y = nx.reshape(H, H.shape + (1,)) @ params["embed.W"]
    for l in range(config.layers):
        Y = attention_layer(Y, layer_params(params, l), config.heads, config.eps,
                            config.conventional_addnorm, attention_out)
    return Y


def frozen(params: Mapping[str, Tensor]) -> dict[str, Tensor]:
    """Untracked copies, for forward passes that must stay off the gradient graph."""
    return {k: Tensor(v.data.copy()) for k, v in params.items()}
