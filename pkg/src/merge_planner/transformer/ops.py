"""Attention primitives on numpy arrays with arbitrary leading batch dims."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ConfigError, DomainError, NumericGuardError


def check_finite(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericGuardError(f"non-finite values in {name}")


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal encoding: sin on even columns, cos on odd columns."""
    if length < 1:
        raise DomainError("sequence length must be at least 1")
    if d_model % 2:
        raise ConfigError("d_model must be even for sinusoidal positional encoding")
    pos = np.arange(length, dtype=float)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=float)[None, :]
    angle = pos / np.power(10000.0, i2 / d_model)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def softmax(s: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def scaled_dot_product_attention(Q, K, V):
    """``softmax(Q K^T / sqrt(d_k)) V``; returns ``(output, weights)``."""
    Q, K, V = (np.asarray(a, dtype=float) for a in (Q, K, V))
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2] or Q.shape[:-2] != K.shape[:-2]:
        raise DomainError(f"incompatible shapes Q{Q.shape} K{K.shape} V{V.shape}")
    scores = Q @ np.swapaxes(K, -1, -2) / np.sqrt(Q.shape[-1])
    w = softmax(scores)
    return w @ V, w


@dataclass
class AttentionWeights:
    """Projection matrices of one multi-head attention block.

    ``wq``, ``wk``, ``wv`` are ``(d_model, d_model)`` with head ``i`` using
    column block ``i*d_k:(i+1)*d_k``; ``wo`` maps the concatenated heads back
    to ``d_model``.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bo: Optional[np.ndarray] = None


def split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    """``(..., T, d)`` -> ``(..., h, T, d/h)``."""
    *lead, T, d = x.shape
    return np.swapaxes(x.reshape(*lead, T, n_heads, d // n_heads), -2, -3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """``(..., h, T, dk)`` -> ``(..., T, h*dk)``."""
    x = np.swapaxes(x, -2, -3)
    *lead, T, h, dk = x.shape
    return x.reshape(*lead, T, h * dk)


def multi_head_attention(X, weights: AttentionWeights, n_heads: int, return_cache: bool = False):
    """Self-attention over ``X`` of shape ``(..., T, d_model)``."""
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    if d % n_heads:
        raise DomainError(f"d_model={d} not divisible by {n_heads} heads")
    for name in ("wq", "wk", "wv"):
        if getattr(weights, name).shape[0] != d:
            raise DomainError(f"{name} expects input width {getattr(weights, name).shape[0]}, got {d}")
    q = split_heads(X @ weights.wq, n_heads)
    k = split_heads(X @ weights.wk, n_heads)
    v = split_heads(X @ weights.wv, n_heads)
    o, attn = scaled_dot_product_attention(q, k, v)
    concat = merge_heads(o)
    out = concat @ weights.wo
    if weights.bo is not None:
        out = out + weights.bo
    if return_cache:
        return out, {"q": q, "k": k, "v": v, "attn": attn, "concat": concat}
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(dy, xhat, inv, gain):
    dxhat = dy * gain
    d = xhat.shape[-1]
    dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    red = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=red), dy.sum(axis=red)
