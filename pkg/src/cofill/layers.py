"""Shared network building blocks over (B, C, N, L) feature tensors."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


def channel_mix(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """1x1 convolution over the channel axis of (B, C_in, N, L): w is (C_out, C_in)."""
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"channel mismatch: x {x.shape} vs weight {w.shape}")
    xt = T.transpose(x, (0, 2, 3, 1))                      # (B, N, L, C_in)
    yt = T.matmul(xt, T.transpose(w, (1, 0)))              # (B, N, L, C_out)
    if b is not None:
        yt = yt + b
    return T.transpose(yt, (0, 3, 1, 2))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, O, S, d) -> (B, O, H, S, d/H)."""
    b, o, s, d = x.shape
    if d % heads != 0:
        raise ShapeError(f"channel size {d} is not divisible by {heads} heads")
    x = T.reshape(x, (b, o, s, heads, d // heads))
    return T.transpose(x, (0, 1, 3, 2, 4))


def _merge_heads(x: Tensor) -> Tensor:
    """(B, O, H, S, dk) -> (B, O, S, H*dk)."""
    b, o, h, s, dk = x.shape
    return T.reshape(T.transpose(x, (0, 1, 3, 2, 4)), (b, o, s, h * dk))


def axis_attention(q_src: Tensor, k_src: Tensor, v_src: Tensor,
                   wq: Tensor, wk: Tensor, wv: Tensor,
                   heads: int = 1, axis: str = "time",
                   kv_proj: Tensor | None = None,
                   return_weights: bool = False):
    """Scaled dot-product attention along the time or node axis.

    Inputs are (B, d, N, L). ``axis="time"`` attends over steps independently
    per node; ``axis="node"`` attends over nodes independently per step.
    Heads are split after the channel projections and concatenated back
    without a further output map; logits scale by sqrt(d/heads). ``kv_proj``
    (k_virtual x S) optionally compresses the key/value sequence axis.
    """
    if axis == "time":
        perm = (0, 2, 3, 1)      # (B, N, L, d)
        unperm = (0, 3, 1, 2)
    elif axis == "node":
        perm = (0, 3, 2, 1)      # (B, L, N, d)
        unperm = (0, 3, 2, 1)
    else:
        raise ShapeError(f"unknown attention axis {axis!r}")
    q = T.matmul(T.transpose(q_src, perm), wq)
    k = T.matmul(T.transpose(k_src, perm), wk)
    v = T.matmul(T.transpose(v_src, perm), wv)
    q, k, v = (_split_heads(t, heads) for t in (q, k, v))   # (B, O, H, S, dk)
    if kv_proj is not None:
        k = T.matmul(kv_proj, k)
        v = T.matmul(kv_proj, v)
    dk = q.shape[-1]
    logits = T.matmul(q, T.transpose(k, (0, 1, 2, 4, 3))) * (1.0 / math.sqrt(dk))
    weights = T.softmax(logits, axis=-1)
    out = _merge_heads(T.matmul(weights, v))
    out = T.transpose(out, unperm)
    if return_weights:
        return out, weights
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the trailing axis: (..., in) @ (in, out) + b."""
    y = T.matmul(x, w)
    if b is not None:
        y = y + b
    return y


def position_mlp(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two-layer position-wise MLP with ReLU over the channel axis of (B, C, N, L)."""
    return channel_mix(T.relu(channel_mix(x, w1, b1)), w2, b2)


def sinusoid_embedding(ts: np.ndarray, dim: int) -> np.ndarray:
    """Transformer-style sin/cos embedding of integer steps; (B, dim)."""
    if dim % 2 != 0:
        raise ShapeError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    ts = np.asarray(ts, dtype=np.float64).reshape(-1, 1)
    denom = 1 if half == 1 else half - 1
    freqs = 10000.0 ** (-np.arange(half) / denom)
    ang = ts * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
