"""Conditional feature extraction: temporal (TCN+GCN) and frequency (DCT)
streams over the pre-imputed series, fused by cross-attention.

All stages map (B, d, N, L) to (B, d, N, L).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .graph import graph_conv
from .layers import axis_attention, channel_mix, sinusoid_embedding
from .tensor import Tensor


@dataclass
class AblationFlags:
    """Pipeline component switches; at least one stream must stay active."""

    use_forward: bool = True
    use_temporal: bool = True
    use_frequency: bool = True
    use_cross: bool = True


ABLATION_VARIANTS = {
    "full": AblationFlags(),
    "no_forward": AblationFlags(use_forward=False),
    "no_temporal": AblationFlags(use_temporal=False),
    "no_frequency": AblationFlags(use_frequency=False),
    "no_cross": AblationFlags(use_cross=False),
}


def ablation_flags(variant: str) -> AblationFlags:
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(
            f"unknown ablation variant {variant!r}; valid: "
            f"{sorted(ABLATION_VARIANTS)}"
        )
    return ABLATION_VARIANTS[variant]


@dataclass
class CondParams:
    """Learnable weights of the conditional module."""

    in_w: Tensor
    in_b: Tensor
    tcn_p_w: Tensor
    tcn_p_b: Tensor
    tcn_q_w: Tensor
    tcn_q_b: Tensor
    gcn_w: Tensor
    gcn_b: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    gcn_order: int = 2
    dropout: float = 0.1

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, kernel: int = 3,
             gcn_order: int = 2, dropout: float = 0.1) -> "CondParams":
        xavier = T.xavier_uniform
        return cls(
            in_w=xavier((d, 1), rng),
            in_b=T.zeros_param((d,)),
            tcn_p_w=xavier((d, d, kernel), rng),
            tcn_p_b=T.zeros_param((d,)),
            tcn_q_w=xavier((d, d, kernel), rng),
            tcn_q_b=T.zeros_param((d,)),
            gcn_w=xavier((d, (gcn_order + 1) * d), rng),
            gcn_b=T.zeros_param((d,)),
            wq=xavier((d, d), rng),
            wk=xavier((d, d), rng),
            wv=xavier((d, d), rng),
            gcn_order=gcn_order,
            dropout=dropout,
        )

    def params(self, prefix: str = "cond") -> dict[str, Tensor]:
        names = ("in_w", "in_b", "tcn_p_w", "tcn_p_b", "tcn_q_w", "tcn_q_b",
                 "gcn_w", "gcn_b", "wq", "wk", "wv")
        return {f"{prefix}.{n}": getattr(self, n) for n in names}


def input_projection(x1: np.ndarray | Tensor, params: CondParams) -> Tensor:
    """Map the (B, N, L) series into latent space via a shared 1x1 convolution."""
    x1 = x1 if isinstance(x1, Tensor) else Tensor(x1)
    b, n, length = x1.shape
    return channel_mix(T.reshape(x1, (b, 1, n, length)), params.in_w, params.in_b)


def positional_encoding(channels: int, length: int) -> np.ndarray:
    """Fixed sinusoidal time-position code, (channels, length).

    Attention weights are functions of the conditioning alone, so the
    conditioning latent must carry step positions for the weights to be able
    to address individual steps at all.
    """
    dim = channels + channels % 2
    pe = sinusoid_embedding(np.arange(length), dim)  # (L, dim)
    return pe.T[:channels]


def latent_input(x1: np.ndarray | Tensor, params: CondParams) -> Tensor:
    """Projected series plus the positional code: the input both streams see."""
    h_in = input_projection(x1, params)
    pe = positional_encoding(h_in.shape[1], h_in.shape[3])
    return h_in + Tensor(pe[None, :, None, :])


def tcn_forward(h_in: Tensor, params: CondParams,
                rng: np.random.Generator | None = None,
                training: bool = False) -> Tensor:
    """Gated causal convolution P * sigmoid(Q), dropout, plus residual input."""
    p = T.conv1d_causal(h_in, params.tcn_p_w, dilation=1, bias=params.tcn_p_b)
    q = T.conv1d_causal(h_in, params.tcn_q_w, dilation=1, bias=params.tcn_q_b)
    gated = T.hadamard(p, T.sigmoid(q))
    if training and rng is not None:
        gated = T.dropout(gated, params.dropout, rng, training=True)
    return gated + h_in


def gcn_forward(h_bar: Tensor, a_gcn: np.ndarray, params: CondParams) -> Tensor:
    """Spatial mixing via concatenated graph-propagation powers."""
    return graph_conv(h_bar, a_gcn, params.gcn_order, params.gcn_w, params.gcn_b)


def dct_matrix(length: int) -> np.ndarray:
    """Cosine basis C[t, m] = cos(pi/T * (t + 1/2) * m)."""
    t = np.arange(length)[:, None]
    m = np.arange(length)[None, :]
    return np.cos(math.pi / length * (t + 0.5) * m)


def dct_forward(h: Tensor | np.ndarray, variant: str = "scaled") -> Tensor:
    """Type-II DCT along the trailing (time) axis.

    Variants: ``raw`` is the plain cosine sum (grows with T), ``scaled``
    multiplies by 2/T to keep activations O(1) for the network, ``ortho``
    is the orthonormal form whose inverse is its transpose.
    """
    h = h if isinstance(h, Tensor) else Tensor(h)
    length = h.shape[-1]
    basis = dct_matrix(length)
    if variant == "raw":
        pass
    elif variant == "scaled":
        basis = basis * (2.0 / length)
    elif variant == "ortho":
        scale = np.full(length, math.sqrt(2.0 / length))
        scale[0] = math.sqrt(1.0 / length)
        basis = basis * scale[None, :]
    else:
        raise ConfigError(f"unknown DCT variant {variant!r}")
    return T.matmul(h, Tensor(basis))


def idct_ortho(coeffs: Tensor | np.ndarray) -> Tensor:
    """Inverse of the orthonormal DCT (transpose of the orthogonal basis)."""
    coeffs = coeffs if isinstance(coeffs, Tensor) else Tensor(coeffs)
    length = coeffs.shape[-1]
    scale = np.full(length, math.sqrt(2.0 / length))
    scale[0] = math.sqrt(1.0 / length)
    basis = dct_matrix(length) * scale[None, :]
    return T.matmul(coeffs, Tensor(basis.T))


def cross_attention_fuse(h_temporal: Tensor, h_frequency: Tensor,
                         params: CondParams) -> Tensor:
    """Queries from the temporal stream, keys/values from the frequency stream.

    Single-head scaled dot-product over the time axis, per node; logits scale
    by sqrt(d).
    """
    return axis_attention(h_temporal, h_frequency, h_frequency,
                          params.wq, params.wk, params.wv,
                          heads=1, axis="time")


def build_conditioning(x1: np.ndarray | Tensor, a_gcn: np.ndarray,
                       params: CondParams,
                       flags: AblationFlags | None = None,
                       rng: np.random.Generator | None = None,
                       training: bool = False) -> Tensor:
    """Full conditional pipeline; ablation flags bypass individual stages.

    With the cross stage disabled the two streams are summed; with one stream
    disabled the other passes through. The forward-interpolation flag is the
    caller's concern (it decides what ``x1`` contains).
    """
    flags = flags or AblationFlags()
    if not (flags.use_temporal or flags.use_frequency):
        raise ConfigError("at least one of the temporal/frequency streams "
                          "must be enabled")
    h_in = latent_input(x1, params)
    h_t = None
    h_f = None
    if flags.use_temporal:
        h_bar = tcn_forward(h_in, params, rng=rng, training=training)
        h_t = gcn_forward(h_bar, a_gcn, params)
    if flags.use_frequency:
        h_f = dct_forward(h_in, variant="scaled")
    if h_t is None:
        return h_f
    if h_f is None:
        return h_t
    if not flags.use_cross:
        return h_t + h_f
    return cross_attention_fuse(h_t, h_f, params)
