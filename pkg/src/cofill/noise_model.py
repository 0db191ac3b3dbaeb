"""Conditional noise estimation network.

Stacked layers of conditioning-driven temporal and spatial attention with a
gated activation unit; residual path feeds the next layer while skip outputs
aggregate into two final 1-D convolutions. Attention weights are functions of
the conditioning alone (queries and keys never see the noisy input).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .conditioning import AblationFlags, CondParams, build_conditioning
from .errors import ContractError, ShapeError
from .graph import graph_conv
from .layers import (axis_attention, channel_mix, linear, position_mlp,
                     sinusoid_embedding)
from .tensor import Tensor


@dataclass
class ModelDims:
    """Architecture hyperparameters shared by both network halves."""

    channels: int = 64
    layers: int = 4
    heads: int = 8
    virtual_nodes: int = 0
    emb_dim: int = 128
    tcn_kernel: int = 3
    gcn_order: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.layers < 1:
            raise ContractError(f"need at least one layer, got {self.layers}")
        if self.channels % self.heads != 0:
            raise ContractError(
                f"channel size {self.channels} not divisible by "
                f"{self.heads} heads"
            )


@dataclass
class LayerParams:
    step_w: Tensor
    step_b: Tensor
    t_wq: Tensor
    t_wk: Tensor
    t_wv: Tensor
    s_wq: Tensor
    s_wk: Tensor
    s_wv: Tensor
    virt_e: Tensor | None
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    graph_w: Tensor
    graph_b: Tensor
    gate_w: Tensor
    gate_b: Tensor
    res_w: Tensor
    res_b: Tensor
    skip_w: Tensor
    skip_b: Tensor

    @classmethod
    def init(cls, dims: ModelDims, n_nodes: int,
             rng: np.random.Generator) -> "LayerParams":
        d = dims.channels
        xavier = T.xavier_uniform
        k = min(dims.virtual_nodes, n_nodes) if dims.virtual_nodes > 0 else 0
        return cls(
            step_w=xavier((dims.emb_dim, d), rng),
            step_b=T.zeros_param((d,)),
            t_wq=xavier((d, d), rng),
            t_wk=xavier((d, d), rng),
            t_wv=xavier((d, d), rng),
            s_wq=xavier((d, d), rng),
            s_wk=xavier((d, d), rng),
            s_wv=xavier((d, d), rng),
            virt_e=xavier((k, n_nodes), rng) if k > 0 else None,
            mlp_w1=xavier((d, d), rng),
            mlp_b1=T.zeros_param((d,)),
            mlp_w2=xavier((d, d), rng),
            mlp_b2=T.zeros_param((d,)),
            graph_w=xavier((d, (dims.gcn_order + 1) * d), rng),
            graph_b=T.zeros_param((d,)),
            gate_w=xavier((2 * d, d), rng),
            gate_b=T.zeros_param((2 * d,)),
            res_w=xavier((d, d), rng),
            res_b=T.zeros_param((d,)),
            skip_w=xavier((d, d), rng),
            skip_b=T.zeros_param((d,)),
        )

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for name in ("step_w", "step_b", "t_wq", "t_wk", "t_wv", "s_wq",
                     "s_wk", "s_wv", "virt_e", "mlp_w1", "mlp_b1", "mlp_w2",
                     "mlp_b2", "graph_w", "graph_b", "gate_w", "gate_b",
                     "res_w", "res_b", "skip_w", "skip_b"):
            p = getattr(self, name)
            if p is not None:
                out[f"{prefix}.{name}"] = p
        return out


@dataclass
class NoisePredictorParams:
    dims: ModelDims
    in_w: Tensor
    in_b: Tensor
    emb_w1: Tensor
    emb_b1: Tensor
    emb_w2: Tensor
    emb_b2: Tensor
    layers: list[LayerParams]
    out1_w: Tensor
    out1_b: Tensor
    out2_w: Tensor
    out2_b: Tensor

    @classmethod
    def init(cls, dims: ModelDims, n_nodes: int,
             rng: np.random.Generator) -> "NoisePredictorParams":
        d = dims.channels
        e = dims.emb_dim
        xavier = T.xavier_uniform
        return cls(
            dims=dims,
            in_w=xavier((d, 2), rng),
            in_b=T.zeros_param((d,)),
            emb_w1=xavier((e, e), rng),
            emb_b1=T.zeros_param((e,)),
            emb_w2=xavier((e, e), rng),
            emb_b2=T.zeros_param((e,)),
            layers=[LayerParams.init(dims, n_nodes, rng)
                    for _ in range(dims.layers)],
            out1_w=xavier((d, d), rng),
            out1_b=T.zeros_param((d,)),
            # zero-initialized so the untrained network predicts zero noise
            out2_w=T.zeros_param((1, d)),
            out2_b=T.zeros_param((1,)),
        )

    def params(self, prefix: str = "noise") -> dict[str, Tensor]:
        out = {}
        for name in ("in_w", "in_b", "emb_w1", "emb_b1", "emb_w2", "emb_b2",
                     "out1_w", "out1_b", "out2_w", "out2_b"):
            out[f"{prefix}.{name}"] = getattr(self, name)
        for i, lp in enumerate(self.layers):
            out.update(lp.params(f"{prefix}.layer{i}"))
        return out


def step_embedding(ts: np.ndarray | int, total_steps: int,
                   params: NoisePredictorParams) -> Tensor:
    """Sinusoidal embedding of diffusion steps through two affine+SiLU maps."""
    ts = np.atleast_1d(np.asarray(ts, dtype=np.int64))
    if ((ts < 1) | (ts > total_steps)).any():
        raise ContractError(
            f"diffusion step out of range [1, {total_steps}]: {ts}"
        )
    raw = Tensor(sinusoid_embedding(ts, params.dims.emb_dim))
    h = T.silu(linear(raw, params.emb_w1, params.emb_b1))
    return T.silu(linear(h, params.emb_w2, params.emb_b2))


def temporal_attention(x: Tensor, c_con: Tensor, lp: LayerParams,
                       heads: int, return_weights: bool = False):
    """Per-node attention over time; queries/keys from conditioning, values from x."""
    return axis_attention(c_con, c_con, x, lp.t_wq, lp.t_wk, lp.t_wv,
                          heads=heads, axis="time",
                          return_weights=return_weights)


def spatial_attention(x_tem: Tensor, c_con: Tensor, a_gcn: np.ndarray,
                      lp: LayerParams, heads: int, gcn_order: int) -> Tensor:
    """Node-axis attention and a graph-convolution branch, combined with
    normalization, residuals, and a position-wise MLP."""
    attn = axis_attention(c_con, c_con, x_tem, lp.s_wq, lp.s_wk, lp.s_wv,
                          heads=heads, axis="node", kv_proj=lp.virt_e)
    branch_a = position_mlp(T.layer_norm(attn, axis=1) + x_tem,
                            lp.mlp_w1, lp.mlp_b1, lp.mlp_w2, lp.mlp_b2)
    g = graph_conv(x_tem, a_gcn, gcn_order, lp.graph_w, lp.graph_b)
    branch_g = T.layer_norm(g + x_tem, axis=1)
    return branch_a + branch_g


def _residual_layer(h: Tensor, c_con: Tensor, emb: Tensor, a_gcn: np.ndarray,
                    lp: LayerParams, dims: ModelDims):
    d = dims.channels
    b = h.shape[0]
    step = linear(emb, lp.step_w, lp.step_b)           # (B, d)
    hs = h + T.reshape(step, (b, d, 1, 1))
    # transformer-style sublayer: residual around the attention map so the
    # noisy input keeps a per-position path to the output
    x_tem = hs + temporal_attention(hs, c_con, lp, dims.heads)
    x_spa = spatial_attention(x_tem, c_con, a_gcn, lp, dims.heads,
                              dims.gcn_order)
    gate = channel_mix(x_spa, lp.gate_w, lp.gate_b)    # (B, 2d, N, L)
    z = T.hadamard(T.tanh(gate[:, :d]), T.sigmoid(gate[:, d:]))
    res = channel_mix(z, lp.res_w, lp.res_b)
    skip = channel_mix(z, lp.skip_w, lp.skip_b)
    return h + res, skip


def predict_noise(x1: np.ndarray | Tensor, x_noisy: np.ndarray | Tensor,
                  c_con: Tensor, a_gcn: np.ndarray, ts: np.ndarray | int,
                  total_steps: int, params: NoisePredictorParams) -> Tensor:
    """Estimate the injected noise for a batch of windows; returns (B, N, L)."""
    x1 = x1 if isinstance(x1, Tensor) else Tensor(x1)
    x_noisy = x_noisy if isinstance(x_noisy, Tensor) else Tensor(x_noisy)
    if x1.shape != x_noisy.shape:
        raise ShapeError(
            f"pre-imputed {x1.shape} and noisy {x_noisy.shape} inputs disagree"
        )
    b, n, length = x1.shape
    if c_con.shape != (b, params.dims.channels, n, length):
        raise ShapeError(
            f"conditioning shape {c_con.shape} does not match input "
            f"({b}, {params.dims.channels}, {n}, {length})"
        )
    x_in = T.concat([T.reshape(x1, (b, 1, n, length)),
                     T.reshape(x_noisy, (b, 1, n, length))], axis=1)
    h = channel_mix(x_in, params.in_w, params.in_b)
    emb = step_embedding(ts, total_steps, params)
    if emb.shape[0] == 1 and b > 1:
        emb = T.concat([emb] * b, axis=0)
    skips = None
    for lp in params.layers:
        h, skip = _residual_layer(h, c_con, emb, a_gcn, lp, params.dims)
        skips = skip if skips is None else skips + skip
    y = T.relu(channel_mix(skips, params.out1_w, params.out1_b))
    y = channel_mix(y, params.out2_w, params.out2_b)   # (B, 1, N, L)
    return T.reshape(y, (b, n, length))


@dataclass
class CoFillModel:
    """Conditional module plus noise predictor behind one parameter registry."""

    dims: ModelDims
    n_nodes: int
    total_steps: int
    cond: CondParams
    noise: NoisePredictorParams
    flags: AblationFlags = field(default_factory=AblationFlags)

    @classmethod
    def init(cls, dims: ModelDims, n_nodes: int, total_steps: int,
             rng: np.random.Generator,
             flags: AblationFlags | None = None) -> "CoFillModel":
        return cls(
            dims=dims,
            n_nodes=n_nodes,
            total_steps=total_steps,
            cond=CondParams.init(dims.channels, rng, kernel=dims.tcn_kernel,
                                 gcn_order=dims.gcn_order,
                                 dropout=dims.dropout),
            noise=NoisePredictorParams.init(dims, n_nodes, rng),
            flags=flags or AblationFlags(),
        )

    def params(self) -> dict[str, Tensor]:
        out = self.cond.params("cond")
        out.update(self.noise.params("noise"))
        return out

    def predict(self, x1: np.ndarray, x_noisy: np.ndarray,
                ts: np.ndarray | int, a_gcn: np.ndarray,
                rng: np.random.Generator | None = None,
                training: bool = False) -> Tensor:
        """Conditioning is built once per forward pass and shared by all layers."""
        c_con = build_conditioning(x1, a_gcn, self.cond, flags=self.flags,
                                   rng=rng, training=training)
        return predict_noise(x1, x_noisy, c_con, a_gcn, ts,
                             self.total_steps, self.noise)

    def load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values from a checkpoint's name->array map."""
        own = self.params()
        missing = set(own) - set(arrays)
        extra = set(arrays) - set(own)
        if missing or extra:
            raise ContractError(
                f"parameter names disagree with checkpoint "
                f"(missing {sorted(missing)}, unexpected {sorted(extra)})"
            )
        for name, p in own.items():
            arr = arrays[name]
            if arr.shape != p.shape:
                raise ContractError(
                    f"checkpoint shape {arr.shape} for {name} does not match "
                    f"model shape {p.shape}"
                )
            p.data = np.ascontiguousarray(arr, dtype=np.float64)
