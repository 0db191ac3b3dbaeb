"""Dense tensors with reverse-mode automatic differentiation.

Values are stored row-major (C-order) float64 numpy arrays. Every
differentiable primitive records its inputs and a backward closure on the
output tensor; ``backward(loss)`` materializes the tape by topologically
ordering those records and replays it once, accumulating exactly one
gradient per leaf with ``requires_grad``.

Randomness (dropout, initializers) always comes from an explicitly passed
``numpy.random.Generator``; nothing in this module touches global RNG state.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A numpy-backed array node in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all arithmetic funnels into the module-level primitives
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return hadamard(self, _as_tensor(other))

    def __rmul__(self, other):
        return hadamard(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __truediv__(self, other):
        other = _as_tensor(other)
        return hadamard(self, pow_scalar(other, -1.0))

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result; records the tape node only when grad can flow."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / structural primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product (with numpy broadcasting)."""
    data = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def pow_scalar(a: Tensor, p: float) -> Tensor:
    p = float(p)
    data = a.data ** p

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(data, (a,), backward)


def texp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,))


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500)))
    return _make(data, (a,), lambda g: (g * data * (1.0 - data),))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return _make(data, (a,), lambda g: (g * (1.0 - data * data),))


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)
    return _make(data, (a,), lambda g: (g * (a.data > 0.0),))


def silu(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500)))
    data = a.data * s
    return _make(data, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = a.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        n = a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    return _make(data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = a.data.transpose(axes)
    return _make(data, (a,), lambda g: (g.transpose(inv),))


def take(a: Tensor, key) -> Tensor:
    """Basic (slice/int/ellipsis) indexing."""
    data = a.data[key]

    def backward(g):
        full = np.zeros(a.shape)
        full[key] = g
        return (full,)

    return _make(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0]
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            i != axis % ref.ndim and t.shape[i] != ref.shape[i]
            for i in range(ref.ndim)
        ):
            raise ShapeError(
                f"concat along axis {axis} needs matching off-axis dims, "
                f"got {ref.shape} vs {t.shape}"
            )
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis % ref.ndim] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis % ref.ndim)
            for i in range(len(tensors))
        )

    return _make(data, tensors, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # one flat GEMM instead of a long loop of tiny batched products
        flat = a.data.reshape(-1, a.shape[-1])
        data = (flat @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape)
            gb = flat.T @ g2
            return ga, gb

        return _make(data, (a, b), backward)

    data = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _make(data, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``; slices sum to 1."""
    data = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(data, out=data)
    data /= data.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((g - dot) * data,)

    return _make(data, (x,), backward)


def layer_norm(x: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization along ``axis`` (no affine)."""
    mu = tmean(x, axis=axis, keepdims=True)
    xc = x - mu
    var = tmean(xc * xc, axis=axis, keepdims=True)
    return xc * pow_scalar(var + Tensor(eps), -0.5)


def dropout(x: Tensor, rate: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    """Inverted dropout: identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return hadamard(x, Tensor(keep))


def conv1d_causal(x: Tensor, kernel: Tensor, dilation: int = 1,
                  bias: Tensor | None = None) -> Tensor:
    """Causal convolution along the trailing (time) axis.

    ``x`` is (B, C_in, N, L) and ``kernel`` (C_out, C_in, k); kernel index j
    is the lag, so out[l] = sum_j kernel[j] * x[l - j*dilation]. Left padding
    keeps the output length at L and the output at step l depends only on
    inputs at steps <= l. 1-D ``x``/``kernel`` are accepted as single-channel
    convenience.
    """
    squeeze = x.ndim == 1
    if squeeze:
        if kernel.ndim != 1:
            raise ShapeError(f"1-D input needs a 1-D kernel, got {kernel.shape}")
        x = reshape(x, (1, 1, 1, x.shape[0]))
        kernel = reshape(kernel, (1, 1, kernel.shape[0]))
    if x.ndim != 4 or kernel.ndim != 3:
        raise ShapeError(
            f"conv1d_causal expects x (B, C_in, N, L) and kernel "
            f"(C_out, C_in, k), got {x.shape} and {kernel.shape}"
        )
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"channel mismatch: x {x.shape} vs kernel {kernel.shape}")
    if dilation < 1:
        raise ContractError(f"dilation must be >= 1, got {dilation}")
    b_, c_in, n_, length = x.shape
    c_out, _, k = kernel.shape
    pad = (k - 1) * dilation
    xp = np.concatenate(
        [np.zeros((b_, c_in, n_, pad)), x.data], axis=-1
    )
    # idx[l, j] addresses the lag-j tap for output step l
    idx = np.arange(length)[:, None] + (k - 1 - np.arange(k))[None, :] * dilation
    windows = xp[..., idx]  # (B, C_in, N, L, k)
    # contract (C_in, k) against the kernel via BLAS
    data = np.tensordot(windows, kernel.data,
                        axes=([1, 4], [1, 2])).transpose(0, 3, 1, 2)

    def backward(g):
        gk = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))  # (C_out, C_in, k)
        gxp = np.zeros_like(xp)
        for j in range(k):
            s = pad - j * dilation
            gxp[..., s:s + length] += np.tensordot(
                g, kernel.data[:, :, j], axes=(1, 0)).transpose(0, 3, 1, 2)
        return gxp[..., pad:], gk

    out = _make(data, (x, kernel), backward)
    if bias is not None:
        out = add(out, reshape(bias, (1, c_out, 1, 1)))
    if squeeze:
        out = reshape(out, (length,))
    return out


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor, params: Iterable[Tensor] | dict | None = None) -> None:
    """Reverse-replay the tape from a scalar loss, filling leaf ``.grad``s.

    When ``params`` is given, leaves in it that the loss never touched get
    an explicit zero gradient instead of None.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        values = params.values() if isinstance(params, dict) else params
        for p in values:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros(p.shape)
    if not loss.requires_grad:
        return
    # topological order of the recorded applications (iterative DFS)
    tape: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            tape.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf: single accumulation per backward() call
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


def zero_grad(params: Iterable[Tensor] | dict) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


# ---------------------------------------------------------------------------
# initializers


def xavier_uniform(shape: tuple[int, ...], rng: np.random.Generator,
                   gain: float = 1.0) -> Tensor:
    """Glorot-uniform initialized parameter tensor.

    For conv kernels (C_out, C_in, k) the receptive field multiplies fan-in
    and fan-out.
    """
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    elif len(shape) == 2:
        fan_out, fan_in = shape
    else:
        receptive = int(np.prod(shape[2:]))
        fan_out, fan_in = shape[0] * receptive, shape[1] * receptive
    limit = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}
        self.step = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def cosine_lr(epoch: int, total: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing from lr_max (epoch 0) down to lr_min (epoch == total)."""
    if total <= 0:
        return lr_min
    frac = min(max(epoch / total, 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))
