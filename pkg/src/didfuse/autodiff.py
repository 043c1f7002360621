"""Reverse-mode differentiation over dense numpy arrays.

Only the operations the fusion network needs are provided. Operations are
recorded on the innermost active :class:`Tape`; calling
:meth:`Tape.backward` replays the recorded nodes in reverse order and
accumulates gradients into every leaf tensor that requires them.

Example::

    x = Tensor(np.ones((1, 1, 4, 4)), requires_grad=True)
    with Tape() as tape:
        y = total(mul(x, x))
    tape.backward(y)
    # x.grad == 2 * x.data
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class Tensor:
    """A numpy array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of differentiable operations."""

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, root: Tensor) -> None:
        if root.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
        end = None
        for idx in range(len(self.nodes) - 1, -1, -1):
            if self.nodes[idx].output is root:
                end = idx
                break
        if end is None:
            raise ValueError("root tensor was not produced on this tape")

        grads = {id(root): np.ones_like(root.data)}
        tensors = {id(root): root}
        for node in reversed(self.nodes[: end + 1]):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            tensors.pop(id(node.output), None)
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    tensors[key] = inp
        # whatever is left was never produced by a node: leaves
        for key, g in grads.items():
            leaf = tensors[key]
            g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


_TAPES: list = []


def current_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def backward(root: Tensor, tape: Tape) -> None:
    tape.backward(root)


def _emit(op: str, data: np.ndarray, inputs: tuple, grad_fn) -> Tensor:
    tape = current_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=tracked)
    if tracked:
        tape.record(Node(op, inputs, out, grad_fn))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ----------------------------------------------------------------------------
# element-wise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _emit("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    out = a.data / b.data

    def grad_fn(g):
        ga = g / b.data
        return ga, -ga * out

    return _emit("div", out, (a, b), grad_fn)


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul, "div": div}[op]
    except KeyError:
        raise ValueError(f"unknown element-wise op {op!r}") from None
    return fn(a, b)


def scale(a: Tensor, s: float) -> Tensor:
    return _emit("scale", a.data * s, (a,), lambda g: (g * s,))


def shift(a: Tensor, c: float) -> Tensor:
    return _emit("shift", a.data + c, (a,), lambda g: (g,))


def absolute(a: Tensor) -> Tensor:
    return _emit("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""
    return _emit("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _emit("mean", np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, a.shape),))


def sum_squares(a: Tensor) -> Tensor:
    return _emit("sum_squares", np.asarray(np.square(a.data).sum()), (a,), lambda g: (2.0 * g * a.data,))


def mean_squares(a: Tensor) -> Tensor:
    n = a.data.size
    return _emit(
        "mean_squares", np.asarray(np.square(a.data).mean()), (a,), lambda g: (2.0 * g * a.data / n,)
    )


# ----------------------------------------------------------------------------
# activations


def _check_finite(x: Tensor, op: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise ValueError(f"{op}: input contains NaN or Inf")


def tanh(x: Tensor) -> Tensor:
    _check_finite(x, "tanh")
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    _check_finite(x, "sigmoid")
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """PReLU with a single shared slope (``slope`` holds one value)."""
    _check_finite(x, "prelu")
    if slope.data.size != 1:
        raise ShapeError(f"prelu: expected one shared slope, got shape {slope.shape}")
    a = slope.data.reshape(())
    neg = x.data < 0
    y = np.where(neg, a * x.data, x.data)

    def grad_fn(g):
        gx = np.where(neg, a * g, g)
        gs = np.asarray((g * x.data)[neg].sum(), dtype=slope.dtype).reshape(slope.shape)
        return gx, gs

    return _emit("prelu", y, (x, slope), grad_fn)


def activation(x: Tensor, kind: str, slope: Optional[Tensor] = None) -> Tensor:
    if kind == "prelu":
        if slope is None:
            raise ValueError("prelu needs a slope tensor")
        return prelu(x, slope)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ----------------------------------------------------------------------------
# convolution


def _pad(x: np.ndarray, mode: str) -> np.ndarray:
    if mode == "zero":
        return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    # reflect-101: border pixel is not repeated
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")


def _unpad(gp: np.ndarray, mode: str) -> np.ndarray:
    """Adjoint of :func:`_pad`."""
    if mode == "zero":
        return gp[:, :, 1:-1, 1:-1].copy()
    # undo the column padding, then the row padding
    g = gp[:, :, :, 1:-1].copy()
    g[:, :, :, 1] += gp[:, :, :, 0]
    g[:, :, :, -2] += gp[:, :, :, -1]
    out = g[:, :, 1:-1, :].copy()
    out[:, :, 1, :] += g[:, :, 0, :]
    out[:, :, -2, :] += g[:, :, -1, :]
    return out


def conv3x3(x: Tensor, kernel: Tensor, bias: Tensor, padding: str = "zero") -> Tensor:
    """Stride-1 3x3 cross-correlation with one pixel of padding.

    ``padding`` is ``"zero"`` or ``"reflection"``; the output keeps the
    input's spatial size.
    """
    if padding not in ("zero", "reflection"):
        raise ValueError(f"unknown padding {padding!r}")
    if x.data.ndim != 4:
        raise ShapeError(f"conv3x3: input must be rank 4 (n, c, h, w), got {x.shape}")
    n, c, h, w = x.shape
    if kernel.data.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ShapeError(f"conv3x3: kernel must be (outC, inC, 3, 3), got {kernel.shape}")
    out_c, in_c = kernel.shape[:2]
    if in_c != c:
        raise ShapeError(f"conv3x3: input has {c} channels but kernel expects {in_c}")
    if bias.shape != (out_c,):
        raise ShapeError(f"conv3x3: bias must have shape ({out_c},), got {bias.shape}")
    if padding == "reflection" and (h < 2 or w < 2):
        raise ShapeError(f"conv3x3: reflection padding needs h, w >= 2, got {h}x{w}")

    k = kernel.data
    xp = _pad(x.data, padding)
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (n, c, h, w, 3, 3)
    out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3]))  # (n, h, w, o)
    out = out.transpose(0, 3, 1, 2) + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def grad_fn(g):
        gk = gb = gx = None
        if kernel.requires_grad:
            gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for a in range(3):
                for b in range(3):
                    contrib = np.tensordot(g, k[:, :, a, b], axes=([1], [0]))  # (n, h, w, c)
                    gp[:, :, a : a + h, b : b + w] += contrib.transpose(0, 3, 1, 2)
            gx = _unpad(gp, padding)
        return gx, gk, gb

    return _emit("conv3x3", out, (x, kernel, bias), grad_fn)


def filter2d_valid(x: Tensor, window: np.ndarray) -> Tensor:
    """Correlate every channel with a fixed 2-D window, valid region only."""
    kh, kw = window.shape
    n, c, h, w = x.shape
    if h < kh or w < kw:
        raise ShapeError(f"filter2d_valid: image {h}x{w} smaller than window {kh}x{kw}")
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    out = np.tensordot(win, window, axes=([4, 5], [0, 1]))
    oh, ow = out.shape[2:]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        for a in range(kh):
            for b in range(kw):
                gx[:, :, a : a + oh, b : b + ow] += window[a, b] * g
        return (gx,)

    return _emit("filter2d_valid", out, (x,), grad_fn)


# ----------------------------------------------------------------------------
# structure


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels: operands must be rank 4")
    if (a.shape[0], *a.shape[2:]) != (b.shape[0], *b.shape[2:]):
        raise ShapeError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _emit("concat", out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def take(x: Tensor, start: int, stop: int) -> Tensor:
    """Batch slice ``x[start:stop]``."""

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return _emit("take", x.data[start:stop], (x,), grad_fn)


def diff_h(x: Tensor) -> Tensor:
    """Horizontal forward difference x[..., j+1] - x[..., j] (valid region)."""

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[..., 1:] += g
        gx[..., :-1] -= g
        return (gx,)

    return _emit("diff_h", x.data[..., 1:] - x.data[..., :-1], (x,), grad_fn)


def diff_v(x: Tensor) -> Tensor:
    """Vertical forward difference x[..., i+1, :] - x[..., i, :] (valid region)."""

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[..., 1:, :] += g
        gx[..., :-1, :] -= g
        return (gx,)

    return _emit("diff_v", x.data[..., 1:, :] - x.data[..., :-1, :], (x,), grad_fn)


# ----------------------------------------------------------------------------
# normalization


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    In ``"train"`` mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (the running variance tracks the
    unbiased batch variance). ``"eval"`` mode normalizes with the running
    statistics.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm: input must be rank 4, got {x.shape}")
    n, c, h, w = x.shape
    if n * h * w == 0:
        raise ShapeError("batch_norm: empty batch")
    for name, arr in (("gamma", gamma.data), ("beta", beta.data), ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != (c,):
            raise ShapeError(f"batch_norm: {name} must have shape ({c},), got {arr.shape}")
    if eps <= 0:
        raise ValueError("batch_norm: eps must be positive")

    gm = gamma.data[None, :, None, None]
    if mode == "train":
        count = n * h * w
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        unbiased = var * count / (count - 1) if count > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    elif mode == "eval":
        mu, var = running_mean, running_var
    else:
        raise ValueError(f"batch_norm: unknown mode {mode!r}")

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = (gm * xhat + beta.data[None, :, None, None]).astype(x.dtype, copy=False)

    def grad_fn(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        dxhat = g * gm
        if mode == "train":
            count = n * h * w
            gx = (inv[None, :, None, None] / count) * (
                count * dxhat
                - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            )
        else:
            gx = dxhat * inv[None, :, None, None]
        return gx, gg, gb

    return _emit("batch_norm", out, (x, gamma, beta), grad_fn)


# ----------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: Sequence[Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("adam_step: params, grads and state lengths disagree")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - step).astype(p.dtype, copy=False)
    return state


# ----------------------------------------------------------------------------
# finite-difference checking


def numerical_grad(fn: Callable[[], float], arr: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. every entry of ``arr`` (mutated and restored)."""
    out = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn()
        flat[i] = orig - step
        lo = fn()
        flat[i] = orig
        out.reshape(-1)[i] = (hi - lo) / (2 * step)
    return out


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8) -> float:
    """Largest element-wise ``|a - n| / max(|a|, |n|)``, ignoring pairs both below ``atol``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(a), np.abs(n))
    mask = denom > atol
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(a - n)[mask] / denom[mask]))
