"""Reverse-mode differentiable tensor core.

Deliberately minimal: exactly the operations the translation network needs,
on dense float64 arrays of rank <= 3 (batch, channels, length). Convolutions
use the cross-correlation convention (no kernel flip) throughout; the wavelet
module performs true convolution and is unrelated to these kernels.

Gradients accumulate additively across fan-out; callers zero them between
optimizer steps. Graph construction and backward are single-threaded per
training run; tensors with requires_grad=False are safe to share across
threads for parallel inference.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, UsageError

__all__ = [
    "Tensor",
    "Graph",
    "GraphNode",
    "backward",
    "conv1d",
    "conv1d_transpose",
    "batchnorm1d",
    "RunningStats",
    "leaky_relu",
    "concat_channels",
    "add",
    "sub",
    "abs",
    "sum",
    "mean",
    "pad1d",
    "crop1d",
]

class Tensor:
    """Dense float64 array with optional gradient buffer.

    ``grad`` exists (zero-initialized) iff ``requires_grad``. Tensors produced
    by ops carry the links needed for reverse-mode traversal.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"rank {arr.ndim} tensor; at most 3 axes supported")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def freeze(self) -> None:
        """Detach from future graphs; drops the gradient buffer."""
        self.requires_grad = False
        self.grad = None
        self._parents = ()
        self._grad_fn = None
        self._op = None

    def unfreeze(self) -> None:
        self.requires_grad = True
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def _result(data: np.ndarray, op: str, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = np.zeros_like(out.data)
        out._parents = parents
        out._grad_fn = grad_fn
        out._op = op
    return out


class GraphNode(NamedTuple):
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor


class Graph:
    """Topologically ordered record of the ops that produced a tensor."""

    def __init__(self, nodes: list[GraphNode]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        # Deterministic iterative post-order DFS: node order depends only on
        # graph structure and recorded parent order.
        nodes: list[GraphNode] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                if t._op is not None:
                    nodes.append(GraphNode(t._op, t._parents, t))
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in reversed(t._parents):
                stack.append((p, False))
        return cls(nodes)

    def run_backward(self, root: Tensor) -> None:
        if root.grad is None:
            return
        root.grad[...] = 1.0
        for node in reversed(self.nodes):
            gout = node.output.grad
            grads = node.output._grad_fn(gout)
            for parent, g in zip(node.inputs, grads):
                if parent.requires_grad and g is not None:
                    parent.grad += g


def backward(loss: Tensor) -> None:
    """Populate d(loss)/d(leaf) for every requires_grad leaf below ``loss``."""
    if loss.data.ndim != 0:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    Graph.trace(loss).run_backward(loss)


# ---------------------------------------------------------------------------
# convolution kernels (shared by forward and adjoint paths)
# ---------------------------------------------------------------------------


def _gather_corr(x_pad: np.ndarray, w2: np.ndarray, stride: int, n_win: int) -> np.ndarray:
    """Strided cross-correlation: x_pad [B,C,Lp] with w2 [Cout, C*K] -> [B,Cout,n_win]."""
    k = w2.shape[1] // x_pad.shape[1]
    win = sliding_window_view(x_pad, k, axis=2)[:, :, ::stride, :][:, :, :n_win, :]
    b = x_pad.shape[0]
    flat = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * n_win, -1)
    out = flat @ w2.T
    return out.reshape(b, n_win, -1).transpose(0, 2, 1)


def _scatter_corr(t: np.ndarray, stride: int, total: int) -> np.ndarray:
    """Adjoint of the gather: t [B,C,Lin,K] scattered to [B,C,total]
    with window i, tap k landing at i*stride + k."""
    b, c, lin, k = t.shape
    out = np.zeros((b, c, total), dtype=t.dtype)
    span = stride * (lin - 1) + 1
    for j in range(k):
        out[:, :, j : j + span : stride] += t[:, :, :, j]
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Strided, zero-padded cross-correlation.

    x: [B, Cin, L], weight: [Cout, Cin, K], bias: [Cout].
    Lout = (L + 2*padding - K) // stride + 1.
    """
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError("conv1d expects rank-3 input and weight")
    b, cin, length = x.shape
    cout, cin_w, k = weight.shape
    if cin_w != cin:
        raise ShapeError(f"conv1d channel mismatch: input has {cin}, weight expects {cin_w}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv1d bias must be [{cout}], got {bias.shape}")
    if length + 2 * padding < k:
        raise ShapeError(f"length {length} with padding {padding} shorter than kernel {k}")
    if stride < 1 or padding < 0:
        raise UsageError("stride must be >= 1 and padding >= 0")

    lout = (length + 2 * padding - k) // stride + 1
    x_pad = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    w2 = weight.data.reshape(cout, cin * k)
    y = _gather_corr(x_pad, w2, stride, lout) + bias.data[None, :, None]

    def grad_fn(gy: np.ndarray):
        gx = gw = gb = None
        if bias.requires_grad:
            gb = gy.sum(axis=(0, 2))
        win = sliding_window_view(x_pad, k, axis=2)[:, :, ::stride, :][:, :, :lout, :]
        if weight.requires_grad:
            gy_flat = np.ascontiguousarray(gy.transpose(1, 0, 2)).reshape(cout, b * lout)
            win_flat = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * lout, cin * k)
            gw = (gy_flat @ win_flat).reshape(cout, cin, k)
        if x.requires_grad:
            gy_flat = np.ascontiguousarray(gy.transpose(0, 2, 1)).reshape(b * lout, cout)
            t = (gy_flat @ w2).reshape(b, lout, cin, k).transpose(0, 2, 1, 3)
            gxp = _scatter_corr(np.ascontiguousarray(t), stride, length + 2 * padding)
            gx = gxp[:, :, padding : padding + length] if padding else gxp
        return gx, gw, gb

    return _result(y, "conv1d", (x, weight, bias), grad_fn)


def conv1d_transpose(
    x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """Adjoint of conv1d with matched weight/stride/padding.

    x: [B, Cin, L], weight: [Cin, Cout, K], bias: [Cout].
    Lout = (L - 1)*stride - 2*padding + K.
    """
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError("conv1d_transpose expects rank-3 input and weight")
    b, cin, length = x.shape
    cin_w, cout, k = weight.shape
    if cin_w != cin:
        raise ShapeError(
            f"conv1d_transpose channel mismatch: input has {cin}, weight expects {cin_w}"
        )
    if bias.shape != (cout,):
        raise ShapeError(f"conv1d_transpose bias must be [{cout}], got {bias.shape}")
    if stride < 1 or padding < 0:
        raise UsageError("stride must be >= 1 and padding >= 0")
    lout = (length - 1) * stride - 2 * padding + k
    if lout < 1:
        raise ShapeError(f"output length {lout} not positive")

    w2 = weight.data.reshape(cin, cout * k)
    x_flat = np.ascontiguousarray(x.data.transpose(0, 2, 1)).reshape(b * length, cin)
    t = (x_flat @ w2).reshape(b, length, cout, k).transpose(0, 2, 1, 3)
    y_full = _scatter_corr(np.ascontiguousarray(t), stride, (length - 1) * stride + k)
    y = y_full[:, :, padding : padding + lout] if padding else y_full
    y = y + bias.data[None, :, None]

    def grad_fn(gy: np.ndarray):
        gx = gw = gb = None
        if bias.requires_grad:
            gb = gy.sum(axis=(0, 2))
        gy_pad = np.pad(gy, ((0, 0), (0, 0), (padding, padding))) if padding else gy
        win = sliding_window_view(gy_pad, k, axis=2)[:, :, ::stride, :][:, :, :length, :]
        if x.requires_grad:
            win_flat = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(
                b * length, cout * k
            )
            gx = (win_flat @ w2.T).reshape(b, length, cin).transpose(0, 2, 1)
        if weight.requires_grad:
            x2 = np.ascontiguousarray(x.data.transpose(1, 0, 2)).reshape(cin, b * length)
            win_flat = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(
                b * length, cout * k
            )
            gw = (x2 @ win_flat).reshape(cin, cout, k)
        return gx, gw, gb

    return _result(y, "conv1d_transpose", (x, weight, bias), grad_fn)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


class RunningStats:
    """Per-channel running mean/variance, mutated by train-mode batchnorm."""

    __slots__ = ("mean", "var")

    def __init__(self, channels: int):
        self.mean = np.zeros(channels, dtype=np.float64)
        self.var = np.ones(channels, dtype=np.float64)

    def copy(self) -> "RunningStats":
        c = RunningStats(len(self.mean))
        c.mean = self.mean.copy()
        c.var = self.var.copy()
        return c


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: RunningStats,
    eps: float = 1e-5,
    momentum: float = 0.1,
    train: bool = True,
) -> Tensor:
    """Per-channel normalization over batch x length, then affine transform.

    Train mode normalizes with batch moments and folds them into ``stats``;
    infer mode normalizes with ``stats`` and leaves it untouched.
    """
    if x.data.ndim != 3:
        raise ShapeError("batchnorm1d expects [B, C, L]")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm1d affine params must be [{c}]")

    if train:
        m = x.shape[0] * x.shape[2]
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        stats.mean = (1.0 - momentum) * stats.mean + momentum * mu
        unbiased = var * (m / (m - 1)) if m > 1 else var
        stats.var = (1.0 - momentum) * stats.var + momentum * unbiased
    else:
        m = 0
        mu = stats.mean
        var = stats.var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None]) * inv[None, :, None]
    y = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def grad_fn(gy: np.ndarray):
        gx = gg = gb = None
        if beta.requires_grad:
            gb = gy.sum(axis=(0, 2))
        if gamma.requires_grad:
            gg = (gy * xhat).sum(axis=(0, 2))
        if x.requires_grad:
            scale = (gamma.data * inv)[None, :, None]
            if train:
                g_mean = gy.mean(axis=(0, 2))[None, :, None]
                gx_mean = (gy * xhat).mean(axis=(0, 2))[None, :, None]
                gx = scale * (gy - g_mean - xhat * gx_mean)
            else:
                gx = scale * gy
        return gx, gg, gb

    return _result(y, "batchnorm1d", (x, gamma, beta), grad_fn)


# ---------------------------------------------------------------------------
# pointwise / structural ops
# ---------------------------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise UsageError(f"leaky_relu slope must be in (0, 1), got {slope}")
    mask = x.data >= 0
    y = np.where(mask, x.data, slope * x.data)

    def grad_fn(gy: np.ndarray):
        return (np.where(mask, gy, slope * gy),)

    return _result(y, "leaky_relu", (x,), grad_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Join two [B, C, L] tensors along the channel axis (a first)."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError("concat_channels expects rank-3 tensors")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ShapeError(f"concat_channels batch/length mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    y = np.concatenate([a.data, b.data], axis=1)

    def grad_fn(gy: np.ndarray):
        return gy[:, :ca], gy[:, ca:]

    return _result(y, "concat_channels", (a, b), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _result(a.data + b.data, "add", (a, b), lambda gy: (gy, gy))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    return _result(a.data - b.data, "sub", (a, b), lambda gy: (gy, -gy))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors the numpy name on purpose
    # subgradient at 0 is 0 (np.sign(0) == 0)
    sign = np.sign(x.data)
    return _result(np.abs(x.data), "abs", (x,), lambda gy: (gy * sign,))


def sum(x: Tensor) -> Tensor:  # noqa: A001
    def grad_fn(gy: np.ndarray):
        return (np.full_like(x.data, float(gy)),)

    return _result(np.asarray(x.data.sum()), "sum", (x,), grad_fn)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def grad_fn(gy: np.ndarray):
        return (np.full_like(x.data, float(gy) / n),)

    return _result(np.asarray(x.data.mean()), "mean", (x,), grad_fn)


def pad1d(x: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the length axis of a [B, C, L] tensor."""
    if x.data.ndim != 3:
        raise ShapeError("pad1d expects [B, C, L]")
    if left < 0 or right < 0:
        raise UsageError("pad amounts must be non-negative")
    y = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    length = x.shape[2]

    def grad_fn(gy: np.ndarray):
        return (gy[:, :, left : left + length],)

    return _result(y, "pad1d", (x,), grad_fn)


def crop1d(x: Tensor, left: int, right: int) -> Tensor:
    """Drop ``left``/``right`` samples from the length axis."""
    if x.data.ndim != 3:
        raise ShapeError("crop1d expects [B, C, L]")
    length = x.shape[2]
    if left < 0 or right < 0 or left + right >= length:
        raise UsageError(f"cannot crop {left}+{right} from length {length}")
    y = x.data[:, :, left : length - right]

    def grad_fn(gy: np.ndarray):
        return (np.pad(gy, ((0, 0), (0, 0), (left, right))),)

    return _result(y, "crop1d", (x,), grad_fn)
