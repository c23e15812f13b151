"""Minimal reverse-mode differentiable tensors over numpy arrays.

Every operation records its inputs and a backward rule on the output tensor,
so the computation graph is rebuilt on each forward pass (define-by-run).
Calling :meth:`Tensor.backward` on a scalar walks that graph once in reverse
topological order and accumulates gradients.

Operations accept a single image laid out as ``[C, H, W]`` or a batch laid out
as ``[N, C, H, W]``; the dtype of the inputs is preserved, so the same code runs
in float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "GradientError",
    "ShapeError",
    "Tensor",
    "concat_depth",
    "conv2d",
    "is_grad_enabled",
    "mse_loss",
    "no_grad",
    "relu",
    "same_padding",
    "tanh_act",
    "tensor_sum",
    "tile_spatial",
    "upsample_nearest2x",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class GradientError(RuntimeError):
    """Raised when backward or an optimizer step is called out of contract."""


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording a graph (per thread)."""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """Dense real array that optionally takes part in gradient recording.

    ``grad`` stays ``None`` until a backward pass reaches the tensor (or
    :meth:`zero_grad` is called) and is accumulated across backward calls.
    """

    def __init__(self, data, requires_grad: bool = False) -> None:
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}{op})"

    def backward(self) -> None:
        if self.data.size != 1:
            raise GradientError(
                f"backward needs a scalar loss, got shape {self.shape}"
            )
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    # iterative DFS; each node is emitted after all of its inputs
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn,
            op: str) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Return ``(out_size, pad_before, pad_after)`` for same-padding.

    The output has ``ceil(size / stride)`` entries; an odd total padding puts
    the extra row/column after the input.
    """
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Same-padded 2-D cross-correlation with per-channel bias.

    ``x`` is ``[C_in, H, W]`` or ``[N, C_in, H, W]``; ``kernels`` is
    ``[C_out, C_in, k, k]`` with odd ``k``. Zero padding is used.
    """
    x, kernels, bias = _as_tensor(x), _as_tensor(kernels), _as_tensor(bias)
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d input must be [C,H,W] or [N,C,H,W], got {x.shape}")
    if kernels.ndim != 4:
        raise ShapeError(f"conv2d kernels must be 4-D, got {kernels.shape}")
    c_out, c_in, kh, kw = kernels.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d kernels must be square and odd, got {kh}x{kw}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {c_out} kernels")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    batched = x.ndim == 4
    xs = x.data if batched else x.data[None]
    n, c, h, w = xs.shape
    if c != c_in:
        raise ShapeError(f"input has {c} channels but kernels expect {c_in}")
    if h < 1 or w < 1:
        raise ShapeError(f"conv2d input spatial dims must be >= 1, got {h}x{w}")

    k = kh
    ho, top, bottom = same_padding(h, k, stride)
    wo, left, right = same_padding(w, k, stride)
    if top or bottom or left or right:
        xp = np.pad(xs, ((0, 0), (0, 0), (top, bottom), (left, right)))
    else:
        xp = xs
    if k == 1:
        patches = xp[:, :, ::stride, ::stride][:, :, None, None]
    else:
        windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        # (N, C, Ho, Wo, k, k) -> (N, C, k, k, Ho, Wo)
        patches = windows[:, :, ::stride, ::stride].transpose(0, 1, 4, 5, 2, 3)
    # columns laid out as (C*k*k, N*Ho*Wo)
    cols = np.ascontiguousarray(patches.transpose(1, 2, 3, 0, 4, 5)).reshape(
        c * k * k, n * ho * wo)
    w2 = kernels.data.reshape(c_out, -1)
    out = (w2 @ cols).reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3)
    out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    if not batched:
        out = out[0]
    hp, wp = xp.shape[2], xp.shape[3]

    def backward(g: np.ndarray):
        g4 = g if batched else g[None]
        g2 = g4.transpose(1, 0, 2, 3).reshape(c_out, -1)
        gx = gk = gb = None
        if kernels.requires_grad:
            gk = (g2 @ cols.T).reshape(kernels.shape)
        if bias.requires_grad:
            gb = g4.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(c, k, k, n, ho, wo)
            gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                        dcols[:, i, j].transpose(1, 0, 2, 3))
            gx = gxp[:, :, top:top + h, left:left + w]
            if not batched:
                gx = gx[0]
        return gx, gk, gb

    return _result(out, (x, kernels, bias), backward, "conv2d")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)
    return _result(out, (x,), lambda g: (g * mask,), "relu")


def tanh_act(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)

    def backward(g: np.ndarray):
        # sech^2 rather than 1 - y^2: y rounds to +-1 for |x| > ~9 in float32,
        # which would zero the gradient of a saturated unit
        with np.errstate(over="ignore"):
            slope = 1.0 / np.square(np.cosh(x.data))
        return (g * slope,)

    return _result(y, (x,), backward, "tanh")


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Replicate every pixel into a 2x2 block over the last two axes."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"upsample needs at least 2 dims, got {x.shape}")
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)
    lead, (h, w) = x.shape[:-2], x.shape[-2:]

    def backward(g: np.ndarray):
        return (g.reshape(*lead, h, 2, w, 2).sum(axis=(-3, -1)),)

    return _result(out, (x,), backward, "upsample")


def concat_depth(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``b``'s channels after ``a``'s along the depth axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (3, 4) or a.ndim != b.ndim:
        raise ShapeError(f"cannot concatenate shapes {a.shape} and {b.shape}")
    if a.shape[:-3] != b.shape[:-3] or a.shape[-2:] != b.shape[-2:]:
        raise ShapeError(f"spatial/batch mismatch: {a.shape} vs {b.shape}")
    split = a.shape[-3]
    out = np.concatenate([a.data, b.data], axis=-3)

    def backward(g: np.ndarray):
        return g[..., :split, :, :], g[..., split:, :, :]

    return _result(out, (a, b), backward, "concat")


def tile_spatial(v: Tensor, h: int, w: int) -> Tensor:
    """Copy a ``[D]`` (or ``[N, D]``) vector to every position of an h x w grid."""
    v = _as_tensor(v)
    if v.ndim not in (1, 2):
        raise ShapeError(f"tile_spatial expects [D] or [N,D], got {v.shape}")
    if h < 1 or w < 1:
        raise ValueError(f"tile size must be positive, got {h}x{w}")
    out = np.ascontiguousarray(np.broadcast_to(v.data[..., None, None], (*v.shape, h, w)))
    return _result(out, (v,), lambda g: (g.sum(axis=(-2, -1)),), "tile")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Squared chroma error over ``2HW`` per image, averaged over a batch.

    For ``[2, H, W]`` inputs this is ``sum((target - pred)**2) / (2*H*W)``;
    ``[N, 2, H, W]`` inputs give the mean of the N per-image values.
    """
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    if pred.ndim not in (3, 4) or pred.shape[-3] != 2:
        raise ShapeError(f"mse_loss expects [2,H,W] or [N,2,H,W], got {pred.shape}")
    h, w = pred.shape[-2:]
    n = pred.shape[0] if pred.ndim == 4 else 1
    scale = 1.0 / (2 * h * w * n)
    diff = pred.data - target.data
    out = np.asarray(np.sum(diff * diff) * scale, dtype=pred.dtype)

    def backward(g: np.ndarray):
        d = (g * 2 * scale) * diff
        return d.astype(pred.dtype, copy=False), (-d).astype(target.dtype, copy=False)

    return _result(out, (pred, target), backward, "mse")


def tensor_sum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return _result(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")
