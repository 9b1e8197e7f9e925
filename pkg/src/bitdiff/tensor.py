"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a row-major numpy array.  Every differentiable
operation records a tape node (op tag, parent tensors, backward rule) on the
output tensor; :meth:`Tensor.backward` walks the resulting DAG in reverse
topological order exactly once.

Storage follows the dtype of the input array (float32 by default for Python
scalars and lists); reductions accumulate in float64.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numba
import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    if isinstance(data, np.generic):
        data = np.asarray(data)
    if isinstance(data, np.ndarray):
        if dtype is not None and data.dtype != dtype:
            return data.astype(dtype)
        if data.dtype.kind in "fiub":
            return data
        return data.astype(DEFAULT_DTYPE)
    return np.asarray(data, dtype=dtype or DEFAULT_DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """N-dimensional array that can participate in the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"
        self._consumed = False

    # -- tape plumbing -------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple, backward, op: str) -> "Tensor":
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
            out._op = op
        return out

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``grad`` on every leaf reachable from this tensor.

        The tape below this tensor is released afterwards, so a second call
        raises ``RuntimeError``.
        """
        if self._consumed:
            raise RuntimeError("backward called twice on the same tape; rebuild the graph first")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                pg = _unbroadcast(pg, p.data.shape).astype(p.data.dtype, copy=False)
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg
            node._parents = ()
            node._backward = None
            node._consumed = True
        self._consumed = True

    # -- array protocol ------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    # -- elementwise arithmetic ----------------------------------------
    def __add__(self, other):
        other = _wrap(other, self.dtype)
        return Tensor._make(self.data + other.data, (self, other), lambda g: (g, g), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other, self.dtype)
        return Tensor._make(self.data - other.data, (self, other), lambda g: (g, -g), "sub")

    def __rsub__(self, other):
        return _wrap(other, self.dtype) - self

    def __mul__(self, other):
        other = _wrap(other, self.dtype)
        a, b = self.data, other.data
        return Tensor._make(a * b, (self, other), lambda g: (g * b, g * a), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other, self.dtype)
        a, b = self.data, other.data
        return Tensor._make(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)), "div")

    def __rtruediv__(self, other):
        return _wrap(other, self.dtype) / self

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float):
        a = self.data
        out = a**exponent
        return Tensor._make(out, (self,), lambda g: (g * exponent * a ** (exponent - 1),), "pow")

    def __matmul__(self, other):
        other = _wrap(other, self.dtype)
        a, b = self.data, other.data

        def bw(g):
            ga = g @ np.swapaxes(b, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b)
            gb = np.swapaxes(a, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a, g)
            return ga, gb

        return Tensor._make(a @ b, (self, other), bw, "matmul")

    def __getitem__(self, index):
        shape = self.data.shape

        def bw(g):
            full = np.zeros(shape, dtype=g.dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._make(self.data[index], (self,), bw, "getitem")

    # -- unary ---------------------------------------------------------
    def abs(self):
        a = self.data
        return Tensor._make(np.abs(a), (self,), lambda g: (g * np.sign(a),), "abs")

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,), "log")

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), lambda g: (g * 0.5 / out,), "sqrt")

    def clamp(self, lo: float | None = None, hi: float | None = None):
        """Clip values; gradient passes only where the value was not clipped."""
        a = self.data
        out = np.clip(a, lo, hi)
        mask = np.ones_like(a)
        if lo is not None:
            mask = mask * (a >= lo)
        if hi is not None:
            mask = mask * (a <= hi)
        return Tensor._make(out, (self,), lambda g: (g * mask,), "clamp")

    def maximum(self, floor: float):
        a = self.data
        out = np.maximum(a, floor)
        return Tensor._make(out, (self,), lambda g: (g * (a >= floor),), "maximum")

    # -- shape ---------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    # -- reductions ----------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self.data
        out = np.sum(a, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape),)

        return Tensor._make(np.asarray(out), (self,), bw, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        a = self.data
        if axis is None:
            count = a.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([a.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


# ---------------------------------------------------------------------
# functional ops
# ---------------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    arrays = [t.data for t in tensors]
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(np.concatenate(arrays, axis=axis), tuple(tensors), bw, "concat")


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    return Tensor._make(
        np.where(mask, a.data, b.data), (a, b), lambda g: (g * mask, g * ~mask), "where"
    )


def custom_sign(x: Tensor, clip_bound: float = 1.0) -> Tensor:
    """Sign with ``sign(0) = +1``; straight-through gradient clipped at ``|x| <= clip_bound``."""
    a = x.data
    one = np.ones((), a.dtype)
    out = np.where(a >= 0, one, -one)
    return Tensor._make(out, (x,), lambda g: (g * (np.abs(a) <= clip_bound),), "custom_sign")


def silu(x: Tensor) -> Tensor:
    a = x.data
    s = 1.0 / (1.0 + np.exp(-a))
    return Tensor._make(a * s, (x,), lambda g: (g * (s * (1.0 + a * (1.0 - s))),), "silu")


def frobenius_norm(x: Tensor, axis, keepdims: bool = False) -> Tensor:
    """sqrt(sum(x**2)) over ``axis``; the gradient at an all-zero slice is taken as 0."""
    a = x.data
    out = np.sqrt(np.sum(np.square(a, dtype=np.float64), axis=axis, keepdims=True)).astype(a.dtype)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(out > 0, out, 1)
        return (g * np.where(out > 0, a / safe, 0),)

    res = out if keepdims else np.squeeze(out, axis=axis)
    return Tensor._make(res, (x,), bw, "frobenius_norm")


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    b, c = x.shape[:2]
    if c % groups:
        raise ShapeError(f"group_norm: {c} channels not divisible into {groups} groups")
    a = x.data.reshape(b, groups, -1)
    n = a.shape[-1]
    mu = a.mean(axis=-1, keepdims=True, dtype=np.float64).astype(a.dtype)
    xc = a - mu
    var = np.mean(np.square(xc, dtype=np.float64), axis=-1, keepdims=True).astype(a.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(x.shape)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    gam = gamma.data.reshape(bshape)
    out = xhat * gam + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def bw(g):
        dxhat = (g * gam).reshape(b, groups, -1)
        xh = xhat.reshape(b, groups, -1)
        dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True) - xh * (dxhat * xh).sum(-1, keepdims=True))
        dgamma = (g * xhat).sum(axis=red).reshape(gamma.shape)
        dbeta = g.sum(axis=red).reshape(beta.shape)
        return dx.reshape(x.shape), dgamma, dbeta

    return Tensor._make(out, (x, gamma, beta), bw, "group_norm")


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: spatial dims {(h, w)} not divisible by {k}")
    out = x.data.reshape(b, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return Tensor._make(out, (x,), bw, "avg_pool2d")


def upsample_nearest2d(x: Tensor, k: int = 2) -> Tensor:
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, k, axis=2), k, axis=3)

    def bw(g):
        return (g.reshape(b, c, h, k, w, k).sum(axis=(3, 5)),)

    return Tensor._make(out, (x,), bw, "upsample_nearest2d")


def pad_channels(x: Tensor, total: int) -> Tensor:
    """Zero-pad the channel axis up to ``total`` channels."""
    c = x.shape[1]
    if total < c:
        raise ShapeError(f"pad_channels: cannot shrink {c} channels to {total}")
    pad = [(0, 0)] * x.ndim
    pad[1] = (0, total - c)
    return Tensor._make(np.pad(x.data, pad), (x,), lambda g: (g[:, :c],), "pad_channels")


def _check_conv(x_shape, w_shape, padding):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x_shape} and {w_shape}")
    if x_shape[1] != w_shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input has {x_shape[1]} channels, weight expects {w_shape[1]}"
        )
    if w_shape[2] > x_shape[2] + 2 * padding or w_shape[3] > x_shape[3] + 2 * padding:
        raise ShapeError(
            f"conv2d kernel {w_shape[2:]} larger than padded input {x_shape[2] + 2 * padding, x_shape[3] + 2 * padding}"
        )


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


@numba.njit(cache=True)
def _im2col(x, kh, kw, stride, padding, oh, ow):
    """Columns ``[b, c*kh*kw, oh*ow]``; taps outside the input read as zero."""
    b, c, h, w = x.shape
    cols = np.zeros((b, c * kh * kw, oh * ow), dtype=x.dtype)
    for n in range(b):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for y in range(oh):
                        yy = y * stride + i - padding
                        if yy < 0 or yy >= h:
                            continue
                        for z in range(ow):
                            xx = z * stride + j - padding
                            if 0 <= xx < w:
                                cols[n, row, y * ow + z] = x[n, ch, yy, xx]
    return cols


@numba.njit(cache=True)
def _col2im(dcols, out, kh, kw, stride, padding, oh, ow):
    """Adjoint of :func:`_im2col`, accumulated into ``out``."""
    b, c, h, w = out.shape
    for n in range(b):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for y in range(oh):
                        yy = y * stride + i - padding
                        if yy < 0 or yy >= h:
                            continue
                        for z in range(ow):
                            xx = z * stride + j - padding
                            if 0 <= xx < w:
                                out[n, ch, yy, xx] += dcols[n, row, y * ow + z]


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation, input ``[b,c,h,w]`` and weight ``[m,c,kh,kw]``."""
    _check_conv(x.shape, weight.shape, padding)
    b, c, h, w = x.shape
    m, _, kh, kw = weight.shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    # columns laid out [b, c*kh*kw, oh*ow] so both products are batched GEMMs
    if kh == kw == 1 and stride == 1 and not padding:
        cols = x.data.reshape(b, c, h * w)
    else:
        cols = _im2col(np.ascontiguousarray(x.data), kh, kw, stride, padding, oh, ow)
    wf = weight.data.reshape(m, -1)
    out = (wf @ cols).reshape(b, m, oh, ow)

    def bw(g):
        g3 = g.reshape(b, m, oh * ow)
        dw = (g3 @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape) if weight.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = wf.T @ g3
            if kh == kw == 1 and stride == 1 and not padding:
                dx = dcols.reshape(b, c, h, w)
            else:
                dx = np.zeros((b, c, h, w), dtype=dcols.dtype)
                _col2im(np.ascontiguousarray(dcols), dx, kh, kw, stride, padding, oh, ow)
        return dx, dw

    return Tensor._make(out, (x, weight), bw, "conv2d")

