"""Dense 2-D tensors and a tape-based reverse-mode differentiation engine.

Every value in the metric pipeline is a :class:`Tensor` wrapping a 2-D
float64 array (scalars are 1x1).  Operations whose inputs live on a
:class:`Tape` are recorded there in execution order, which is a valid
topological order, so :meth:`Tape.backward` is a single reverse sweep.

Typical use::

    tape = Tape()
    w = tape.parameter(np.eye(3))
    y = conv2d(image, w).sum()
    grads = backward(y)
    grads[w]          # d y / d w

A tape is single-use: ``backward`` consumes and frees it.  Tapes and their
tensors must stay on one thread.
"""

from __future__ import annotations

import contextlib
import math
from collections.abc import Mapping
from functools import lru_cache
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import ndimage, sparse

from .errors import InvalidArgument, InvalidState, NumericDomainError

PADDING_MODES = ("reflect", "zero")
_NDIMAGE_MODE = {"reflect": "mirror", "zero": "constant"}
_LN2 = math.log(2.0)

# op name -> gradient scale; only touched by ``inject_fault``
_FAULTS: dict[str, float] = {}


class _Node:
    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op, inputs, backward):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    """A 2-D float64 array, optionally recorded on a tape."""

    __slots__ = ("data", "requires_grad", "tape", "node_id", "grad")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise InvalidArgument(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.tape: Tape | None = None
        self.node_id: int | None = None
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidArgument(f"item() needs a scalar tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", on tape" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __float__(self):
        return self.item()

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)

    def __getitem__(self, key):
        return crop(self, key)

    def sum(self) -> Tensor:
        return reduce_sum(self)


class GradientSet(Mapping):
    """Gradients of one backward pass, keyed by parameter tensor.

    Parameters the root does not depend on map to zeros.
    """

    def __init__(self, params: Sequence[Tensor], grads: dict[int, np.ndarray]):
        self._params = list(params)
        self._grads = grads

    def __getitem__(self, param: Tensor) -> np.ndarray:
        for p in self._params:
            if p is param:
                g = self._grads.get(p.node_id)
                return np.zeros_like(p.data) if g is None else g
        raise KeyError("tensor is not a parameter of this tape")

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    # Tensors hash by identity, which is what Mapping.__contains__ needs.


class Tape:
    """Ordered record of primitive operations for reverse-mode sweeps."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.freed = False
        self._params: list[Tensor] = []

    def __len__(self):
        return len(self.nodes)

    def _check_open(self):
        if self.freed:
            raise InvalidState("tape was already consumed by backward()")

    def parameter(self, data) -> Tensor:
        """Register a leaf tensor whose gradient is wanted."""
        self._check_open()
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        t.tape = self
        t.node_id = len(self.nodes)
        self.nodes.append(_Node("leaf", (), None))
        self._params.append(t)
        return t

    def _record(self, op: str, data: np.ndarray, inputs, backward_fn) -> Tensor:
        self._check_open()
        out = Tensor(data)
        out.requires_grad = True
        out.tape = self
        out.node_id = len(self.nodes)
        self.nodes.append(_Node(op, inputs, backward_fn))
        return out

    def backward(self, root: Tensor) -> GradientSet:
        """Propagate d root / d node back to every registered parameter."""
        if root.tape is not self:
            raise InvalidState("root tensor is not recorded on this tape")
        self._check_open()
        if root.data.size != 1:
            raise InvalidArgument(f"backward() needs a scalar root, got {root.shape}")
        grads: list[np.ndarray | None] = [None] * (root.node_id + 1)
        grads[root.node_id] = np.ones_like(root.data)
        for nid in range(root.node_id, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            if node.backward is None:
                continue
            scale = _FAULTS.get(node.op)
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or inp.tape is not self:
                    continue
                if scale is not None:
                    gi = gi * scale
                j = inp.node_id
                grads[j] = gi if grads[j] is None else grads[j] + gi
        out = {}
        for p in self._params:
            g = grads[p.node_id] if p.node_id < len(grads) else None
            p.grad = np.zeros_like(p.data) if g is None else g
            out[p.node_id] = p.grad
        result = GradientSet(self._params, out)
        self.nodes = []
        self.freed = True
        return result


def backward(root: Tensor) -> GradientSet:
    """Reverse sweep from a scalar ``root``; frees its tape."""
    if not isinstance(root, Tensor) or root.tape is None:
        raise InvalidState("root is not on a tape; nothing to differentiate")
    return root.tape.backward(root)


@contextlib.contextmanager
def inject_fault(op: str, scale: float = 2.0):
    """Test hook: multiply every gradient produced by primitive ``op``."""
    _FAULTS[op] = scale
    try:
        yield
    finally:
        _FAULTS.pop(op, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, data: np.ndarray, inputs: tuple, backward_fn: Callable) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise InvalidState("operands are recorded on different tapes")
    if tape is None:
        return Tensor(data)
    return tape._record(op, data, inputs, backward_fn)


def _broadcast(a: Tensor, b: Tensor) -> tuple[int, int]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise InvalidArgument(f"shape mismatch: {a.shape} vs {b.shape}") from None


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True).reshape(shape)


# ---------------------------------------------------------------- pointwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast(a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b, offset: float = 0.0) -> Tensor:
    """``a / (b + offset)``; an exactly-zero denominator is an error."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast(a, b)
    den = b.data + offset if offset else b.data
    if np.any(den == 0.0):
        raise NumericDomainError("division by zero; supply a stabilizing offset")
    ad = a.data
    out = ad / den

    def bwd(g):
        ga = g / den
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, den.shape)

    return _emit("div", out, (a, b), bwd)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _emit("neg", -x.data, (x,), lambda g: (-g,))


def square(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    return _emit("square", d * d, (x,), lambda g: (2.0 * d * g,))


def cube(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    return _emit("cube", d * d * d, (x,), lambda g: (3.0 * d * d * g,))


def cbrt(x) -> Tensor:
    """Real cube root.  The derivative at 0 is taken as 0 (it is unbounded)."""
    x = as_tensor(x)
    out = np.cbrt(x.data)

    def bwd(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out != 0.0, g / (3.0 * out * out), 0.0)
        return (d,)

    return _emit("cbrt", out, (x,), bwd)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _emit("exp", out, (x,), lambda g: (g * out,))


def log2_1p(x) -> Tensor:
    """``log2(1 + x)`` for ``x > -1``."""
    x = as_tensor(x)
    d = x.data
    if np.any(d <= -1.0):
        raise NumericDomainError("log2(1 + x) needs x > -1")
    return _emit("log2_1p", np.log1p(d) / _LN2, (x,), lambda g: (g / ((1.0 + d) * _LN2),))


def log2_1p_ratio(num, den) -> Tensor:
    """``log2(1 + num / den)``."""
    return log2_1p(div(num, den))


def relu(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    return _emit("relu", np.maximum(d, 0.0), (x,), lambda g: (g * (d > 0.0),))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes on the closed interval."""
    x = as_tensor(x)
    d = x.data
    inside = (d >= lo) & (d <= hi)
    return _emit("clip", np.clip(d, lo, hi), (x,), lambda g: (g * inside,))


def absolute(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    return _emit("abs", np.abs(d), (x,), lambda g: (g * np.sign(d),))


def _select(op, a, b, take_a):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast(a, b)
    sa, sb = a.shape, b.shape
    out = np.where(take_a, a.data, b.data)
    return _emit(op, out, (a, b),
                 lambda g: (_unbroadcast(g * take_a, sa), _unbroadcast(g * ~take_a, sb)))


def minimum(a, b) -> Tensor:
    """Pointwise min; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    return _select("minimum", a, b, a.data <= b.data)


def maximum(a, b) -> Tensor:
    """Pointwise max; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    return _select("maximum", a, b, a.data >= b.data)


def where(mask: np.ndarray, a, b) -> Tensor:
    """Pick ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        mask = np.broadcast_to(mask, as_tensor(a).shape)
    return _select("where", a, b, mask)


ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div,
    "log2_1p_ratio": log2_1p_ratio, "relu": relu, "clip": clip,
    "min": minimum, "max": maximum, "abs": absolute, "cube": cube, "cbrt": cbrt,
}


def elementwise(op: str, *operands, **kwargs) -> Tensor:
    """Dispatch a pointwise primitive by name (``clip`` takes ``lo``/``hi``)."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise InvalidArgument(f"unknown elementwise op {op!r}") from None
    return fn(*operands, **kwargs)


# --------------------------------------------------------------- reductions


def reduce_sum(x, region: tuple[int, int, int, int] | None = None) -> Tensor:
    """Sum over ``region = (row0, row1, col0, col1)`` (half-open), default all."""
    x = as_tensor(x)
    shape = x.shape
    if region is None:
        region = (0, shape[0], 0, shape[1])
    r0, r1, c0, c1 = region
    if not (0 <= r0 <= r1 <= shape[0] and 0 <= c0 <= c1 <= shape[1]):
        raise InvalidArgument(f"region {region} outside tensor of shape {shape}")
    if r0 == r1 or c0 == c1:
        raise InvalidArgument(f"empty summation region {region}")
    window = x.data[r0:r1, c0:c1]
    total = np.sum(window)

    def bwd(g):
        out = np.zeros(shape)
        out[r0:r1, c0:c1] = g[0, 0]
        return (out,)

    return _emit("reduce_sum", np.array([[total]]), (x,), bwd)


def mean(x) -> Tensor:
    x = as_tensor(x)
    return reduce_sum(x) * (1.0 / x.data.size)


def sum_axis(x, axis: int) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=True)
    return _emit("sum_axis", out, (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise InvalidArgument("shape mismatch in concat") from None

    def bwd(g):
        if axis == 0:
            return tuple(g[bounds[i]:bounds[i + 1], :] for i in range(len(ts)))
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _emit("concat", out, tuple(ts), bwd)


# ------------------------------------------------------------ linear ops


def crop(x, key) -> Tensor:
    """Basic slicing (``x[r0:r1:rs, c0:c1:cs]``) that keeps two dimensions."""
    x = as_tensor(x)
    if not (isinstance(key, tuple) and len(key) == 2 and all(isinstance(k, slice) for k in key)):
        raise InvalidArgument("tensors support only 2-D slice indexing")
    shape = x.shape
    out = x.data[key]
    if out.size == 0:
        raise InvalidArgument(f"empty slice {key} of shape {shape}")

    def bwd(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _emit("crop", out.copy(), (x,), bwd)


def linear_map(x, matrix, axis: int) -> Tensor:
    """Apply a constant (sparse or dense) matrix along ``axis``.

    ``axis=0`` computes ``M @ x``; ``axis=1`` computes ``x @ M.T``.
    """
    x = as_tensor(x)
    if axis == 0:
        out = matrix @ x.data
        return _emit("linear_map", np.asarray(out), (x,), lambda g: (np.asarray(matrix.T @ g),))
    out = (matrix @ x.data.T).T
    return _emit("linear_map", np.asarray(out), (x,), lambda g: (np.asarray((matrix.T @ g.T).T),))


@lru_cache(maxsize=256)
def reflect_pad_matrix(n: int, r: int) -> sparse.csr_matrix:
    """Sparse ``(n + 2r) x n`` operator padding a vector by mirror reflection."""
    idx = np.pad(np.arange(n), r, mode="reflect")
    return sparse.csr_matrix((np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, n))


def _check_padding(padding: str):
    if padding not in PADDING_MODES:
        raise InvalidArgument(f"padding must be one of {PADDING_MODES}, got {padding!r}")


def _fold(gp: np.ndarray, r: int, axis: int) -> np.ndarray:
    """Adjoint of mirror padding by ``r`` along ``axis``."""
    if r == 0:
        return gp
    n = gp.shape[axis] - 2 * r
    P = reflect_pad_matrix(n, r)
    if axis == 0:
        return np.asarray(P.T @ gp)
    return np.asarray((P.T @ gp.T).T)


def _corr1d_adjoint(g: np.ndarray, w: np.ndarray, axis: int, padding: str) -> np.ndarray:
    if padding == "zero":
        return ndimage.correlate1d(g, w[::-1], axis=axis, mode="constant")
    r = len(w) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    gp = ndimage.correlate1d(np.pad(g, pad), w[::-1], axis=axis, mode="constant")
    return _fold(gp, r, axis)


def conv2d(x, kernel, padding: str = "reflect") -> Tensor:
    """Same-size cross-correlation of ``x`` with an odd-sized ``kernel``.

    ``reflect`` mirrors samples about the border without repeating it
    (``d c b | a b c d | c b a``); ``zero`` pads with zeros.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_padding(padding)
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidArgument(f"kernel sides must be odd, got {kernel.shape}")
    rh, rw = kh // 2, kw // 2
    H, W = x.shape
    if padding == "reflect" and (rh > H - 1 or rw > W - 1):
        raise InvalidArgument(f"kernel {kernel.shape} larger than reflect-padded input {x.shape}")
    xd, kd = x.data, kernel.data
    out = ndimage.correlate(xd, kd, mode=_NDIMAGE_MODE[padding], cval=0.0)
    need_x = x.tape is not None
    need_k = kernel.tape is not None

    def bwd(g):
        gx = gk = None
        if need_x:
            flipped = kd[::-1, ::-1]
            if padding == "zero":
                gx = ndimage.correlate(g, flipped, mode="constant")
            else:
                gp = ndimage.correlate(np.pad(g, ((rh, rh), (rw, rw))), flipped, mode="constant")
                gx = _fold(_fold(gp, rh, 0), rw, 1)
        if need_k:
            mode = "reflect" if padding == "reflect" else "constant"
            xp = np.pad(xd, ((rh, rh), (rw, rw)), mode=mode)
            gk = np.empty_like(kd)
            for a in range(kh):
                for b in range(kw):
                    gk[a, b] = np.vdot(g, xp[a:a + H, b:b + W])
        return gx, gk

    return _emit("conv2d", out, (x, kernel), bwd)


def conv2d_separable(x, col_filter, row_filter, padding: str = "reflect") -> Tensor:
    """Correlate with the constant rank-1 kernel ``outer(col_filter, row_filter)``."""
    x = as_tensor(x)
    _check_padding(padding)
    v = np.asarray(col_filter, dtype=np.float64).ravel()
    h = np.asarray(row_filter, dtype=np.float64).ravel()
    if len(v) % 2 == 0 or len(h) % 2 == 0:
        raise InvalidArgument("separable filters must have odd length")
    H, W = x.shape
    if padding == "reflect" and (len(v) // 2 > H - 1 or len(h) // 2 > W - 1):
        raise InvalidArgument(f"filter longer than reflect-padded input {x.shape}")
    mode = _NDIMAGE_MODE[padding]
    tmp = ndimage.correlate1d(x.data, v, axis=0, mode=mode, cval=0.0)
    out = ndimage.correlate1d(tmp, h, axis=1, mode=mode, cval=0.0)

    def bwd(g):
        g1 = _corr1d_adjoint(g, h, 1, padding)
        return (_corr1d_adjoint(g1, v, 0, padding),)

    return _emit("conv2d", out, (x,), bwd)


def decimate2x(x) -> Tensor:
    """Keep every other row and column, flooring odd sizes."""
    x = as_tensor(x)
    H, W = x.shape
    return crop(x, (slice(0, 2 * (H // 2), 2), slice(0, 2 * (W // 2), 2)))


def downsample2x(x, kernel=None, padding: str = "reflect") -> Tensor:
    """Blur then decimate by two.

    Without ``kernel`` the blur is the 2x2 block mean.  A supplied odd
    kernel (dense, or a ``(col, row)`` pair of 1-D filters) is applied as a
    same-size correlation before decimation.
    """
    x = as_tensor(x)
    H, W = x.shape
    if H < 2 or W < 2:
        raise InvalidArgument(f"downsample2x needs at least 2x2 input, got {x.shape}")
    if kernel is None:
        h2, w2 = 2 * (H // 2), 2 * (W // 2)
        parts = [crop(x, (slice(i, h2, 2), slice(j, w2, 2))) for i in (0, 1) for j in (0, 1)]
        return (parts[0] + parts[1] + parts[2] + parts[3]) * 0.25
    if isinstance(kernel, tuple):
        blurred = conv2d_separable(x, kernel[0], kernel[1], padding)
    else:
        blurred = conv2d(x, kernel, padding)
    return decimate2x(blurred)
