"""Dense float64 tensors with taped reverse-mode differentiation.

Every operation that participates in training registers a backward rule on
the node it produces; `backward(loss)` walks the recorded graph once and
frees it. Broadcasting is deliberately restricted: the only implicit
broadcasts are the explicit *_rowvec / *_colvec ops, everything else must
match shapes exactly and raises ShapeError otherwise.

Tensors are value-semantic: ops never mutate their inputs. The recorded
graph is confined to one logical thread; independent graphs may be used
from different threads concurrently.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as K


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op's contract."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    `grad` is populated for leaf tensors with requires_grad=True after
    `backward`; it accumulates across backward passes until `zero_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    # -- introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and self._parents == ()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- gradient bookkeeping ---------------------------------------------

    def zero_grad(self):
        self.grad = None

    def assign_(self, data: np.ndarray):
        """Replace the stored values (optimizer/grad-check use only)."""
        arr = np.asarray(data, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise ShapeError(f"assign_ shape {arr.shape} != {self.data.shape}")
        self.data = arr.copy()

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _need_2d(t: Tensor, op: str):
    if t.data.ndim != 2:
        raise ShapeError(f"{op} expects a 2-d tensor, got shape {t.shape}")


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape {a.shape} does not match {b.shape}")


# -- elementwise -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    return _make(a.data / b.data, (a, b),
                 lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def add_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data + s, (a,), lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    x = a.data
    return _make(K.gelu_fwd(x), (a,), lambda g: (K.gelu_bwd(x, g),))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    # ties route the gradient to `a` (deterministic subgradient)
    _same_shape(a, b, "maximum")
    take_a = a.data >= b.data
    return _make(np.where(take_a, a.data, b.data), (a, b),
                 lambda g: (g * take_a, g * ~take_a))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "minimum")
    take_a = a.data <= b.data
    return _make(np.where(take_a, a.data, b.data), (a, b),
                 lambda g: (g * take_a, g * ~take_a))


# -- shape plumbing ----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _make(a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),))


def transpose2d(a: Tensor) -> Tensor:
    _need_2d(a, "transpose2d")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    for p in parts:
        _need_2d(p, "concat_rows")
    sizes = [p.data.shape[0] for p in parts]
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(g[offs[i]:offs[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bwd)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    for p in parts:
        _need_2d(p, "concat_cols")
    sizes = [p.data.shape[1] for p in parts]
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(g[:, offs[i]:offs[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    _need_2d(a, "slice_rows")

    def bwd(g):
        gx = np.zeros_like(a.data)
        gx[start:stop] = g
        return (gx,)

    return _make(a.data[start:stop].copy(), (a,), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    _need_2d(a, "slice_cols")

    def bwd(g):
        gx = np.zeros_like(a.data)
        gx[:, start:stop] = g
        return (gx,)

    return _make(a.data[:, start:stop].copy(), (a,), bwd)


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    _need_2d(a, "take_rows")
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(a.data[idx].copy(), (a,), bwd)


# -- reductions and row/col vector ops --------------------------------------


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape
    return _make(np.array(a.data.sum()), (a,),
                 lambda g: (np.full(shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def sum_axis0(a: Tensor) -> Tensor:
    _need_2d(a, "sum_axis0")
    r = a.data.shape[0]
    return _make(a.data.sum(axis=0, keepdims=True), (a,),
                 lambda g: (np.repeat(g, r, axis=0),))


def mean_axis0(a: Tensor) -> Tensor:
    return scale(sum_axis0(a), 1.0 / a.data.shape[0])


def _need_rowvec(v: Tensor, c: int, op: str):
    if v.data.shape != (1, c):
        raise ShapeError(f"{op}: expected row vector (1,{c}), got {v.shape}")


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    _need_2d(a, "add_rowvec")
    _need_rowvec(v, a.data.shape[1], "add_rowvec")
    return _make(a.data + v.data, (a, v),
                 lambda g: (g, g.sum(axis=0, keepdims=True)))


def sub_rowvec(a: Tensor, v: Tensor) -> Tensor:
    _need_2d(a, "sub_rowvec")
    _need_rowvec(v, a.data.shape[1], "sub_rowvec")
    return _make(a.data - v.data, (a, v),
                 lambda g: (g, -g.sum(axis=0, keepdims=True)))


def mul_colvec(a: Tensor, u: Tensor) -> Tensor:
    """Scale each row of `a` by the matching entry of column vector `u`."""
    _need_2d(a, "mul_colvec")
    if u.data.shape != (a.data.shape[0], 1):
        raise ShapeError(f"mul_colvec: expected ({a.data.shape[0]},1), got {u.shape}")
    return _make(a.data * u.data, (a, u),
                 lambda g: (g * u.data, (g * a.data).sum(axis=1, keepdims=True)))


# -- dense algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _need_2d(a, "matmul")
    _need_2d(b, "matmul")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def softmax_rows(a: Tensor) -> Tensor:
    _need_2d(a, "softmax_rows")
    y = K.softmax_rows_fwd(a.data)
    return _make(y, (a,), lambda g: (K.softmax_rows_bwd(y, g),))


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-row normalization over the last axis, then affine (gamma, beta)."""
    _need_2d(a, "layer_norm")
    c = a.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({c},), "
                         f"got {gamma.shape} and {beta.shape}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    y, xhat, inv_std = K.layer_norm_fwd(a.data, gamma.data, beta.data, eps)

    def bwd(g):
        return K.layer_norm_bwd(g, xhat, inv_std, gamma.data)

    return _make(y, (a, gamma, beta), bwd)


# -- grid kernels ------------------------------------------------------------


def conv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 convolution, padding 1, on an [h,w,ci] grid; w is [3,3,ci,co]."""
    if x.data.ndim != 3:
        raise ShapeError(f"conv3x3 expects [h,w,ci], got {x.shape}")
    if w.data.shape[:3] != (3, 3, x.data.shape[2]):
        raise ShapeError(f"conv3x3: weight {w.shape} does not fit input {x.shape}")
    if b.data.shape != (w.data.shape[3],):
        raise ShapeError(f"conv3x3: bias {b.shape} does not match {w.shape}")

    def bwd(g):
        return K.conv3x3_bwd(x.data, w.data, g)

    return _make(K.conv3x3_fwd(x.data, w.data, b.data), (x, w, b), bwd)


def im2patches(x: Tensor, p: int) -> Tensor:
    """Gather non-overlapping p x p patches row-major: [H,W,c] -> [hw, p*p*c]."""
    if x.data.ndim != 3:
        raise ShapeError(f"im2patches expects [H,W,c], got {x.shape}")
    hh, ww, _ = x.data.shape
    if hh % p or ww % p:
        raise ShapeError(f"im2patches: frame {x.shape} not divisible by patch {p}")
    shape = x.data.shape
    return _make(K.im2patches_fwd(x.data, p), (x,),
                 lambda g: (K.im2patches_bwd(g, shape, p),))


# -- backward pass -----------------------------------------------------------


def backward(loss: Tensor):
    """Populate grads of every reachable requires_grad leaf with d(loss)/d(leaf).

    The recorded graph is freed afterwards; grads accumulate across calls
    until zero_grad. Raises on non-scalar losses and on graphs already
    consumed by a previous backward.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss._parents is None:
        raise RuntimeError("backward: graph already freed by a previous call")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents or ():
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf: fold into the persistent grad buffer
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = grads.get(id(p))
            if acc is None:
                grads[id(p)] = pg.copy() if pg.base is not None or pg is g else pg
            else:
                acc += pg
    # free the tape; freed nodes get _parents=None so a second backward is caught
    for node in topo:
        if node._backward is not None:
            node._backward = None
            node._parents = None  # type: ignore[assignment]


def zero_grads(params: Iterable[Tensor]):
    for p in params:
        p.zero_grad()
