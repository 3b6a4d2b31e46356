"""Dense tensors with reverse-mode differentiation.

Every primitive is a pair of plain numpy functions: a forward map from parent
arrays to an output array and a backward map from the output gradient to one
gradient per parent. A :class:`Tensor` produced by a primitive remembers the
primitive and its parents, which is enough both to backpropagate and to replay
the forward computation from a recorded :class:`ComputeGraph`.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ContractError(RuntimeError):
    """A precondition of a differentiation routine was violated."""


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable[..., np.ndarray]
    backward: Callable[..., tuple]


class RowGrad:
    """Sparse gradient: ``values[k]`` is added to row ``indices[k]``."""

    __slots__ = ("indices", "values")

    def __init__(self, indices: np.ndarray, values: np.ndarray):
        self.indices = indices
        self.values = values


class Tensor:
    """A real array with an optional gradient slot.

    Leaves created with ``requires_grad=True`` are parameters: their ``grad``
    is allocated eagerly and accumulates across :func:`backward` calls until
    :meth:`zero_grad` is called.
    """

    __slots__ = ("data", "grad", "requires_grad", "_prim", "_parents", "_kwargs")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._prim: Primitive | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._kwargs: dict = {}

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._prim is None

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = self._prim.name if self._prim else "leaf"
        return f"Tensor(shape={self.shape}, op={tag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other, self), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else DEFAULT_DTYPE
    arr = np.asarray(x, dtype=dtype)
    if like is not None and arr.ndim == 0 and like.data.ndim > 0:
        arr = np.full(like.shape, arr, dtype=dtype)
    return Tensor(arr)


# -- graph recording --------------------------------------------------------

class _GraphStack(threading.local):
    def __init__(self):
        self.graphs: list[ComputeGraph] = []


_local = _GraphStack()


class ComputeGraph:
    """Ordered record of the primitive applications made while active.

    Use as a context manager; graphs are thread-local and may nest (inner
    graphs shadow outer ones).
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "ComputeGraph":
        _local.graphs.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.graphs.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> list[str]:
        return [n._prim.name for n in self.nodes]

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded node from its parents' current values.

        Nodes are re-evaluated in recording order, which is topological, and
        their stored values are overwritten. Returns the new values.
        """
        out = []
        for node in self.nodes:
            node.data = node._prim.forward(*(p.data for p in node._parents), **node._kwargs)
            out.append(node.data)
        return out


def _record(node: Tensor) -> None:
    stack = _local.graphs
    if stack:
        stack[-1].nodes.append(node)


def apply(prim: Primitive, *parents: Tensor, **kwargs) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = prim.forward(*(p.data for p in parents), **kwargs)
    out.requires_grad = False
    out.grad = None
    out._prim = prim
    out._parents = parents
    out._kwargs = kwargs
    _record(out)
    return out


# -- backward ---------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accumulate(buffers: dict, node: Tensor, contribution) -> None:
    if node.is_leaf:
        if not node.requires_grad:
            return
        buf = node.grad
    else:
        buf = buffers.get(id(node))
        if buf is None:
            if isinstance(contribution, RowGrad):
                buf = buffers[id(node)] = np.zeros_like(node.data)
            else:
                buffers[id(node)] = np.array(contribution, dtype=node.data.dtype, copy=True)
                return
    if isinstance(contribution, RowGrad):
        np.add.at(buf, contribution.indices, contribution.values)
    else:
        buf += contribution


def backward(loss: Tensor) -> None:
    """Populate ``grad`` of every parameter leaf reachable from ``loss``.

    Gradients accumulate into existing ``grad`` buffers, so shared parameters
    collect one contribution per use.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    buffers: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss.is_leaf and loss.requires_grad:
        loss.grad += 1.0
        return
    for node in reversed(order):
        if node.is_leaf:
            continue
        g = buffers.pop(id(node), None)
        if g is None:
            continue
        grads = node._prim.backward(g, node.data, *(p.data for p in node._parents), **node._kwargs)
        for parent, pg in zip(node._parents, grads):
            if pg is None:
                continue
            if parent.is_leaf and not parent.requires_grad:
                continue
            _accumulate(buffers, parent, pg)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# -- primitives ---------------------------------------------------------------


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


_ADD = Primitive("add", lambda a, b: a + b, lambda g, out, a, b: (g, g))
_SUB = Primitive("sub", lambda a, b: a - b, lambda g, out, a, b: (g, -g))
_MUL = Primitive("mul", lambda a, b: a * b, lambda g, out, a, b: (g * b, g * a))
_SCALE = Primitive("scale", lambda a, c: a * c, lambda g, out, a, c: (g * c,))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    return _as_tensor(a, b), b


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    _check_same(a, b, "add")
    return apply(_ADD, a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    _check_same(a, b, "sub")
    return apply(_SUB, a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of equally shaped tensors."""
    a, b = _pair(a, b)
    _check_same(a, b, "mul")
    return apply(_MUL, a, b)


def scale(a: Tensor, c: float) -> Tensor:
    return apply(_SCALE, a, c=float(c))


_SIGMOID = Primitive("sigmoid", expit, lambda g, y, x: (g * y * (1.0 - y),))
_TANH = Primitive("tanh", np.tanh, lambda g, y, x: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    return apply(_SIGMOID, _as_tensor(x))


def tanh_act(x: Tensor) -> Tensor:
    return apply(_TANH, _as_tensor(x))


def _softmax_fwd(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def _softmax_bwd(g, y, x):
    return (y * (g - np.dot(g, y)),)


_SOFTMAX = Primitive("softmax", _softmax_fwd, _softmax_bwd)


def softmax(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {x.shape}")
    if x.data.size == 0:
        raise ShapeError("softmax of an empty vector")
    return apply(_SOFTMAX, x)


def _matmul_bwd(g, out, a, b):
    if a.ndim == 2 and b.ndim == 1:
        return np.outer(g, b), a.T @ g
    if a.ndim == 1 and b.ndim == 2:
        return b @ g, np.outer(a, g)
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    return g @ b.T, a.T @ g


_MATMUL = Primitive("matmul", np.matmul, _matmul_bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product for 1-D and 2-D operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    return apply(_MATMUL, a, b)


def _affine_fwd(x, W, b, *pairs):
    out = W @ x + b
    for k in range(0, len(pairs), 2):
        out += pairs[k + 1] @ pairs[k]
    return out


def _affine_bwd(g, out, x, W, b, *pairs):
    grads = [W.T @ g, np.outer(g, x), g]
    for k in range(0, len(pairs), 2):
        grads += [pairs[k + 1].T @ g, np.outer(g, pairs[k])]
    return tuple(grads)


_AFFINE = Primitive("affine", _affine_fwd, _affine_bwd)


def affine(x: Tensor, W: Tensor, b: Tensor, *pairs: tuple[Tensor, Tensor]) -> Tensor:
    """``W @ x + b`` for a vector ``x``.

    Extra ``(input, matrix)`` pairs add ``matrix @ input`` terms, so a gate
    pre-activation ``W x + U h + b`` is a single node.
    """
    x, W, b = _as_tensor(x), _as_tensor(W), _as_tensor(b)
    if W.data.ndim != 2 or x.data.ndim != 1 or W.shape[1] != x.shape[0] or b.shape != (W.shape[0],):
        raise ShapeError(f"affine: W {W.shape}, x {x.shape}, b {b.shape} are incompatible")
    flat = []
    for h, U in pairs:
        h, U = _as_tensor(h), _as_tensor(U)
        if U.data.ndim != 2 or h.data.ndim != 1 or U.shape != (W.shape[0], h.shape[0]):
            raise ShapeError(f"affine: U {U.shape}, h {h.shape} are incompatible with W {W.shape}")
        flat += [h, U]
    return apply(_AFFINE, x, W, b, *flat)


def _concat_bwd(g, out, *parts, axis=0):
    splits = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return tuple(np.split(g, splits, axis=axis))


_CONCAT = Primitive("concat", lambda *parts, axis=0: np.concatenate(parts, axis=axis), _concat_bwd)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    if not parts:
        raise ShapeError("concat of no tensors")
    return apply(_CONCAT, *parts, axis=axis)


def _stack_bwd(g, out, *parts):
    return tuple(g[i] for i in range(len(parts)))


_STACK = Primitive("stack", lambda *parts: np.stack(parts), _stack_bwd)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    parts = tuple(_as_tensor(p) for p in parts)
    if not parts:
        raise ShapeError("stack of no tensors")
    for p in parts[1:]:
        _check_same(parts[0], p, "stack")
    return apply(_STACK, *parts)


_SUM = Primitive("sum", lambda a: np.sum(a), lambda g, out, a: (np.broadcast_to(g, a.shape).copy(),))


def sum_all(a: Tensor) -> Tensor:
    return apply(_SUM, _as_tensor(a))


def _index_select_bwd(g, out, W, ids):
    return RowGrad(ids, g), None


_INDEX_SELECT = Primitive("index_select", lambda W, ids: W[ids], _index_select_bwd)


def index_select(W: Tensor, ids) -> Tensor:
    """Rows ``W[ids]``; the gradient is scattered back onto the selected rows."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError("index_select expects a 1-D id sequence")
    if ids.size and (ids.min() < 0 or ids.max() >= W.shape[0]):
        raise IndexError(f"index out of range for {W.shape[0]} rows")
    return apply(_INDEX_SELECT, W, _const(ids))


def _const(arr) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = False
    t.grad = None
    t._prim = None
    t._parents = ()
    t._kwargs = {}
    return t


def _getitem_bwd(g, out, a, index):
    full = np.zeros_like(a)
    full[index] = g
    return (full,)


_GETITEM = Primitive("getitem", lambda a, index: a[index], _getitem_bwd)


def take(a: Tensor, index) -> Tensor:
    """Basic indexing (an int or a slice) along the leading axis."""
    return apply(_GETITEM, a, index=index)


def _log_fwd(a, floor):
    return np.log(np.maximum(a, floor))


def _log_bwd(g, out, a, floor):
    return (np.where(a > floor, g / np.maximum(a, floor), 0.0),)


_LOG = Primitive("log", _log_fwd, _log_bwd)


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log with inputs clamped below at ``floor``."""
    return apply(_LOG, _as_tensor(a), floor=float(floor))


# -- finite differences --------------------------------------------------------


def grad_check(model_forward: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    The gap for one entry is ``|a - n| / max(1, |a|, |n|)``. ``model_forward``
    is called with no arguments and must rebuild the loss from the current
    values of ``params``.
    """
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    first = model_forward()
    second = model_forward()
    if not np.array_equal(first.data, second.data):
        raise ContractError("forward pass is not deterministic")
    zero_grad(params)
    backward(second)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = float(model_forward().data)
            flat[k] = orig - epsilon
            down = float(model_forward().data)
            flat[k] = orig
            num = (up - down) / (2.0 * epsilon)
            a = float(analytic.reshape(-1)[k])
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    return worst
