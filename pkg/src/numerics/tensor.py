"""
Tensor Module
Dense array container with a reverse-mode differentiation record
"""

from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.errors import AutogradError, ShapeError

_GRAD_ENABLED = True

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation, finite differences)"""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """
    N-dimensional real array with an attached differentiation record

    Leaves (inputs, parameters) accumulate `.grad`; results of operations
    remember their parents and a closure mapping the output gradient to
    one gradient per parent.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_released")

    def __init__(self, data, requires_grad: bool = False):
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float32)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._released = False

    # ------------------------------------------------------------------ #
    #  Info                                                              #
    # ------------------------------------------------------------------ #

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------ #
    #  Arithmetic                                                        #
    # ------------------------------------------------------------------ #

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
        return mul(self, -1.0)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    """Wrap constants; python scalars take the dtype of `like`"""
    if isinstance(value, Tensor):
        return value
    if like is not None and np.isscalar(value):
        return Tensor(np.asarray(value, dtype=like.dtype))
    return Tensor(value)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """
    Create the output of an operation and attach its backward closure

    Args:
        data: Forward result
        parents: Input tensors in the order the closure returns gradients
        backward_fn: Maps output gradient to a gradient (or None) per parent

    Returns:
        Tensor: Result, recording the graph only when some parent needs it
    """
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------- #
#  Elementwise binary ops                                                #
# ---------------------------------------------------------------------- #

def _pair(a, b) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward_fn(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward_fn(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward_fn)


# ---------------------------------------------------------------------- #
#  Reductions and shape ops                                              #
# ---------------------------------------------------------------------- #

def _norm_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), backward_fn)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result(out, (x,), backward_fn)


def reduce_max(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; ties share the gradient equally"""
    out = x.data.max(axis=axis, keepdims=True)
    mask = (x.data == out).astype(x.dtype)
    mask /= mask.sum(axis=axis, keepdims=True)
    result = out if keepdims else np.squeeze(out, axis=axis)

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (mask * g,)

    return make_result(result, (x,), backward_fn)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    def backward_fn(g):
        return (g.reshape(x.shape),)

    return make_result(x.data.reshape(shape), (x,), backward_fn)


def transpose(x: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        return (g.transpose(inverse),)

    return make_result(x.data.transpose(axes), (x,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along `axis`; gradients are split back in the same order"""
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward_fn)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries of `axis` starting at `start`"""
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return make_result(x.data[index], (x,), backward_fn)


def split(x: Tensor, sizes: Sequence[int], axis: int = 1) -> List[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover axis {axis} of extent {x.shape[axis]}")
    parts, start = [], 0
    for size in sizes:
        parts.append(narrow(x, axis, start, size))
        start += size
    return parts


def take_channels(x: Tensor, index: np.ndarray) -> Tensor:
    """Reorder channels (axis 1) by a permutation"""
    index = np.asarray(index)
    if sorted(index.tolist()) != list(range(x.shape[1])):
        raise ShapeError(f"channel index is not a permutation of {x.shape[1]} channels")

    def backward_fn(g):
        full = np.empty_like(x.data)
        full[:, index] = g
        return (full,)

    return make_result(x.data[:, index], (x,), backward_fn)


# ---------------------------------------------------------------------- #
#  Backward engine                                                       #
# ---------------------------------------------------------------------- #

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, store=None) -> None:
    """
    Reverse-mode sweep from a scalar loss

    Leaf tensors that require gradients accumulate d(loss)/d(leaf) into
    `.grad`. The graph is released afterwards, so a second call on the same
    loss is rejected. With a ParamStore, parameters the loss does not reach
    receive zero gradients.

    Args:
        loss: Scalar tensor produced by recorded operations
        store: Optional ParamStore to complete with zero gradients
    """
    if loss.data.size != 1:
        raise AutogradError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise AutogradError("backward already ran on this loss; recompute the forward pass first")
    if not loss.requires_grad:
        raise AutogradError("loss does not depend on any tensor that requires gradients")

    order = _topological_order(loss)
    pending = {id(loss): np.ones_like(loss.data)}

    for node in reversed(order):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node._backward is None:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        for parent, parent_grad in zip(node._parents, node._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + parent_grad if key in pending else parent_grad

    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node._released = True
    loss._released = True

    if store is not None:
        store.fill_missing_grads()
