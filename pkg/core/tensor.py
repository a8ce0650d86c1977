"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op builds its output eagerly with numpy and, when any input requires a
gradient, records its parents and a backward closure. ``backward(loss)``
collects the recorded graph into a ``ComputationTape`` (topological order)
and replays it in reverse, accumulating gradients on leaf tensors.

A tape is single use: after replay the intermediate closures are released,
so a second backward over the same graph raises ``TapeError``.
"""
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.error_handler import ShapeError, TapeError

Axis = Optional[Union[int, Tuple[int, ...]]]
ArrayLike = Union['Tensor', np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """A node of the computation graph holding a float64 array"""

    __array_priority__ = 1000

    def __init__(self,
                 data: ArrayLike,
                 requires_grad: bool = False,
                 name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.op = 'leaf'
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._released = False

    # --- convenience ---
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._released

    def __repr__(self) -> str:
        grad = ', requires_grad=True' if self.requires_grad else ''
        return f'Tensor(shape={self.shape}, op={self.op}{grad})'

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError('item', [self.shape], 'only scalar tensors convert to float')
        return float(self.data.reshape(()))

    def detach(self) -> 'Tensor':
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> Dict['Tensor', np.ndarray]:
        return backward(self)

    # --- operators ---
    def __add__(self, other: ArrayLike) -> 'Tensor':
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> 'Tensor':
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> 'Tensor':
        return subtract(self, other)

    def __rsub__(self, other: ArrayLike) -> 'Tensor':
        return subtract(other, self)

    def __mul__(self, other: ArrayLike) -> 'Tensor':
        return multiply(self, other)

    def __rmul__(self, other: ArrayLike) -> 'Tensor':
        return multiply(other, self)

    def __truediv__(self, other: ArrayLike) -> 'Tensor':
        return divide(self, other)

    def __rtruediv__(self, other: ArrayLike) -> 'Tensor':
        return divide(other, self)

    def __neg__(self) -> 'Tensor':
        return negate(self)

    def __matmul__(self, other: ArrayLike) -> 'Tensor':
        return matmul(self, other)

    def __rmatmul__(self, other: ArrayLike) -> 'Tensor':
        return matmul(other, self)

    # --- method forms ---
    def sum(self, axis: Axis = None, keepdims: bool = False) -> 'Tensor':
        return sum_(self, axis, keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> 'Tensor':
        return mean(self, axis, keepdims)

    def min(self, axis: int = -1, keepdims: bool = False) -> 'Tensor':
        return min_(self, axis, keepdims)

    def reshape(self, *shape: Union[int, Sequence[int]]) -> 'Tensor':
        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> 'Tensor':
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int) -> 'Tensor':
        order = list(range(self.ndim))
        order[a], order[b] = order[b], order[a]
        return transpose(self, tuple(order))

    @property
    def T(self) -> 'Tensor':
        return self.swapaxes(-1, -2)

    def exp(self) -> 'Tensor':
        return exp(self)

    def log(self) -> 'Tensor':
        return log(self)

    def tanh(self) -> 'Tensor':
        return tanh(self)

    def sigmoid(self) -> 'Tensor':
        return sigmoid(self)

    def clamp_min(self, value: float) -> 'Tensor':
        return clamp_min(self, value)

    def softmax(self, axis: int = -1, temperature: float = 1.0,
                mask: Optional[np.ndarray] = None) -> 'Tensor':
        return softmax(self, axis, temperature, mask)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray,
          parents: Sequence[Tensor],
          backward_fn: BackwardFn,
          op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        for p in parents:
            if p._released:
                raise TapeError(f'{op}: input was produced by an already replayed tape')
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(op: str, *tensors: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(*(t.shape for t in tensors))
    except ValueError:
        raise ShapeError(op, [t.shape for t in tensors], 'not broadcastable')


# --- elementwise binary ops ---

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('add', a, b)

    def _backward(g: np.ndarray):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)
    return _make(a.data + b.data, (a, b), _backward, 'add')


def subtract(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('subtract', a, b)

    def _backward(g: np.ndarray):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)
    return _make(a.data - b.data, (a, b), _backward, 'subtract')


def multiply(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('multiply', a, b)

    def _backward(g: np.ndarray):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)
    return _make(a.data * b.data, (a, b), _backward, 'multiply')


def divide(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('divide', a, b)
    out = a.data / b.data

    def _backward(g: np.ndarray):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)
    return _make(out, (a, b), _backward, 'divide')


def negate(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), 'negate')


def minimum(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise min; ties send the gradient to ``a`` (the lower-index argument)"""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('minimum', a, b)
    pick_a = a.data <= b.data

    def _backward(g: np.ndarray):
        return (unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                unbroadcast(np.where(pick_a, 0.0, g), b.shape))
    return _make(np.where(pick_a, a.data, b.data), (a, b), _backward, 'minimum')


def clamp_min(a: ArrayLike, value: float) -> Tensor:
    """max(a, value); at the boundary the gradient still flows to ``a``"""
    a = as_tensor(a)
    keep = a.data >= value
    return _make(np.where(keep, a.data, value), (a,),
                 lambda g: (np.where(keep, g, 0.0),), 'clamp_min')


# --- linear algebra and shape ops ---

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError('matmul', [a.shape, b.shape], 'inner dimensions differ')
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError('matmul', [a.shape, b.shape], 'batch dimensions not broadcastable')

    def _backward(g: np.ndarray):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)
    return _make(a.data @ b.data, (a, b), _backward, 'matmul')


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError('transpose', [a.shape], f'invalid axes {axes}')
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inverse),), 'transpose')


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError('reshape', [a.shape, tuple(shape)], 'element count differs')
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), 'reshape')


def broadcast_to(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, tuple(shape))
    except ValueError:
        raise ShapeError('broadcast_to', [a.shape, tuple(shape)])
    return _make(np.array(out), (a,), lambda g: (unbroadcast(g, a.shape),), 'broadcast_to')


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError('concat', [], 'nothing to concatenate')
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError('concat', [p.shape for p in parts], f'axis={axis}')
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def _backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))
    return _make(out, parts, _backward, 'concat')


def take(a: ArrayLike, indices: Sequence[int], axis: int) -> Tensor:
    """Gather entries along an axis (used to pick singleton-bundle columns)"""
    a = as_tensor(a)
    index = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    if index.size and (index.min() < -a.shape[axis] or index.max() >= a.shape[axis]):
        raise ShapeError('take', [a.shape], f'index out of range on axis {axis}')

    def _backward(g: np.ndarray):
        grad = np.zeros_like(a.data)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (grad,)
    return _make(np.take(a.data, index, axis=axis), (a,), _backward, 'take')


# --- reductions ---

def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis: Axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,),
                 lambda g: (np.array(_expand_reduced(g, a.shape, axis, keepdims)),), 'sum')


def mean(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1)
    return _make(out, (a,),
                 lambda g: (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,), 'mean')


def min_(a: ArrayLike, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Min along one axis; ties route the gradient to the lowest index"""
    a = as_tensor(a)
    axis = axis % a.ndim
    arg = np.expand_dims(np.argmin(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, arg, axis=axis)

    def _backward(g: np.ndarray):
        grad = np.zeros_like(a.data)
        g = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(grad, arg, g, axis=axis)
        return (grad,)
    return _make(out if keepdims else np.squeeze(out, axis=axis), (a,), _backward, 'min')


# --- elementwise unary ops ---

def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), 'exp')


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), 'log')


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), 'tanh')


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(-np.logaddexp(0.0, -a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), 'sigmoid')


def softmax(a: ArrayLike,
            axis: int = -1,
            temperature: float = 1.0,
            mask: Optional[np.ndarray] = None) -> Tensor:
    """softmax(a / temperature) along ``axis``; entries where ``mask`` is 0 get probability 0"""
    a = as_tensor(a)
    if temperature <= 0:
        raise ShapeError('softmax', [a.shape], f'temperature must be positive, got {temperature}')
    z = a.data / temperature
    keep = None
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask) != 0, a.shape)
        if not np.all(keep.any(axis=axis)):
            raise ShapeError('softmax', [a.shape, np.shape(mask)], 'mask leaves an empty row')
        z = np.where(keep, z, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def _backward(g: np.ndarray):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - inner) / temperature,)
    return _make(out, (a,), _backward, 'softmax')


def masked_fill(a: ArrayLike, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` holds with a constant; no gradient flows through them"""
    a = as_tensor(a)
    fill = np.broadcast_to(np.asarray(mask) != 0, a.shape)
    return _make(np.where(fill, value, a.data), (a,),
                 lambda g: (np.where(fill, 0.0, g),), 'masked_fill')


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> Tuple[Tensor, Tensor]:
    """softmax(q kᵀ / sqrt(d)) v over the last two axes; returns (output, weights)"""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError('attention', [q.shape, k.shape, v.shape])
    scores = matmul(q, k.swapaxes(-1, -2))
    weights = softmax(scores, axis=-1, temperature=float(np.sqrt(q.shape[-1])))
    return matmul(weights, v), weights


# --- reverse pass ---

class ComputationTape:
    """Ops that produced ``root``, in topological order (inputs before consumers)"""

    def __init__(self, root: Tensor):
        if root._released:
            raise TapeError('backward called twice on the same graph')
        self.root = root
        self.nodes: List[Tensor] = self._record(root)
        self.replayed = False

    @staticmethod
    def _record(root: Tensor) -> List[Tensor]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            if node._released:
                raise TapeError(f'{node.op}: graph already replayed by an earlier backward')
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def replay(self) -> Dict[Tensor, np.ndarray]:
        if self.replayed:
            raise TapeError('tape already replayed')
        grads: Dict[int, np.ndarray] = {id(self.root): np.ones_like(self.root.data)}
        leaves: Dict[Tensor, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                leaves[node] = node.grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
        self._release()
        return leaves

    def _release(self) -> None:
        self.replayed = True
        for node in self.nodes:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._released = True


def backward(loss: Tensor) -> Dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every requires-grad leaf"""
    if loss.data.size != 1:
        raise TapeError(f'backward needs a scalar loss, got shape {loss.shape}')
    if not loss.requires_grad:
        raise TapeError('loss does not depend on any tensor that requires grad')
    return ComputationTape(loss).replay()


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
