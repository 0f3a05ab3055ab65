"""
Tensor Module - Dense float64 tensors with reverse-mode differentiation

Every operation on tracked inputs records a Node (inputs + backward rule).
Calling backward() on a scalar builds a Tape: the tracked ancestors of the
root in topological order. The rules are replayed in reverse, so each
node is visited exactly once and fan-out contributions are summed.

The graph is define-by-run: a fresh graph is built for every forward
pass and dropped with its tensors.

Design Principles:
1. float64 everywhere (gradient checks stay reliable at desk scale)
2. Only the operations the seq2seq math needs
3. Shape errors raise DimensionError naming both shapes
"""

import logging
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.exceptions import ContractError, DimensionError, NumericError, VocabIndexError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_GRAD_ENABLED: ContextVar[bool] = ContextVar("grad_enabled", default=True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (decoding, numeric checks)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


@dataclass(eq=False)
class Node:
    """One recorded operation."""
    op: str
    inputs: Tuple["Tensor", ...]
    backward_rule: BackwardRule


class Tensor:
    """Dense float64 array that may participate in a differentiation graph."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, node: Optional[Node] = None):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data, dtype=np.float64)
        # 0-d values stay 0-d
        self.data: np.ndarray = array if array.flags.c_contiguous else np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node = node

    # ------------------------------------------------------------------
    # properties
    # ------------------------------------------------------------------

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self.node is not None

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        flag = ", tracked" if self.tracked else ""
        return f"Tensor(shape={self.shape}{flag}, data={self.data!r})"

    # ------------------------------------------------------------------
    # operators
    # ------------------------------------------------------------------

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return reduce_sum(self, axis)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def reshape(self, shape: Tuple[int, ...]) -> "Tensor":
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


# ======================================================
# GRAPH PLUMBING
# ======================================================

def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


def _record(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], rule: BackwardRule) -> Tensor:
    if is_grad_enabled() and any(t.tracked for t in inputs):
        return Tensor(data, node=Node(op, inputs, rule))
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not conformable")


@dataclass
class Tape:
    """Tracked ancestors of a root, inputs always before the ops that use them."""
    entries: List[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            if tensor.node is not None:
                for parent in tensor.node.inputs:
                    if parent.tracked and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.entries)

    def replay(self, root: Tensor) -> None:
        pending: Dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for tensor in reversed(self.entries):
            grad = pending.pop(id(tensor), None)
            if grad is None:
                continue
            tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            if tensor.node is None:
                continue
            input_grads = tensor.node.backward_rule(grad)
            for parent, parent_grad in zip(tensor.node.inputs, input_grads):
                if parent_grad is None or not parent.tracked:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = np.asarray(parent_grad, dtype=np.float64)


def backward(root: Tensor) -> None:
    """Populate .grad of every tracked ancestor with d(root)/d(ancestor).

    Grads accumulate across calls until zero_grad().
    """
    if root.data.size != 1:
        raise ContractError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.tracked:
        raise ContractError("backward() root is not tracked by any graph")
    Tape.from_root(root).replay(root)


# ======================================================
# ELEMENTWISE AND LINEAR OPERATIONS
# ======================================================

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _record("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _record("div", out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def scale(x: ArrayLike, factor: float) -> Tensor:
    x = as_tensor(x)
    return _record("scale", x.data * factor, (x,), lambda g: (g * factor,))


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix/vector products for 1-D and 2-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")

    def rule(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        if a.ndim == 2:
            return np.outer(g, b.data), a.data.T @ g
        if b.ndim == 2:
            return b.data @ g, np.outer(a.data, g)
        return g * b.data, g * a.data

    return _record("matmul", a.data @ b.data, (a, b), rule)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ContractError("concat needs at least one tensor")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: shapes {[p.shape for p in parts]} differ off axis {axis}")
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _record("concat", out, tuple(parts), lambda g: np.split(g, bounds, axis=axis))


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ContractError("stack needs at least one tensor")
    try:
        out = np.stack([p.data for p in parts], axis=axis)
    except ValueError:
        raise DimensionError(f"stack: shapes {[p.shape for p in parts]} differ")
    return _record("stack", out, tuple(parts),
                   lambda g: [np.take(g, i, axis=axis) for i in range(len(parts))])


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _record("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    # tanh form never overflows
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _record("exp", out, (x,), lambda g: (g * out,))


def log(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _record("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def logaddexp(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("logaddexp", a, b)
    out = np.logaddexp(a.data, b.data)
    return _record("logaddexp", out, (a, b),
                   lambda g: (_unbroadcast(g * np.exp(a.data - out), a.shape),
                              _unbroadcast(g * np.exp(b.data - out), b.shape)))


def minimum(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("minimum", a, b)
    pick_a = a.data <= b.data
    return _record("minimum", np.minimum(a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def clamp_min(x: ArrayLike, floor: float) -> Tensor:
    x = as_tensor(x)
    keep = x.data >= floor
    return _record("clamp_min", np.maximum(x.data, floor), (x,), lambda g: (g * keep,))


def reduce_sum(x: ArrayLike, axis: Optional[int] = None) -> Tensor:
    x = as_tensor(x)

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _record("sum", np.sum(x.data, axis=axis), (x,), rule)


def reshape(x: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    return _record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _record("transpose", x.data.T, (x,), lambda g: (g.T,))


def getitem(x: ArrayLike, index) -> Tensor:
    x = as_tensor(x)
    fancy = isinstance(index, (list, np.ndarray))
    if fancy:
        index = np.asarray(index, dtype=np.int64)

    def rule(g):
        full = np.zeros_like(x.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] += np.reshape(g, np.shape(full[index]))
        return (full,)

    return _record("getitem", np.array(x.data[index]), (x,), rule)


# ======================================================
# NORMALIZATION, LOOKUP AND SCATTER
# ======================================================

def softmax(logits: ArrayLike, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Max-subtracted softmax; `mask` (bool, True = keep) zeroes excluded slots."""
    logits = as_tensor(logits)
    if not np.all(np.isfinite(logits.data)):
        raise NumericError(f"softmax input contains NaN or Inf: {logits.data}")
    values = logits.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), values.shape)
        if not np.all(mask.any(axis=axis)):
            raise ContractError("softmax mask excludes every position along the axis")
        shift = np.where(mask, values, -np.inf).max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, values - shift, 0.0)), 0.0)
    else:
        e = np.exp(values - values.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    return _record("softmax", out, (logits,),
                   lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def embedding_lookup(table: Tensor, ids: Iterable[int]) -> Tensor:
    """Rows `ids` of `table`; backward scatters into the looked-up rows."""
    ids = np.asarray(list(ids), dtype=np.int64)
    rows = table.shape[0]
    bad = ids[(ids < 0) | (ids >= rows)]
    if bad.size:
        raise VocabIndexError(f"token id {int(bad[0])} outside embedding range [0, {rows})")

    def rule(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _record("embedding", table.data[ids], (table,), rule)


def scatter_add(values: Tensor, indices: Sequence[int], size: int) -> Tensor:
    """out[indices[j]] += values[j] over a zero vector of length `size`."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.shape != values.shape:
        raise DimensionError(f"scatter_add: values {values.shape} vs indices {indices.shape}")
    bad = indices[(indices < 0) | (indices >= size)]
    if bad.size:
        raise VocabIndexError(f"scatter index {int(bad[0])} outside range [0, {size})")
    out = np.zeros(size)
    np.add.at(out, indices, values.data)
    return _record("scatter_add", out, (values,), lambda g: (g[indices],))


_OPS: Dict[str, Callable[..., Tensor]] = {
    "add": add,
    "mul": mul,
    "concat": lambda *xs, axis=0: concat(xs, axis=axis),
    "matmul": matmul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "scale": scale,
}


def elementwise_and_linear(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch one of the basic operations by name."""
    try:
        op = _OPS[op_kind]
    except KeyError:
        raise ContractError(f"unknown op_kind {op_kind!r}; expected one of {sorted(_OPS)}")
    return op(*inputs, **kwargs)


# ======================================================
# GRADIENT CHECK
# ======================================================

def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    atol: float = 0.0,
    coordinates: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Max relative error between backward() grads and central differences.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    Coordinates whose absolute difference is <= atol count as exact.
    With `coordinates`, at most that many entries per tensor are checked
    (seeded sample).
    """
    if h <= 0:
        raise ContractError(f"grad_check step must be positive, got {h}")
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for p, grad in zip(params, analytic):
            all_idx = list(np.ndindex(*p.shape))
            if coordinates is not None and len(all_idx) > coordinates:
                chosen = rng.choice(len(all_idx), size=coordinates, replace=False)
                all_idx = [all_idx[i] for i in sorted(chosen)]
            for idx in all_idx:
                original = p.data[idx]
                p.data[idx] = original + h
                f_plus = f().item()
                p.data[idx] = original - h
                f_minus = f().item()
                p.data[idx] = original
                numeric = (f_plus - f_minus) / (2.0 * h)
                diff = abs(grad[idx] - numeric)
                if diff <= atol:
                    continue
                worst = max(worst, diff / max(abs(grad[idx]), abs(numeric), 1e-8))
    logger.debug("grad_check max relative error %.3e over %d tensors", worst, len(params))
    return worst
