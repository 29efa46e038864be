"""
Reverse-mode differentiation over dense float64 arrays.

Every op records its parents and a closure that pushes the output's
gradient back into them; backward() walks the recorded graph in reverse
topological order. Shapes are explicit: the only broadcast is adding a
row-vector bias to a matrix.
"""
import logging
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from src.errors import InputError, NumericError, StateError

logger = logging.getLogger(__name__)

# added to row norms before dividing
NORM_EPS = 1e-12

ArrayLike = Union[np.ndarray, Sequence, float]


class Tensor:
    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 _parents: Sequence["Tensor"] = (), _op: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.data.setflags(write=False)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = tuple(_parents)
        self._backward: Callable[[], None] = lambda: None
        self._op = _op
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise InputError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def assign(self, value: np.ndarray):
        """Replace the data in place of an optimizer step"""
        value = np.array(value, dtype=np.float64)
        if value.shape != self.data.shape:
            raise InputError(f"assign shape {value.shape} to tensor of shape {self.shape}")
        value.setflags(write=False)
        self.data = value

    def zero_grad(self):
        self.grad = None
        self._backward_done = False

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + g

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"


def tensor(data: ArrayLike, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericError("non-finite result", op=op)
    return Tensor(value, requires_grad=any(p.requires_grad for p in parents), _parents=parents, _op=op)


def _require_2d(x: Tensor, op: str):
    if x.data.ndim != 2:
        raise InputError(f"{op}: expects a matrix, got shape {x.shape}")


def add(a, b) -> Tensor:
    """Elementwise sum; b may also be a row vector added to every row of a"""
    a, b = _as_tensor(a), _as_tensor(b)
    bias = a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]
    if a.shape != b.shape and not bias:
        raise InputError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = _result(a.data + b.data, (a, b), "add")

    def _backward():
        a._accumulate(out.grad)
        b._accumulate(out.grad.sum(axis=0) if bias else out.grad)
    out._backward = _backward
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise InputError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    out = _result(a.data - b.data, (a, b), "sub")

    def _backward():
        a._accumulate(out.grad)
        b._accumulate(-out.grad)
    out._backward = _backward
    return out


def mul(a, b) -> Tensor:
    """Elementwise product of equal shapes"""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise InputError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = _result(a.data * b.data, (a, b), "mul")

    def _backward():
        a._accumulate(out.grad * b.data)
        b._accumulate(out.grad * a.data)
    out._backward = _backward
    return out


def scale(x, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)
    out = _result(x.data * c, (x,), "scale")

    def _backward():
        x._accumulate(out.grad * c)
    out._backward = _backward
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InputError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")

    def _backward():
        a._accumulate(out.grad @ b.data.T)
        b._accumulate(a.data.T @ out.grad)
    out._backward = _backward
    return out


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    _require_2d(x, "transpose")
    out = _result(x.data.T, (x,), "transpose")

    def _backward():
        x._accumulate(out.grad.T)
    out._backward = _backward
    return out


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = _result(np.maximum(x.data, 0.0), (x,), "relu")

    def _backward():
        x._accumulate(out.grad * (x.data > 0))
    out._backward = _backward
    return out


def row_softmax_log(x) -> Tensor:
    """Log-softmax over each row"""
    x = _as_tensor(x)
    _require_2d(x, "row_softmax_log")
    out = _result(log_softmax(x.data, axis=1), (x,), "row_softmax_log")

    def _backward():
        probs = softmax(x.data, axis=1)
        x._accumulate(out.grad - probs * out.grad.sum(axis=1, keepdims=True))
    out._backward = _backward
    return out


def l2_normalize_rows(x) -> Tensor:
    """x_i / (||x_i|| + NORM_EPS)"""
    x = _as_tensor(x)
    _require_2d(x, "l2_normalize_rows")
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    denom = norms + NORM_EPS
    out = _result(x.data / denom, (x,), "l2_normalize_rows")

    def _backward():
        safe = np.where(norms > 0, norms, 1.0)
        proj = np.sum(out.grad * x.data, axis=1, keepdims=True)
        x._accumulate(out.grad / denom - x.data * proj / (denom ** 2 * safe))
    out._backward = _backward
    return out


def cosine_similarity_matrix(a, b) -> Tensor:
    """Pairwise cosines between rows of a and rows of b"""
    return matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)))


def gather_rows(x, index: Sequence[int]) -> Tensor:
    """Rows of x selected by index (repeats allowed)"""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if x.data.ndim < 1 or (index.size and (index.min() < 0 or index.max() >= x.shape[0])):
        raise InputError(f"gather_rows: index out of range for {x.shape[0]} rows")
    out = _result(x.data[index], (x,), "gather_rows")

    def _backward():
        g = np.zeros_like(x.data)
        np.add.at(g, index, out.grad)
        x._accumulate(g)
    out._backward = _backward
    return out


def pick(x, columns: Sequence[int]) -> Tensor:
    """out[i] = x[i, columns[i]]"""
    x = _as_tensor(x)
    _require_2d(x, "pick")
    columns = np.asarray(columns, dtype=np.int64)
    if columns.shape != (x.shape[0],):
        raise InputError(f"pick: need one column per row, got {columns.shape} for {x.shape}")
    if columns.size and (columns.min() < 0 or columns.max() >= x.shape[1]):
        raise InputError(f"pick: column out of range for width {x.shape[1]}")
    rows = np.arange(x.shape[0])
    out = _result(x.data[rows, columns], (x,), "pick")

    def _backward():
        g = np.zeros_like(x.data)
        g[rows, columns] = out.grad
        x._accumulate(g)
    out._backward = _backward
    return out


def row_masked_logsumexp(x, mask: np.ndarray) -> Tensor:
    """
    out[i] = log sum_j mask[i, j] * exp(x[i, j]). Rows with an empty mask
    yield 0 and receive no gradient.
    """
    x = _as_tensor(x)
    _require_2d(x, "row_masked_logsumexp")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise InputError(f"row_masked_logsumexp: mask shape {mask.shape} vs {x.shape}")
    nonempty = mask.any(axis=1)
    masked = np.where(mask, x.data, -np.inf)
    value = np.zeros(x.shape[0])
    if nonempty.any():
        value[nonempty] = logsumexp(masked[nonempty], axis=1)
    out = _result(value, (x,), "row_masked_logsumexp")

    def _backward():
        weights = np.zeros_like(x.data)
        if nonempty.any():
            weights[nonempty] = np.exp(masked[nonempty] - value[nonempty, None])
        x._accumulate(weights * out.grad[:, None])
    out._backward = _backward
    return out


def masked_mean(v, mask: np.ndarray) -> Tensor:
    """Mean of v over the masked entries; an empty mask gives 0 with zero gradient"""
    v = _as_tensor(v)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != v.shape:
        raise InputError(f"masked_mean: mask shape {mask.shape} vs {v.shape}")
    count = int(mask.sum())
    value = float(v.data[mask].sum() / count) if count else 0.0
    out = _result(np.array(value), (v,), "masked_mean")

    def _backward():
        if count:
            v._accumulate(mask * (out.grad / count))
        else:
            v._accumulate(np.zeros_like(v.data))
    out._backward = _backward
    return out


def sum(x, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = _as_tensor(x)
    if axis not in (None, 1):
        raise InputError(f"sum: unsupported axis {axis}")
    if axis == 1:
        _require_2d(x, "sum")
    out = _result(x.data.sum(axis=axis), (x,), "sum")

    def _backward():
        if axis is None:
            x._accumulate(np.full_like(x.data, float(out.grad)))
        else:
            x._accumulate(np.repeat(out.grad[:, None], x.shape[1], axis=1))
    out._backward = _backward
    return out


def mean(x) -> Tensor:
    x = _as_tensor(x)
    if x.data.size == 0:
        raise InputError("mean: empty tensor")
    return scale(sum(x), 1.0 / x.data.size)


def _topological_order(root: Tensor) -> List[Tensor]:
    order, visited = [], set()
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
        for parent in reversed(node._parents):
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(output: Tensor):
    """
    Accumulate d(output)/d(input) into .grad of every reachable input that
    requires grad. The output must be a scalar and may be differentiated
    only once until zero_grad() resets it.
    """
    if output.data.size != 1:
        raise InputError(f"backward needs a scalar output, got shape {output.shape}")
    if output._backward_done:
        raise StateError("backward already ran on this output; call zero_grad() first")
    output._backward_done = True
    if not output.requires_grad:
        return

    order = _topological_order(output)
    for node in order:
        if node is not output and node._parents:
            node.grad = None
    output.grad = np.ones_like(output.data)
    for node in reversed(order):
        if node.requires_grad and node._parents and node.grad is not None:
            node._backward()
