"""Dense-tensor reverse-mode differentiation on top of numpy.

The engine is deliberately small: tensors wrap contiguous numpy arrays,
every differentiable operation records its parents and a local gradient
rule, and ``backward`` replays the resulting computation record from a
scalar loss. Training runs in float32; gradient verification builds the
same graphs in float64, where the independent central-difference oracle
(`finite_difference_gradient`) is trustworthy.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, RecordStateError

DEFAULT_DTYPE = np.float32
GRADCHECK_DTYPE = np.float64

_node_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable recording of operations (feature extraction, diagnostics)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense n-dimensional array participating in a computation record.

    ``data`` is always a contiguous numpy array. ``grad`` is populated by
    ``backward`` for every reachable tensor with ``requires_grad``. Non-leaf
    tensors keep references to their parents plus a local gradient rule,
    which together form the reverse-mode record.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id",
                 "_parents", "_grad_fn", "_op", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_counter)
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None
        self._op = "leaf"
        self._backward_done = False

    # -- construction of non-leaf nodes -------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], op: str,
                grad_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]) -> "Tensor":
        out = Tensor.__new__(Tensor)
        data = np.asarray(data)
        if not data.flags["C_CONTIGUOUS"]:
            data = np.ascontiguousarray(data)
        out.data = data
        out.grad = None
        out.node_id = next(_node_counter)
        out._backward_done = False
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._grad_fn = grad_fn
            out._op = op
        else:
            out.requires_grad = False
            out._parents = ()
            out._grad_fn = None
            out._op = op
        return out

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(op={self._op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None):
        return tensor_sum(self, axis=axis)

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


@dataclass
class ComputationRecord:
    """Topologically ordered view of the graph that produced one output.

    Each entry is a tensor whose ``_parents``/``_grad_fn`` encode the node's
    input ids, output id and local gradient rule. Replaying the list in
    reverse propagates gradients from the output to every reachable leaf.
    """

    output: Tensor
    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, output: Tensor) -> "ComputationRecord":
        record = cls(output=output)
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                record.nodes.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for parent in node._parents:
                if parent.node_id not in seen:
                    stack.append((parent, False))
        return record

    def replay_backward(self, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {self.output.node_id: seed}
        for node in reversed(self.nodes):
            out_grad = grads.pop(node.node_id, None)
            if out_grad is None:
                continue
            if node.requires_grad:
                node.grad = out_grad if node.grad is None else node.grad + out_grad
            if node._grad_fn is None:
                continue
            parent_grads = node._grad_fn(out_grad)
            for parent, pgrad in zip(node._parents, parent_grads):
                if pgrad is None or not parent.requires_grad:
                    continue
                if parent.node_id in grads:
                    grads[parent.node_id] = grads[parent.node_id] + pgrad
                else:
                    grads[parent.node_id] = pgrad


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from a scalar loss.

    The seed gradient is 1. A record can be replayed once; a second call on
    the same loss without rebuilding the graph raises ``RecordStateError``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss._backward_done:
        raise RecordStateError("backward already ran on this computation record")
    loss._backward_done = True
    record = ComputationRecord.from_output(loss)
    record.replay_backward(np.ones_like(loss.data))


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    """Elementwise addition; supports (m,n)+(n,) row broadcast for biases."""
    a = as_tensor(a)
    if not isinstance(b, Tensor) and np.isscalar(b):
        a_arr = a.data
        out = a_arr + a_arr.dtype.type(b)
        return Tensor._result(out, (a,), "add_scalar", lambda g: (g,))
    b = as_tensor(b)
    if a.shape != b.shape and not (a.data.ndim == 2 and b.data.ndim == 1
                                   and a.shape[1] == b.shape[0]):
        raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")
    out = a.data + b.data

    def grad_fn(g):
        ga = g
        gb = g if a.shape == b.shape else g.sum(axis=0)
        return ga, gb

    return Tensor._result(out, (a, b), "add", grad_fn)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with an equal-shape tensor or a python scalar."""
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        scale = float(b)

        def grad_scalar(g):
            return (g * np.asarray(scale, dtype=g.dtype),)

        return Tensor._result(a.data * a.data.dtype.type(scale), (a,), "mul_scalar", grad_scalar)
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    a_data, b_data = a.data, b.data
    return Tensor._result(a_data * b_data, (a, b), "mul",
                          lambda g: (g * b_data, g * a_data))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    a_data, b_data = a.data, b.data
    return Tensor._result(a_data @ b_data, (a, b), "matmul",
                          lambda g: (g @ b_data.T, a_data.T @ g))


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return Tensor._result(a.data.T, (a,), "transpose", lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    # np.maximum propagates NaN, so divergence stays visible downstream
    return Tensor._result(np.maximum(a.data, 0), (a,), "relu",
                          lambda g: (np.where(mask, g, 0),))


def tensor_sum(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum over all entries (scalar output) or along one axis of a matrix."""
    a = as_tensor(a)
    if axis is None:
        out = a.data.sum()
        return Tensor._result(out, (a,), "sum",
                              lambda g: (np.broadcast_to(g, a.shape).astype(g.dtype, copy=False),))
    if a.data.ndim != 2 or axis not in (0, 1):
        raise DimensionError(f"sum over axis {axis} expects a matrix, got shape {a.shape}")
    out = a.data.sum(axis=axis)

    def grad_fn(g):
        if axis == 0:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(g[:, None], a.shape).copy(),)

    return Tensor._result(out, (a,), f"sum{axis}", grad_fn)


def mean_rows(a: Tensor) -> Tensor:
    """Column means of a matrix: [m,n] -> [n]."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"mean_rows expects a matrix, got shape {a.shape}")
    return mul(tensor_sum(a, axis=0), 1.0 / a.shape[0])


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack two matrices with identical column counts along axis 0."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"concat_rows: incompatible shapes {a.shape} and {b.shape}")
    split = a.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)
    return Tensor._result(out, (a, b), "concat_rows",
                          lambda g: (g[:split], g[split:]))


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability.

    Rows sum to 1 within 1e-6 and entries lie in (0, 1); the shifted
    exponentials make inputs like [1000, 0] safe.
    """
    x = as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise ContractError("softmax_rows: input contains non-finite entries")
    data = np.atleast_2d(x.data)
    shifted = data - data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    p = exp / exp.sum(axis=1, keepdims=True)
    p = p.reshape(x.shape)

    def grad_fn(g):
        g2 = np.atleast_2d(g)
        p2 = np.atleast_2d(p)
        inner = (g2 * p2).sum(axis=1, keepdims=True)
        return ((p2 * (g2 - inner)).reshape(x.shape),)

    return Tensor._result(p, (x,), "softmax_rows", grad_fn)


def logsumexp_rows(x: Tensor) -> Tensor:
    """Row-wise log(sum(exp(x))): [m,n] -> [m], max-shifted."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"logsumexp_rows expects a matrix, got shape {x.shape}")
    m = x.data.max(axis=1, keepdims=True)
    exp = np.exp(x.data - m)
    out = (m[:, 0] + np.log(exp.sum(axis=1)))
    soft = exp / exp.sum(axis=1, keepdims=True)
    return Tensor._result(out, (x,), "logsumexp_rows",
                          lambda g: (soft * g[:, None],))


def l2_normalize_rows(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale each row to unit Euclidean norm.

    Rows whose norm falls below ``eps`` pass through scaled by 1/eps, which
    keeps the operation differentiable at the origin.
    """
    if eps <= 0:
        raise ContractError(f"l2_normalize_rows: eps must be positive, got {eps}")
    x = as_tensor(x)
    data = np.atleast_2d(x.data)
    norms = np.sqrt((data * data).sum(axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    y = data / denom

    def grad_fn(g):
        g2 = np.atleast_2d(g)
        small = norms <= eps
        inner = (g2 * y).sum(axis=1, keepdims=True)
        grad_big = (g2 - y * inner) / denom
        grad_small = g2 / eps
        return (np.where(small, grad_small, grad_big).reshape(x.shape),)

    return Tensor._result(y.reshape(x.shape), (x,), "l2_normalize_rows", grad_fn)


def log_clamped(x: Tensor, floor: float = 1e-12) -> Tensor:
    """Elementwise log(max(x, floor)).

    Gradient is 1/x above the floor and exactly 0 at or below it, so the
    clamped region is flat rather than explosive.
    """
    if floor <= 0:
        raise ContractError(f"log_clamped: floor must be positive, got {floor}")
    x = as_tensor(x)
    data = x.data
    out = np.log(np.maximum(data, floor))
    above = data > floor
    return Tensor._result(out, (x,), "log_clamped",
                          lambda g: (np.where(above, g / np.where(above, data, 1.0), 0.0),))


# ---------------------------------------------------------------------------
# independent gradient oracle
# ---------------------------------------------------------------------------

def finite_difference_gradient(f: Callable[[np.ndarray], float],
                               theta: np.ndarray,
                               h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    Pure numerical probing: ``f`` is called on perturbed copies of ``theta``
    and nothing touches the computation record. Intended for float64 inputs,
    where h=1e-5 gives ~1e-9 accuracy on smooth functions.
    """
    if h <= 0:
        raise ContractError(f"finite_difference_gradient: h must be positive, got {h}")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = float(f(theta))
        flat[i] = original - h
        f_minus = float(f(theta))
        flat[i] = original
        grad_flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Scale-free disagreement between two gradient vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / max(denom, 1e-12))


# ---------------------------------------------------------------------------
# first-order optimization
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Per-parameter SGD bookkeeping: momentum buffer and hyper-parameters."""

    momentum: float = 0.9
    weight_decay: float = 0.0
    buffer: np.ndarray | None = None
    step_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ContractError(f"weight_decay must be nonnegative, got {self.weight_decay}")


def sgd_momentum_step(param: Tensor, grad: np.ndarray,
                      state: OptimizerState, lr: float) -> None:
    """In-place SGD update: buf = m*buf + (g + wd*p); p -= lr*buf.

    lr = 0 is a valid no-op step (frozen-parameter runs); negative rates
    are rejected.
    """
    if lr < 0:
        raise ContractError(f"sgd_momentum_step: lr must be nonnegative, got {lr}")
    grad = np.asarray(grad)
    if grad.shape != param.shape:
        raise DimensionError(
            f"sgd_momentum_step: grad shape {grad.shape} != param shape {param.shape}")
    update = grad + param.data.dtype.type(state.weight_decay) * param.data
    if state.buffer is None:
        state.buffer = np.zeros_like(param.data)
    elif state.buffer.shape != param.shape:
        raise DimensionError(
            f"sgd_momentum_step: buffer shape {state.buffer.shape} != param shape {param.shape}")
    state.buffer = param.data.dtype.type(state.momentum) * state.buffer + update
    param.data -= param.data.dtype.type(lr) * state.buffer
    state.step_count += 1


def cosine_learning_rate(epoch: int, total_epochs: int,
                         lr_start: float, lr_end: float) -> float:
    """Half-cosine decay from lr_start to lr_end, no restarts.

    Endpoints are returned exactly so that logged schedules hit the
    configured values bit-for-bit.
    """
    if total_epochs < 1:
        raise ContractError(f"total_epochs must be >= 1, got {total_epochs}")
    if not 0 <= epoch <= total_epochs:
        raise ContractError(f"epoch {epoch} outside [0, {total_epochs}]")
    if not lr_start >= lr_end >= 0:
        raise ContractError(f"need lr_start >= lr_end >= 0, got {lr_start}, {lr_end}")
    if epoch == 0:
        return lr_start
    if epoch == total_epochs:
        return lr_end
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * epoch / total_epochs))


def parameters_checksum(params: Sequence[Tensor]) -> str:
    """SHA-256 over the raw bytes of a parameter list (frozen-weights checks)."""
    import hashlib

    digest = hashlib.sha256()
    for p in params:
        digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.hexdigest()
