"""
Dense reverse-mode automatic differentiation over NumPy arrays.

Every op returns a new Tensor; when any input requires a gradient the op is
recorded on its output together with a local backward rule. ``backward``
rebuilds the computation record from the loss on every call (define-by-run),
so nothing is cached between forward passes.
"""

import logging
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import expit, log_softmax, logsumexp, softmax

from deep_arguing.errors import DimensionError, NonFiniteError, ParameterError

logger = logging.getLogger(__name__)

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Operation:
    """One recorded op: its inputs, its output and the local backward rule."""

    __slots__ = ("name", "inputs", "output", "backward_rule")

    def __init__(self, name: str, inputs: Sequence["Tensor"], output: "Tensor", backward_rule: BackwardRule):
        self.name = name
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_rule = backward_rule


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_op", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._op: Optional[Operation] = None
        self.name = name
        _check_finite(self.data, name or "tensor")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Detached copy of the values."""
        return self.data.copy()

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value) -> Tensor:
    """Tensor that never receives a gradient."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def parameter(value, name: Optional[str] = None) -> Tensor:
    """Trainable leaf tensor."""
    return Tensor(value, requires_grad=True, name=name)


def _check_finite(values: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"non-finite value produced by {where}")


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else constant(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _record(name: str, data: np.ndarray, inputs: Sequence[Tensor], rule: BackwardRule) -> Tensor:
    _check_finite(data, name)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    out._op = Operation(name, inputs, out, rule) if out.requires_grad else None
    return out


def _broadcast_shape(a: Tensor, b: Tensor, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from e


# =============================================================================
# Elementwise and reduction ops
# =============================================================================

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", a.data + b.data, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", a.data - b.data, (a, b), rule)


def hadamard(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "hadamard")

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("hadamard", a.data * b.data, (a, b), rule)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def rule(g):
        return (g * factor,)

    return _record("scale", a.data * factor, (a,), rule)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def rule(g):
        return (g * sign,)

    return _record("abs", np.abs(a.data), (a,), rule)


def relu(a: Tensor) -> Tensor:
    # Subgradient at exactly 0 is 0.
    active = a.data > 0

    def rule(g):
        return (g * active,)

    return _record("relu", np.where(active, a.data, 0.0), (a,), rule)


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)

    def rule(g):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", out, (a,), rule)


def elementwise_min(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise minimum; ties send the gradient to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"elementwise_min: shapes {a.shape} and {b.shape} differ")
    first = a.data <= b.data

    def rule(g):
        return g * first, g * ~first

    return _record("min", np.where(first, a.data, b.data), (a, b), rule)


def clip(a: Tensor, low: float, high: float) -> Tensor:
    """Clamp into [low, high]; zero gradient outside the interval."""
    inside = (a.data >= low) & (a.data <= high)

    def rule(g):
        return (g * inside,)

    return _record("clip", np.clip(a.data, low, high), (a,), rule)


def reduce_sum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _record("sum", np.asarray(a.data.sum(axis=axis)), (a,), rule)


def reduce_mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    if count == 0:
        raise DimensionError("mean over an empty axis")
    return scale(reduce_sum(a, axis=axis), 1.0 / count)


def logsumexp_neg(a: Tensor, t: float, axis: Optional[int] = None, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Smooth minimum ``-t * log(sum(exp(-a / t)))`` along ``axis``.

    ``mask`` (broadcastable to ``a``) excludes entries where it is False.
    The largest exponent is subtracted before exponentiation.
    """
    if t <= 0:
        raise ParameterError(f"logsumexp temperature must be positive, got {t}")
    z = -a.data / t
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
        z = np.where(keep, z, -np.inf)
    lse = logsumexp(z, axis=axis)
    out = np.asarray(-t * lse)

    def rule(g):
        expanded = lse if axis is None else np.expand_dims(lse, axis)
        share = np.exp(z - expanded)
        grad = g if axis is None else np.expand_dims(g, axis)
        return (grad * share,)

    return _record("logsumexp_neg", out, (a,), rule)


# =============================================================================
# Shape ops
# =============================================================================

def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from e

    def rule(g):
        return (g.reshape(a.shape),)

    return _record("reshape", out, (a,), rule)


def transpose(a: Tensor) -> Tensor:
    def rule(g):
        return (g.T,)

    return _record("transpose", a.data.T.copy(), (a,), rule)


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as e:
        raise DimensionError(f"cannot broadcast {a.shape} to {shape}") from e

    def rule(g):
        return (_unbroadcast(g, a.shape),)

    return _record("broadcast_to", out, (a,), rule)


def take(a: Tensor, indices: Sequence[int], axis: int = 0) -> Tensor:
    """Select entries along ``axis``; repeated indices accumulate gradient."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < -a.shape[axis] or indices.max() >= a.shape[axis]):
        raise DimensionError(f"take: index out of range for axis {axis} of size {a.shape[axis]}")

    def rule(g):
        grad = np.zeros_like(a.data)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (grad,)

    return _record("take", np.take(a.data, indices, axis=axis), (a,), rule)


# =============================================================================
# Linear algebra and losses
# =============================================================================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def rule(g):
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", a.data @ b.data, (a, b), rule)


def trace_expm(b: Tensor) -> Tensor:
    """tr(e^B) with gradient (e^B)^T."""
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise DimensionError(f"trace_expm needs a square matrix, got {b.shape}")
    expm = linalg.expm(b.data)

    def rule(g):
        return (g * expm.T,)

    return _record("trace_expm", np.asarray(np.trace(expm)), (b,), rule)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int], class_weights: Sequence[float]) -> Tensor:
    """
    Batch mean of ``w[y] * -log softmax(logits)[y]``.

    Labels are 0-based class indices.
    """
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(class_weights, dtype=np.float64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross entropy: logits {logits.shape} vs labels {labels.shape}")
    n_classes = logits.shape[1]
    if weights.shape != (n_classes,):
        raise DimensionError(f"cross entropy: {weights.size} class weights for {n_classes} classes")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ParameterError(f"label out of range 0..{n_classes - 1}")
    if np.any(weights <= 0):
        raise ParameterError("class weights must be positive")

    rows = np.arange(labels.size)
    log_probs = log_softmax(logits.data, axis=1)
    sample_weights = weights[labels]
    value = np.asarray(-(sample_weights * log_probs[rows, labels]).mean())

    def rule(g):
        grad = softmax(logits.data, axis=1)
        grad[rows, labels] -= 1.0
        return (g * grad * sample_weights[:, None] / labels.size,)

    return _record("softmax_cross_entropy", value, (logits,), rule)


# =============================================================================
# Backward pass
# =============================================================================

class ComputationRecord:
    """Recorded ops reachable from an output, in topological order."""

    def __init__(self, operations: list[Operation]):
        self.operations = operations

    @classmethod
    def trace(cls, output: Tensor) -> "ComputationRecord":
        ordered: list[Operation] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            op = tensor._op
            if op is None:
                continue
            if expanded:
                ordered.append(op)
                continue
            if id(op) in visited:
                continue
            visited.add(id(op))
            stack.append((tensor, True))
            for parent in op.inputs:
                if parent._op is not None and id(parent._op) not in visited:
                    stack.append((parent, False))
        return cls(ordered)

    def __len__(self) -> int:
        return len(self.operations)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every trainable leaf's ``grad``."""
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    record = ComputationRecord.trace(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for op in reversed(record.operations):
        grad_out = grads.pop(id(op.output), None)
        if grad_out is None:
            continue
        for tensor, grad in zip(op.inputs, op.backward_rule(grad_out)):
            if grad is None or not tensor.requires_grad:
                continue
            _check_finite(grad, f"backward of {op.name}")
            if tensor._op is None:
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            elif id(tensor) in grads:
                grads[id(tensor)] = grads[id(tensor)] + grad
            else:
                grads[id(tensor)] = grad


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def global_grad_norm(params: Iterable[Tensor]) -> float:
    squares = [np.sum(p.grad * p.grad) for p in params if p.grad is not None]
    return float(np.sqrt(np.sum(squares))) if squares else 0.0


def clip_global_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale all gradients jointly so their L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ParameterError(f"max_norm must be positive, got {max_norm}")
    total = global_grad_norm(params)
    if total > max_norm:
        factor = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return total


# =============================================================================
# Optimizer
# =============================================================================

class OptimizerState:
    """AdamW moment estimates and hyperparameters for a fixed parameter list."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        weight_decay: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moments = [np.zeros_like(p.data) for p in params]
        self.second_moments = [np.zeros_like(p.data) for p in params]


def adamw_step(state: OptimizerState, params: Sequence[Tensor]) -> None:
    """Decoupled weight decay followed by the bias-corrected Adam update."""
    if len(params) != len(state.first_moments):
        raise DimensionError("optimizer state does not match the parameter list")
    state.step_count += 1
    step = state.step_count
    bias1 = 1.0 - state.beta1**step
    bias2 = 1.0 - state.beta2**step

    for i, p in enumerate(params):
        if p.grad is None:
            continue
        if state.first_moments[i].shape != p.shape:
            raise DimensionError(f"moment shape {state.first_moments[i].shape} != parameter {p.shape}")
        g = p.grad
        decayed = p.data * (1.0 - state.lr * state.weight_decay)
        m = state.beta1 * state.first_moments[i] + (1.0 - state.beta1) * g
        v = state.beta2 * state.second_moments[i] + (1.0 - state.beta2) * g * g
        state.first_moments[i] = m
        state.second_moments[i] = v
        denom = np.sqrt(v) / np.sqrt(bias2) + state.epsilon
        updated = decayed - (state.lr / bias1) * m / denom
        _check_finite(updated, "adamw_step")
        p.data = updated
