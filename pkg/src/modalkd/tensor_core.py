"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every primitive is a :class:`Function` subclass with a ``forward`` working on
numpy arrays and a ``backward`` returning one gradient per input.  Calling
``Function.apply`` records the node on the output tensor; :func:`backward`
rebuilds a :class:`GradTape` from the loss and replays it in reverse.

Shapes must match exactly.  The only broadcast allowed is a Python scalar
times a tensor (:func:`scale`).
"""

from __future__ import annotations

from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError, ParameterError

ArrayLike = Union[np.ndarray, float, int, Sequence]


class Tensor:
    """A float64 array plus an optional gradient and the op that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Function] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        # no copy: ``data`` is a fresh array owned by the caller
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Same values, no gradient tracking.  Shares the underlying buffer."""
        return Tensor._wrap(self.data, False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise DimensionError("division is only defined by a scalar")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {what}")


class Function:
    """One recorded primitive.  Subclasses implement forward and backward."""

    inputs: Tuple[Tensor, ...]
    output: Tensor

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls(**kwargs)
        fn.inputs = inputs
        with np.errstate(all="ignore"):
            out = fn.forward(*(t.data for t in inputs))
        _check_finite(out, cls.__name__)
        requires_grad = any(t.requires_grad for t in inputs)
        result = Tensor._wrap(out, requires_grad)
        if requires_grad:
            result._node = fn
            fn.output = result
        return result

    def __repr__(self) -> str:
        return f"<{type(self).__name__}>"


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.inputs
        return grad * b.data, grad * a.data


class Scale(Function):
    def __init__(self, factor: float):
        self.factor = float(factor)

    def forward(self, a):
        return a * self.factor

    def backward(self, grad):
        return (grad * self.factor,)


class Relu(Function):
    def forward(self, a):
        return np.maximum(a, 0.0)

    def backward(self, grad):
        # subgradient 0 at the kink
        return (grad * (self.inputs[0].data > 0.0),)


class Log(Function):
    def forward(self, a):
        return np.log(a)

    def backward(self, grad):
        return (grad / self.inputs[0].data,)


class Exp(Function):
    def forward(self, a):
        return np.exp(a)

    def backward(self, grad):
        return (grad * self.output.data,)


class Square(Function):
    def forward(self, a):
        return a * a

    def backward(self, grad):
        return (2.0 * self.inputs[0].data * grad,)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    return Mul.apply(a, b)


def scale(a: Tensor, factor: float) -> Tensor:
    return Scale.apply(a, factor=factor)


def relu(a: Tensor) -> Tensor:
    return Relu.apply(a)


def log(a: Tensor) -> Tensor:
    return Log.apply(a)


def exp(a: Tensor) -> Tensor:
    return Exp.apply(a)


def square(a: Tensor) -> Tensor:
    return Square.apply(a)


# ----------------------------------------------------------------- reductions


class Sum(Function):
    def __init__(self, axis: Optional[int] = None):
        self.axis = axis

    def forward(self, a):
        return np.asarray(a.sum(axis=self.axis), dtype=np.float64)

    def backward(self, grad):
        shape = self.inputs[0].shape
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, shape).copy(),)


class Mean(Function):
    def forward(self, a):
        return np.asarray(a.mean(), dtype=np.float64)

    def backward(self, grad):
        x = self.inputs[0]
        return (np.full(x.shape, grad / x.size),)


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    return Sum.apply(a, axis=axis)


def mean(a: Tensor) -> Tensor:
    """Mean over every entry; returns a 0-d tensor."""
    if a.size == 0:
        raise DimensionError("mean of an empty tensor")
    return Mean.apply(a)


# ------------------------------------------------------------------- algebra


class MatMul(Function):
    def forward(self, a, b):
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.inputs
        return (
            np.matmul(grad, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), grad),
        )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D tensors, or of equal-batch stacks of matrices (3-D)."""
    ok = (
        a.data.ndim == b.data.ndim
        and a.data.ndim in (2, 3)
        and a.shape[:-2] == b.shape[:-2]
        and a.shape[-1] == b.shape[-2]
    )
    if not ok:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return MatMul.apply(a, b)


class Transpose(Function):
    def __init__(self, axes: Tuple[int, ...]):
        self.axes = tuple(axes)
        self.inverse = tuple(np.argsort(self.axes))

    def forward(self, a):
        return np.ascontiguousarray(np.transpose(a, self.axes))

    def backward(self, grad):
        return (np.transpose(grad, self.inverse),)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    if axes is None:
        axes = list(range(a.data.ndim))
        if len(axes) < 2:
            raise DimensionError(f"transpose needs at least 2 dims, got {a.shape}")
        axes[-1], axes[-2] = axes[-2], axes[-1]
    if sorted(axes) != list(range(a.data.ndim)):
        raise DimensionError(f"transpose: bad axes {tuple(axes)} for shape {a.shape}")
    return Transpose.apply(a, axes=tuple(axes))


class Reshape(Function):
    def __init__(self, shape: Tuple[int, ...]):
        self.shape = shape

    def forward(self, a):
        return a.reshape(self.shape).copy()

    def backward(self, grad):
        return (grad.reshape(self.inputs[0].shape),)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    return Reshape.apply(a, shape=shape)


class Pick(Function):
    """Select one entry per row along the last axis of a 2-D tensor."""

    def __init__(self, index: np.ndarray):
        self.index = index

    def forward(self, a):
        return a[np.arange(a.shape[0]), self.index]

    def backward(self, grad):
        out = np.zeros(self.inputs[0].shape)
        out[np.arange(out.shape[0]), self.index] = grad
        return (out,)


def pick(a: Tensor, index: Sequence[int]) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or index.shape != (a.shape[0],):
        raise DimensionError(f"pick: need (N, C) data and N indices, got {a.shape} and {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= a.shape[1]):
        raise DimensionError(f"pick: index out of range for {a.shape[1]} columns")
    return Pick.apply(a, index=index)


# ------------------------------------------------------- softmax & friends


def _check_temperature(temperature: float) -> float:
    temperature = float(temperature)
    if not temperature > 0.0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    return temperature


class SoftmaxT(Function):
    def __init__(self, temperature: float):
        self.temperature = temperature

    def forward(self, a):
        z = a / self.temperature
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def backward(self, grad):
        y = self.output.data
        inner = (grad * y).sum(axis=-1, keepdims=True)
        return (y * (grad - inner) / self.temperature,)


class LogSoftmaxT(Function):
    def __init__(self, temperature: float):
        self.temperature = temperature

    def forward(self, a):
        z = a / self.temperature
        z = z - z.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def backward(self, grad):
        p = np.exp(self.output.data)
        return ((grad - p * grad.sum(axis=-1, keepdims=True)) / self.temperature,)


def softmax_t(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """softmax(logits / temperature) along the last axis."""
    temperature = _check_temperature(temperature)
    if logits.data.ndim == 0 or logits.shape[-1] < 1:
        raise DimensionError(f"softmax needs at least one logit, got shape {logits.shape}")
    return SoftmaxT.apply(logits, temperature=temperature)


def log_softmax_t(logits: Tensor, temperature: float = 1.0) -> Tensor:
    temperature = _check_temperature(temperature)
    if logits.data.ndim == 0 or logits.shape[-1] < 1:
        raise DimensionError(f"log_softmax needs at least one logit, got shape {logits.shape}")
    return LogSoftmaxT.apply(logits, temperature=temperature)


class NormalizeRows(Function):
    """L2-normalise along the last axis; all-zero rows stay zero."""

    def forward(self, a):
        norm = np.sqrt((a * a).sum(axis=-1, keepdims=True))
        self.norm = norm
        safe = np.where(norm > 0.0, norm, 1.0)
        return np.where(norm > 0.0, a / safe, 0.0)

    def backward(self, grad):
        y = self.output.data
        safe = np.where(self.norm > 0.0, self.norm, 1.0)
        proj = (grad * y).sum(axis=-1, keepdims=True)
        return (np.where(self.norm > 0.0, (grad - y * proj) / safe, 0.0),)


def normalize_rows(a: Tensor) -> Tensor:
    return NormalizeRows.apply(a)


# -------------------------------------------------------------------- tape


class GradTape:
    """Topologically ordered record of the ops that produced a tensor."""

    def __init__(self, ops: List[Function]):
        self.ops = ops

    @classmethod
    def from_output(cls, out: Tensor) -> "GradTape":
        order: List[Function] = []
        seen = set()
        if out._node is None:
            return cls(order)
        stack = [(out._node, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for t in node.inputs:
                if t._node is not None and id(t._node) not in seen:
                    stack.append((t._node, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)

    def replay(self, seed_grad: np.ndarray) -> None:
        """Propagate ``seed_grad`` from the last op's output back to the leaves."""
        if not self.ops:
            return
        out = self.ops[-1].output
        out.grad = seed_grad if out.grad is None else out.grad + seed_grad
        for node in reversed(self.ops):
            grad = node.output.grad
            if grad is None:
                continue
            with np.errstate(all="ignore"):
                in_grads = node.backward(grad)
            for t, g in zip(node.inputs, in_grads):
                if g is None or not t.requires_grad:
                    continue
                _check_finite(g, f"{type(node).__name__}.backward")
                if g.shape != t.shape:
                    raise DimensionError(
                        f"{type(node).__name__}.backward returned {g.shape} for input {t.shape}"
                    )
                t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tracked tensor that ``loss`` depends on.

    Gradients accumulate, so call :meth:`Tensor.zero_grad` between steps.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise ContractError("backward called on a tensor that no recorded op produced")
    GradTape.from_output(loss).replay(np.ones(loss.shape))


# ------------------------------------------------------------------- oracle


def finite_diff_grad(
    f: Callable[[Tensor], Union[Tensor, float]], x: Tensor, step: float = 1e-5
) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x.data`` is perturbed in place one coordinate at a time and restored
    afterwards, so ``f`` may close over ``x`` (e.g. a model parameter).
    """
    if not step > 0.0:
        raise ParameterError(f"step must be > 0, got {step}")

    def value() -> float:
        out = f(x)
        return out.item() if isinstance(out, Tensor) else float(out)

    flat = x.data.reshape(-1)
    grad = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = value()
        flat[i] = orig - step
        down = value()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return Tensor(grad.reshape(x.shape))


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|, |n|) over all entries."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
