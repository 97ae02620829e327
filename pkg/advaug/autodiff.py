"""
Reverse-mode automatic differentiation over dense float64 arrays.

A Tape records every primitive evaluated while it is active and while at
least one operand is tracked (a leaf with requires_grad, or a result
already recorded on that tape). With no active tape every op is a plain
numpy evaluation, which is what frozen-model inference and the parallel
attack workers rely on.

Backward rules are written with Tensor ops themselves, so running them
with create_graph=True records the backward pass and gives the second
derivatives the gradient penalty needs.

Broadcasting is explicit: elementwise ops accept equal shapes or a
scalar operand, everything else goes through expand().

    x = Tensor([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    (grad,) = tape.gradient(loss, [x])   # [2, -4]
"""

import contextlib
import contextvars
import numbers
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from advaug.errors import (
    ConfigError,
    DomainError,
    NonFiniteError,
    ShapeError,
    StaleTapeError,
)

_active_tape = contextvars.ContextVar("advaug_active_tape", default=None)
_recording = contextvars.ContextVar("advaug_recording", default=True)

NORM_FLOOR = 1e-12


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "grad_count", "_tape")

    # make `np.float64(2) * tensor` dispatch to Tensor.__rmul__
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        array = np.array(data, dtype=np.float64)
        _check_finite(array, "Tensor construction")
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[Tensor] = None
        self.grad_count = 0
        self._tape = None

    @classmethod
    def _wrap(cls, array: np.ndarray, op: str) -> "Tensor":
        """Adopt a freshly computed array without copying."""
        _check_finite(array, op)
        tensor = cls.__new__(cls)
        tensor.data = array
        tensor.requires_grad = False
        tensor.grad = None
        tensor.grad_count = 0
        tensor._tape = None
        return tensor

    @classmethod
    def zeros(cls, shape, requires_grad=False) -> "Tensor":
        return cls(np.zeros(shape), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape, requires_grad=False) -> "Tensor":
        return cls(np.ones(shape), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":  # noqa: N802
        return transpose(self)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy(), "detach")

    def zero_grad(self):
        self.grad = None
        self.grad_count = 0

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return mul(reciprocal(self), other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _check_finite(array: np.ndarray, op: str):
    if not np.all(np.isfinite(array)):
        bad = int(np.flatnonzero(~np.isfinite(array.reshape(-1)))[0])
        raise NonFiniteError(f"{op} produced a non-finite value at flat index {bad}")


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ----------------------------------------------------------------------
# Tape
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class TapeEntry:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[Tensor], tuple]


class Tape:
    """
    Ordered record of primitives. Entries are appended in evaluation
    order, so every operand of entry k is a leaf or the output of an
    earlier entry.

    A non-persistent tape allows one consuming gradient()/backward()
    call; gradient(..., create_graph=True) does not consume it.
    """

    def __init__(self, persistent: bool = False):
        self.persistent = persistent
        self.entries: list[TapeEntry] = []
        self._consumed = False
        self._tokens = []

    def __enter__(self):
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._tokens.pop())
        return False

    def __len__(self):
        return len(self.entries)

    def tracks(self, tensor) -> bool:
        if not isinstance(tensor, Tensor):
            return False
        return tensor._tape is self or (tensor.requires_grad and tensor._tape is None)

    def _append(self, op, inputs, output, backward):
        output._tape = self
        self.entries.append(TapeEntry(op, inputs, output, backward))

    def leaves(self) -> list[Tensor]:
        seen = set()
        found = []
        for entry in self.entries:
            for tensor in entry.inputs:
                if (
                    isinstance(tensor, Tensor)
                    and tensor.requires_grad
                    and tensor._tape is None
                    and id(tensor) not in seen
                ):
                    seen.add(id(tensor))
                    found.append(tensor)
        return found

    def gradient(
        self,
        target: Tensor,
        sources: Sequence[Tensor],
        create_graph: bool = False,
    ) -> list[Tensor]:
        if self._consumed:
            raise StaleTapeError(
                "tape was already consumed by a backward pass; record it again"
            )
        if target.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {target.shape}")
        if target._tape is not self:
            raise StaleTapeError("backward root was not recorded on this tape")

        snapshot = list(self.entries)
        grads = {id(target): Tensor._wrap(np.ones(target.shape), "seed")}

        if create_graph:
            context = _recording_on_tape(self)
        else:
            context = no_grad()

        with context:
            for entry in reversed(snapshot):
                upstream = grads.get(id(entry.output))
                if upstream is None:
                    continue
                for tensor, partial in zip(entry.inputs, entry.backward(upstream)):
                    if partial is None or not self.tracks(tensor):
                        continue
                    key = id(tensor)
                    if key in grads:
                        grads[key] = grads[key] + partial
                    else:
                        grads[key] = partial

        if not (self.persistent or create_graph):
            self._consumed = True

        found = []
        for source in sources:
            grad = grads.get(id(source))
            found.append(Tensor.zeros(source.shape) if grad is None else grad)
        return found

    def backward(self, target: Tensor) -> list[Tensor]:
        """Populate .grad on every recorded leaf that requires gradients."""
        leaves = self.leaves()
        for leaf, grad in zip(leaves, self.gradient(target, leaves)):
            if leaf.grad is not None:
                grad = Tensor(leaf.grad.data + grad.data)
            leaf.grad = grad
            leaf.grad_count += 1
        return leaves


@contextlib.contextmanager
def no_grad():
    token = _recording.set(False)
    try:
        yield
    finally:
        _recording.reset(token)


@contextlib.contextmanager
def _recording_on_tape(tape: Tape):
    tape_token = _active_tape.set(tape)
    record_token = _recording.set(True)
    try:
        yield
    finally:
        _recording.reset(record_token)
        _active_tape.reset(tape_token)


def _record(op: str, array: np.ndarray, inputs: tuple, backward) -> Tensor:
    out = Tensor._wrap(array, op)
    tape = _active_tape.get()
    if tape is not None and _recording.get() and any(tape.tracks(t) for t in inputs):
        tape._append(op, inputs, out, backward)
    return out


# ----------------------------------------------------------------------
# Elementwise
# ----------------------------------------------------------------------


def _is_scalar(value) -> bool:
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def _constant(array: np.ndarray) -> Tensor:
    return Tensor._wrap(np.asarray(array, dtype=np.float64), "constant")


def _align(op: str, a, b):
    """Coerce operands to (Tensor, Tensor | float) with matching shapes."""
    if _is_scalar(a) and isinstance(b, Tensor):
        raise TypeError(f"{op}: scalar left operand must be handled by the caller")
    a = as_tensor(a)
    if _is_scalar(b):
        return a, float(b)
    if isinstance(b, np.ndarray):
        b = _constant(b)
    if not isinstance(b, Tensor):
        raise TypeError(f"{op}: unsupported operand {type(b).__name__}")
    if a.shape == b.shape:
        return a, b
    if b.ndim == 0:
        return a, expand(b, a.shape)
    if a.ndim == 0:
        return expand(a, b.shape), b
    raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = _align("add", a, b)
    if isinstance(b, float):
        return _record("add", a.data + b, (a,), lambda g: (g,))
    return _record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _align("sub", a, b)
    if isinstance(b, float):
        return _record("sub", a.data - b, (a,), lambda g: (g,))
    return _record("sub", a.data - b.data, (a, b), lambda g: (g, neg(g)))


def mul(a, b) -> Tensor:
    a, b = _align("mul", a, b)
    if isinstance(b, float):
        return _record("mul", a.data * b, (a,), lambda g: (g * b,))
    return _record("mul", a.data * b.data, (a, b), lambda g: (g * b, g * a))


def div(a, b) -> Tensor:
    a, b = _align("div", a, b)
    if isinstance(b, float):
        if b == 0.0:
            raise DomainError("div: division by scalar zero")
        return _record("div", a.data / b, (a,), lambda g: (g / b,))

    zero = np.flatnonzero(b.data.reshape(-1) == 0.0)
    if zero.size:
        raise DomainError(f"div: zero divisor at flat index {int(zero[0])}")

    def backward(g):
        return g / b, neg(g * a / (b * b))

    return _record("div", a.data / b.data, (a, b), backward)


def maximum(a, b) -> Tensor:
    a, b = _align("max", a, b)
    if isinstance(b, float):
        mask = _constant(a.data >= b)
        return _record("max", np.maximum(a.data, b), (a,), lambda g: (g * mask,))
    mask = a.data >= b.data
    keep_a, keep_b = _constant(mask), _constant(~mask)
    return _record(
        "max",
        np.maximum(a.data, b.data),
        (a, b),
        lambda g: (g * keep_a, g * keep_b),
    )


def minimum(a, b) -> Tensor:
    a, b = _align("min", a, b)
    if isinstance(b, float):
        mask = _constant(a.data <= b)
        return _record("min", np.minimum(a.data, b), (a,), lambda g: (g * mask,))
    mask = a.data <= b.data
    keep_a, keep_b = _constant(mask), _constant(~mask)
    return _record(
        "min",
        np.minimum(a.data, b.data),
        (a, b),
        lambda g: (g * keep_a, g * keep_b),
    )


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    return minimum(maximum(x, low), high)


def neg(x: Tensor) -> Tensor:
    return _record("neg", -x.data, (x,), lambda g: (neg(g),))


def reciprocal(x: Tensor) -> Tensor:
    zero = np.flatnonzero(x.data.reshape(-1) == 0.0)
    if zero.size:
        raise DomainError(f"reciprocal: zero entry at flat index {int(zero[0])}")
    out = None

    def backward(g):
        return (neg(g * out * out),)

    out = _record("reciprocal", 1.0 / x.data, (x,), backward)
    return out


def square(x: Tensor) -> Tensor:
    return mul(x, x)


# ----------------------------------------------------------------------
# Activations and special functions
# ----------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = _constant(x.data > 0)
    return _record("relu", np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = None

    def backward(g):
        return (g * out * (1.0 - out),)

    out = _record("sigmoid", special.expit(x.data), (x,), backward)
    return out


def softplus(x: Tensor) -> Tensor:
    return _record(
        "softplus",
        np.logaddexp(0.0, x.data),
        (x,),
        lambda g: (g * sigmoid(x),),
    )


def exp(x: Tensor) -> Tensor:
    out = None

    def backward(g):
        return (g * out,)

    out = _record("exp", np.exp(x.data), (x,), backward)
    return out


def _require_positive(op: str, x: Tensor, allow_zero=False):
    flat = x.data.reshape(-1)
    bad = np.flatnonzero(flat < 0 if allow_zero else flat <= 0)
    if bad.size:
        index = int(bad[0])
        raise DomainError(
            f"{op} of non-positive entry {flat[index]!r} at index {index}"
        )


def log(x: Tensor) -> Tensor:
    _require_positive("log", x)
    return _record("log", np.log(x.data), (x,), lambda g: (g / x,))


def sqrt(x: Tensor) -> Tensor:
    _require_positive("sqrt", x, allow_zero=True)
    out = None

    def backward(g):
        return (g / (2.0 * maximum(out, NORM_FLOOR)),)

    out = _record("sqrt", np.sqrt(x.data), (x,), backward)
    return out


def tanh(x: Tensor) -> Tensor:
    out = None

    def backward(g):
        return (g * (1.0 - out * out),)

    out = _record("tanh", np.tanh(x.data), (x,), backward)
    return out


def absolute(x: Tensor) -> Tensor:
    sign = _constant(np.sign(x.data))
    return _record("abs", np.abs(x.data), (x,), lambda g: (g * sign,))


def lgamma(x: Tensor) -> Tensor:
    _require_positive("lgamma", x)
    return _record("lgamma", special.gammaln(x.data), (x,), lambda g: (g * digamma(x),))


def digamma(x: Tensor) -> Tensor:
    _require_positive("digamma", x)
    # trigamma enters as a constant: no third derivatives through here
    trigamma = _constant(special.polygamma(1, x.data))
    return _record("digamma", special.digamma(x.data), (x,), lambda g: (g * trigamma,))


ACTIVATIONS = {
    "relu": relu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "identity": lambda x: x,
}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(
            f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}"
        )
    return fn(x)


# ----------------------------------------------------------------------
# Linear algebra and structure
# ----------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    return _record(
        "matmul",
        a.data @ b.data,
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
    )


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {x.shape}")
    return _record("transpose", x.data.T.copy(), (x,), lambda g: (transpose(g),))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        array = x.data.reshape(shape).copy()
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")
    return _record("reshape", array, (x,), lambda g: (reshape(g, x.shape),))


def getitem(x: Tensor, index) -> Tensor:
    array = np.array(x.data[index], dtype=np.float64)
    return _record(
        "getitem", array, (x,), lambda g: (index_put(g, index, x.shape),)
    )


def index_put(values: Tensor, index, shape) -> Tensor:
    """Zeros of `shape` with `values` placed at `index` (adjoint of getitem)."""
    array = np.zeros(shape)
    array[index] = values.data
    return _record(
        "index_put", array, (values,), lambda g: (getitem(g, index),)
    )


def expand(x: Tensor, shape) -> Tensor:
    """Broadcast size-1 axes (or a 0-d tensor) to `shape`."""
    shape = tuple(shape)
    if x.ndim not in (0, len(shape)) or any(
        s != 1 and s != t for s, t in zip(x.shape, shape)
    ):
        raise ShapeError(f"cannot expand {x.shape} to {shape}")
    array = np.broadcast_to(x.data, shape).copy()
    return _record("expand", array, (x,), lambda g: (_unexpand(g, x.shape),))


def _unexpand(g: Tensor, shape) -> Tensor:
    if g.shape == tuple(shape):
        return g
    if len(shape) == 0:
        return reduce_sum(g)
    axes = tuple(i for i, (s, t) in enumerate(zip(shape, g.shape)) if s == 1 and t != 1)
    return reduce_sum(g, axis=axes, keepdims=True)


# ----------------------------------------------------------------------
# Reductions
# ----------------------------------------------------------------------


def _keepdims_shape(shape, axis):
    if axis is None:
        return tuple(1 for _ in shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = {a % len(shape) for a in axes}
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def _require_nonempty(op: str, x: Tensor):
    if x.size == 0:
        raise ShapeError(f"{op} of an empty tensor")


def reduce_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    _require_nonempty("sum", x)
    array = np.sum(x.data, axis=axis, keepdims=keepdims)
    kept = _keepdims_shape(x.shape, axis)

    def backward(g):
        return (expand(reshape(g, kept), x.shape),)

    return _record("sum", np.asarray(array, dtype=np.float64), (x,), backward)


def reduce_mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    _require_nonempty("mean", x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return reduce_sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def l2_norm(x: Tensor, axis=None) -> Tensor:
    _require_nonempty("l2_norm", x)
    array = np.sqrt(np.sum(x.data * x.data, axis=axis))
    kept = _keepdims_shape(x.shape, axis)
    out = None

    def backward(g):
        # subgradient 0 at the origin
        scale = reshape(g / maximum(out, NORM_FLOOR), kept)
        return (x * expand(scale, x.shape),)

    out = _record("l2_norm", np.asarray(array, dtype=np.float64), (x,), backward)
    return out


REDUCTIONS = {"sum": reduce_sum, "mean": reduce_mean, "l2_norm": l2_norm}


# ----------------------------------------------------------------------
# Gradient oracle
# ----------------------------------------------------------------------


def finite_difference_check(
    fn: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5
) -> float:
    """
    Max over coordinates of |analytic - central difference| /
    (|analytic| + |numeric| + 1e-12).
    """
    if h <= 0:
        raise ConfigError(f"finite-difference step must be > 0, got {h}")

    leaf = Tensor(x.data, requires_grad=True)
    with Tape() as tape:
        value = fn(leaf)
    (analytic,) = tape.gradient(value, [leaf])

    base = x.data.reshape(-1)
    numeric = np.empty_like(base)
    for i in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[i] += h
        minus[i] -= h
        f_plus = fn(Tensor(plus.reshape(x.shape))).item()
        f_minus = fn(Tensor(minus.reshape(x.shape))).item()
        numeric[i] = (f_plus - f_minus) / (2.0 * h)

    a = analytic.data.reshape(-1)
    error = np.abs(a - numeric) / (np.abs(a) + np.abs(numeric) + 1e-12)
    return float(error.max()) if error.size else 0.0
