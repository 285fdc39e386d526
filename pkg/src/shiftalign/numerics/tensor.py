"""Dense tensors with a reverse-mode gradient tape.

Every differentiable op produces a :class:`Tensor` whose ``_backward`` closure
maps the output gradient to one gradient per parent.  Ops that touch a tensor
requiring gradients receive a sequence number from a thread-local counter;
``backward`` replays the reachable ops in strictly decreasing sequence order,
which is exactly the reverse of the order they were recorded in.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

_state = threading.local()


def _local():
    if not hasattr(_state, "counter"):
        _state.counter = itertools.count()
        _state.grad_enabled = True
        _state.dtype = np.float32
    return _state


class NonFiniteError(ArithmeticError):
    """Raised when an op produces NaN or Inf from its inputs."""


class ShapeError(ValueError):
    """Raised on incompatible operand shapes."""


def default_dtype() -> np.dtype:
    return np.dtype(_local().dtype)


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _local().dtype = dtype.type


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the default scalar type (``float64`` for gradient checks)."""
    old = _local().dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _local().dtype = old


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    st = _local()
    old = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = old


def grad_enabled() -> bool:
    return _local().grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else default_dtype()
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._seq = -1

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- autodiff ----------------------------------------------------------
    def backward(self, grad=None) -> "Tape":
        tape = Tape.from_output(self)
        tape.backward(self, grad)
        return tape

    # -- operator sugar (implemented in functional) ------------------------
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a python scalar")
        return F.mul(self, 1.0 / float(other))

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from . import functional as F
        return F.getitem(self, index)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes or None)

    def sum(self, axes=None):
        from . import functional as F
        return F.sum(self, axes)

    def mean(self, axes=None):
        from . import functional as F
        return F.mean(self, axes)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap an op result and, if any parent needs gradients, record it.

    ``backward(grad)`` must return one array (or ``None``) per parent, in order.
    """
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {getattr(backward, '__qualname__', 'op')}")
    out = Tensor(data, dtype=data.dtype)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._seq = next(_local().counter)
    return out


class Tape:
    """The recorded ops reachable from one output, in recording order."""

    def __init__(self, ops: list):
        self.ops = ops

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen = set()
        ops = []
        stack = [out]
        while stack:
            t = stack.pop()
            if id(t) in seen or t._backward is None:
                continue
            seen.add(id(t))
            ops.append(t)
            stack.extend(t._parents)
        ops.sort(key=lambda t: t._seq)
        return cls(ops)

    def __len__(self) -> int:
        return len(self.ops)

    def backward(self, out: Tensor, grad=None) -> None:
        if not out.requires_grad:
            raise RuntimeError("tensor does not require grad")
        if grad is None:
            if out.size != 1:
                raise ShapeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(out.data)
        grads = {id(out): np.asarray(grad, dtype=out.dtype)}
        if out._backward is None:
            out.grad = grads[id(out)] if out.grad is None else out.grad + grads[id(out)]
            return
        for node in reversed(self.ops):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(f"gradient shape {pg.shape} != tensor shape {parent.shape}")
                if parent._backward is None:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg
