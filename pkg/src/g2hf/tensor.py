"""Dense tensor value type and the reverse-mode tape that records it.

A :class:`Tensor` wraps an immutable numpy array. Operations in
:mod:`g2hf.ops` produce new tensors and, while a :class:`Tape` is active and
at least one input requires a gradient, append a node holding the adjoint
rule for that operation.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "g2hf_active_tape", default=None
)


class ShapeError(ValueError):
    """Raised when an operation receives tensors of incompatible shape."""


class Tensor:
    """Row-major dense array with an explicit shape.

    ``requires_grad`` marks a trainable leaf (or a value derived from one on
    the active tape). The wrapped array is made read-only.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE) if not isinstance(data, np.ndarray) else data
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(DTYPE)
        if arr.flags.writeable:
            arr = arr.view()
            arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _scalar_error():
    raise ShapeError("item() needs a single-element tensor")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


@dataclass(frozen=True)
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    adjoint: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of operations for reverse accumulation.

    Use as a context manager; operations executed inside the block are
    recorded. Nodes are appended in execution order, so the list is already
    topologically sorted.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, op, inputs, output, adjoint) -> None:
        self.nodes.append(Node(op, tuple(inputs), output, adjoint))

    def _accumulate(self, loss: Tensor) -> dict[int, np.ndarray]:
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data, dtype=DTYPE)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.adjoint(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        return grads

    def leaves(self) -> list[Tensor]:
        produced = {id(n.output) for n in self.nodes}
        seen: dict[int, Tensor] = {}
        for n in self.nodes:
            for t in n.inputs:
                if t.requires_grad and id(t) not in produced and id(t) not in seen:
                    seen[id(t)] = t
        return list(seen.values())

    def backward(self, loss: Tensor) -> dict[str | int, np.ndarray]:
        """Reverse-accumulate from ``loss`` and store ``.grad`` on every leaf.

        Leaves the loss does not depend on receive a zero gradient. Returns a
        mapping from leaf name (or ``id`` when unnamed) to its gradient.
        """
        grads = self._accumulate(loss)
        out: dict[str | int, np.ndarray] = {}
        for leaf in self.leaves():
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data, dtype=DTYPE)
            leaf.grad = g
            out[leaf.name if leaf.name is not None else id(leaf)] = g
        return out

    def gradient(self, loss: Tensor, sources: Iterable[Tensor]) -> list[np.ndarray]:
        grads = self._accumulate(loss)
        return [
            grads.get(id(s), np.zeros_like(s.data, dtype=DTYPE)) for s in sources
        ]


def active_tape() -> Tape | None:
    return _active_tape.get()
