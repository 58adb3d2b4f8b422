"""Dense tensors with a reverse-mode gradient tape.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure mapping the upstream gradient to one gradient per
parent.  :class:`GradTape` orders the recorded operations reachable from an
output and replays them backward.  Gradients only land in ``.grad`` of leaf
tensors (tensors created by the user with ``requires_grad=True``); they are
accumulated, so calling ``backward`` twice without :meth:`Tensor.zero_grad`
doubles them.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, optimizer updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg}, op={self.op})"

    # -- autograd -----------------------------------------------------------
    def backward(self, grad=None) -> None:
        GradTape(self).backward(grad)

    def __add__(self, other):
        from .ops import add

        return add(self, other)

    def __sub__(self, other):
        from .ops import sub

        return sub(self, other)

    def __mul__(self, other):
        from .ops import scale

        if isinstance(other, Tensor):
            return NotImplemented
        return scale(self, float(other))

    __rmul__ = __mul__


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """Wrap an op's output, recording it on the graph if any parent needs grad."""
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward
    return out


class GradTape:
    """The operations reachable from ``output``, in forward execution order.

    Entries are produced by a depth-first walk that visits parents in
    argument order, so the ordering (and therefore the floating-point
    accumulation order of the backward pass) is fully deterministic.
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.entries: list[Tensor] = []
        seen: set[int] = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.entries.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in seen:
                    stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.entries)

    def leaves(self) -> list[Tensor]:
        return [t for t in self.entries if t.is_leaf]

    def backward(self, grad=None) -> None:
        out = self.output
        if not out.requires_grad:
            raise RuntimeError("output does not require grad; nothing was recorded")
        if grad is None:
            if out.size != 1:
                raise RuntimeError("grad must be given for non-scalar outputs")
            seed = np.ones_like(out.data)
        else:
            seed = np.asarray(grad.data if isinstance(grad, Tensor) else grad, dtype=out.dtype)
            if seed.shape != out.shape:
                raise ValueError(f"seed gradient shape {seed.shape} != output shape {out.shape}")

        pending: dict[int, np.ndarray] = {id(out): seed}
        for node in reversed(self.entries):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg
