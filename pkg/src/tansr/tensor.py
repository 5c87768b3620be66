"""Rank-4 tensors and a reverse-mode gradient tape.

Every tensor is an ``N x C x H x W`` numpy array.  Differentiable operations
append an :class:`Op` record to the implicit tape (a monotonically numbered
graph); :func:`backward` replays the reachable part of that tape in reverse
order of creation.
"""
from __future__ import annotations

import itertools
import threading
import weakref
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ArgumentError, ShapeError, StateError

_op_counter = itertools.count()
_local = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_op", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are rank 4 (N, C, H, W), got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._op: Op | None = None

    @classmethod
    def zeros(cls, shape, dtype=np.float32, requires_grad=False) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def full(cls, shape, value, dtype=np.float32, requires_grad=False) -> "Tensor":
        return cls(np.full(shape, value, dtype=dtype), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(()))

    def backward(self) -> None:
        backward(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, factor: float) -> "Tensor":
        return scale(self, factor)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


class Op:
    """One tape entry: inputs, (weakly held) outputs and the backward rule."""

    __slots__ = ("seq", "name", "inputs", "outputs", "backward_fn")

    def __init__(self, name: str, inputs: Sequence[Tensor], outputs: Sequence[Tensor],
                 backward_fn: Callable):
        self.seq = next(_op_counter)
        self.name = name
        self.inputs = tuple(inputs)
        self.outputs = tuple(weakref.ref(t) for t in outputs)
        self.backward_fn = backward_fn


def record(name: str, inputs: Sequence[Tensor], outputs: Sequence[Tensor],
           backward_fn: Callable) -> None:
    """Attach a backward rule to freshly computed ``outputs``.

    ``backward_fn`` receives one gradient array per output (zeros for
    outputs that received no gradient) and returns one gradient array, or
    None, per input.
    """
    if not is_grad_enabled() or not any(t.requires_grad for t in inputs):
        return
    op = Op(name, inputs, outputs, backward_fn)
    for out in outputs:
        out.requires_grad = True
        out._op = op


def tape(loss: Tensor) -> list[Op]:
    """Return the recorded ops that ``loss`` depends on, in creation order."""
    seen: dict[int, Op] = {}
    stack = [loss]
    visited: set[int] = set()
    while stack:
        t = stack.pop()
        if id(t) in visited:
            continue
        visited.add(id(t))
        op = t._op
        if op is None or op.seq in seen:
            continue
        seen[op.seq] = op
        stack.extend(inp for inp in op.inputs if inp.requires_grad)
    return [seen[k] for k in sorted(seen)]


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Gradients are never accumulated across calls: if any reachable tensor
    still holds a gradient from an earlier pass, StateError is raised.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ShapeError(f"backward() needs a 1x1x1x1 scalar loss, got {loss.shape}")
    if not loss.requires_grad:
        raise StateError("loss does not depend on any tensor that requires grad")
    ops = tape(loss)

    targets: dict[int, Tensor] = {id(loss): loss}
    for op in ops:
        for inp in op.inputs:
            if inp.requires_grad:
                targets[id(inp)] = inp
    stale = [t for t in targets.values() if t.grad is not None]
    if stale:
        raise StateError(f"{len(stale)} tensor(s) already hold gradients; call zero_grad() "
                         "before running backward again")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for op in reversed(ops):
        outs = [ref() for ref in op.outputs]
        gouts = [grads.get(id(o)) if o is not None else None for o in outs]
        if all(g is None for g in gouts):
            continue
        gouts = [g if g is not None else np.zeros_like(o.data) for g, o in zip(gouts, outs)]
        gins = op.backward_fn(*gouts)
        for inp, g in zip(op.inputs, gins):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
    for key, t in targets.items():
        g = grads.get(key)
        t.grad = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.dtype)


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_channel_gate(shape, target) -> bool:
    n, c, h, w = shape
    return h == 1 and w == 1 and n in (1, target[0]) and c in (1, target[1])


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """``a + b``; ``b`` may be a 1xCx1x1 per-channel term."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and not (b.shape[0] == 1 and _is_channel_gate(b.shape, a.shape)
                                   and b.shape[1] == a.shape[1]):
        raise ShapeError(f"cannot add {b.shape} to {a.shape}")
    out = Tensor(a.data + b.data)
    record("add", (a, b), (out,), lambda g: (g, _reduce_to(g, b.shape)))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot subtract {b.shape} from {a.shape}")
    out = Tensor(a.data - b.data)
    record("sub", (a, b), (out,), lambda g: (g, -g))
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a Python constant."""
    out = Tensor(x.data * x.dtype.type(factor))
    record("scale", (x,), (out,), lambda g: (g * x.dtype.type(factor),))
    return out


def mul_channelwise(x: Tensor, w: Tensor) -> Tensor:
    """Scale every spatial position of channel ``c`` by ``w[:, c]``.

    ``w`` is a channel gate of shape (1|N) x C x 1 x 1.  A single-channel
    gate (shape ... x 1 x 1 x 1) scales all channels by one scalar.
    """
    if not _is_channel_gate(w.shape, x.shape):
        raise ShapeError(f"gate of shape {w.shape} does not match {x.shape}")
    out = Tensor(x.data * w.data)

    def grad_fn(g):
        gx = g * w.data if x.requires_grad else None
        gw = _reduce_to(g * x.data, w.shape) if w.requires_grad else None
        return gx, gw

    record("mul_channelwise", (x, w), (out,), grad_fn)
    return out


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ArgumentError("concat_channels needs at least one tensor")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeError(f"cannot concatenate {p.shape} with {parts[0].shape}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    bounds = np.cumsum([0] + [p.channels for p in parts])

    def grad_fn(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    record("concat", parts, (out,), grad_fn)
    return out


def slice_channels(x: Tensor, at: int) -> tuple[Tensor, Tensor]:
    """Split into channels ``[0, at)`` and ``[at, C)``."""
    if not 0 < at < x.channels:
        raise ArgumentError(f"slice point {at} outside (0, {x.channels})")
    first = Tensor(np.ascontiguousarray(x.data[:, :at]))
    second = Tensor(np.ascontiguousarray(x.data[:, at:]))
    record("slice", (x,), (first, second),
           lambda g1, g2: (np.concatenate([g1, g2], axis=1),))
    return first, second


def mean(x: Tensor) -> Tensor:
    """Mean of all elements, as a 1x1x1x1 tensor."""
    size = x.data.size
    out = Tensor(np.full((1, 1, 1, 1), x.data.mean(dtype=np.float64), dtype=x.dtype))
    record("mean", (x,), (out,),
           lambda g: (np.full_like(x.data, g.reshape(()) / size),))
    return out


def add_n(terms: Sequence[Tensor]) -> Tensor:
    terms = list(terms)
    if not terms:
        raise ArgumentError("add_n needs at least one tensor")
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total
