"""Dense float64 tensors with reverse-mode autodiff and an Adam optimizer.

Operations record onto the active Tape (a context manager); recording order
is a topological order, so backward is a single reversed sweep. Without an
active tape every op is a plain numpy computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

_DEBUG = False


def set_debug(enabled: bool) -> None:
    """In debug mode every op output is checked for NaN/Inf."""
    global _DEBUG
    _DEBUG = enabled


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; floats lift to constant tensors.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class _Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Records the forward pass; one backward sweep per tape."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.grads: dict[int, np.ndarray] = {}
        self._tensors: dict[int, Tensor] = {}
        self._tracked: set[int] = set()
        self._used = False

    def __enter__(self) -> Tape:
        _STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _STACK.pop()
        assert popped is self

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def record(self, node: _Node) -> None:
        self.nodes.append(node)
        self._tracked.add(id(node.out))
        for p in (node.out,) + node.parents:
            self._tensors[id(p)] = p

    def backward(self, loss: Tensor) -> None:
        if self._used:
            raise TapeError("backward called twice on one tape")
        self._used = True
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
        self.grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            gout = self.grads.get(id(node.out))
            if gout is None:
                continue
            for parent, g in zip(node.parents, node.vjp(gout)):
                if g is None or not self.tracks(parent):
                    continue
                acc = self.grads.get(id(parent))
                self.grads[id(parent)] = g if acc is None else acc + g

    def grad(self, t: Tensor) -> np.ndarray | None:
        return self.grads.get(id(t))


_STACK: list[Tape] = []


def _active() -> Tape | None:
    return _STACK[-1] if _STACK else None


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value in op output")
    out = Tensor(data)
    tape = _active()
    if tape is not None and any(tape.tracks(p) for p in parents):
        tape.record(_Node(out, parents, vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --- elementwise and linear algebra ------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data
    return _make(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data
    return _make(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g: np.ndarray):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(sizes))
        )

    return _make(data, tuple(tensors), vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def safe_log(a: Tensor, eps: float = 1e-12) -> Tensor:
    """log(max(a, eps)); gradient is zero where the clamp is active."""
    clamped = np.maximum(a.data, eps)
    mask = a.data > eps
    return _make(np.log(clamped), (a,), lambda g: (g * mask / clamped,))


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(data, (a,), vjp)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, a.data.shape).copy(),))


def softmax_rows(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g: np.ndarray):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    return _make(p, (a,), vjp)


# --- gather / scatter ---------------------------------------------------------


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup (embedding fetch); gradient scatter-adds into the table."""
    idx = np.asarray(idx, dtype=np.int64)
    data = a.data[idx]

    def vjp(g: np.ndarray):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(data, (a,), vjp)


def _segment_matrix(seg: np.ndarray, num_segments: int) -> sparse.csr_matrix:
    e = len(seg)
    return sparse.csr_matrix(
        (np.ones(e), (seg, np.arange(e))), shape=(num_segments, e)
    )


def segment_sum(a: Tensor, seg: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of `a` by group id; groups without rows yield zero rows."""
    seg = np.asarray(seg, dtype=np.int64)
    if len(seg) != a.data.shape[0]:
        raise ShapeError(f"segment ids {seg.shape} do not match rows {a.data.shape}")
    mat = _segment_matrix(seg, num_segments)
    data = mat @ a.data
    if a.data.ndim == 1:
        data = np.asarray(data).reshape(num_segments)
    return _make(np.asarray(data), (a,), lambda g: (np.asarray(g)[seg],))


def take_along_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Per-row element pick: out[i] = a[i, idx[i]]."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.data.shape[0])
    data = a.data[rows, idx]

    def vjp(g: np.ndarray):
        out = np.zeros_like(a.data)
        out[rows, idx] = g
        return (out,)

    return _make(data, (a,), vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    data = a.data[:, start:stop]

    def vjp(g: np.ndarray):
        out = np.zeros_like(a.data)
        out[:, start:stop] = g
        return (out,)

    return _make(data, (a,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)
    return _make(data, (a,), lambda g: (g.reshape(a.data.shape),))


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a recorded mask; call only in training mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate {p} out of range")
    if p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


# --- optimizer -----------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moments per parameter plus the shared step counter."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> None:
    """One in-place Adam update with bias correction."""
    state.step += 1
    t = state.step
    for i, (param, grad) in enumerate(zip(params, grads)):
        g = np.zeros_like(param.data) if grad is None else grad
        if g.shape != param.data.shape:
            raise ShapeError(f"gradient shape {g.shape} vs parameter {param.data.shape}")
        m = state.m.setdefault(i, np.zeros_like(param.data))
        v = state.v.setdefault(i, np.zeros_like(param.data))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# --- checkpoints ----------------------------------------------------------------

CHECKPOINT_MAGIC = "RCT-CKPT-1"


def save_checkpoint(path: str, named: dict[str, np.ndarray]) -> None:
    """Text header (name + shape) followed by little-endian float64 payload per tensor."""
    with open(path, "wb") as fh:
        fh.write((CHECKPOINT_MAGIC + "\n").encode("ascii"))
        for name, arr in named.items():
            if any(c.isspace() for c in name):
                raise ValueError(f"tensor name {name!r} contains whitespace")
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"{name} {dims}\n".encode("ascii"))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    named: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").rstrip("\n")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        while True:
            header = fh.readline()
            if not header:
                break
            parts = header.decode("ascii").split()
            name, dims = parts[0], tuple(int(d) for d in parts[1:])
            count = int(np.prod(dims)) if dims else 1
            payload = fh.read(count * 8)
            if len(payload) != count * 8:
                raise ValueError(f"{path}: truncated payload for {name!r}")
            named[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return named


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function; the gradient oracle."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad
