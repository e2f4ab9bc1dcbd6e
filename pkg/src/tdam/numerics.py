"""Dense float64 tensors with a reverse-mode tape.

Operations record themselves on the active :class:`Tape` (if any input
requires a gradient).  ``Tape.backward`` walks the recorded nodes in reverse
order and accumulates into ``Tensor.grad``.

Reductions whose operands may be permuted (softmax denominators, topic
mixtures) sum in sorted order, so their results do not depend on the order
of the summed terms.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CE_EPS = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


@dataclass
class Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[object]]
    op: str = ""


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; one tape per thread.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if loss.data.size != 1:
                raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
            seed = np.ones_like(loss.data)
        loss.grad = seed.astype(np.float64) if loss.grad is None else loss.grad + seed
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if isinstance(gi, Scatter):
                    if inp.grad is None:
                        inp.grad = np.zeros(inp.shape)
                    gi.add_into(inp.grad)
                elif inp.grad is None:
                    inp.grad = np.array(gi, dtype=np.float64, copy=True)
                else:
                    inp.grad = inp.grad + gi


@dataclass
class Scatter:
    """Gradient that is zero except at ``index`` (avoids dense temporaries)."""

    index: object
    values: np.ndarray
    unique: bool = True

    def add_into(self, target: np.ndarray) -> None:
        if self.unique:
            target[self.index] += self.values
        else:
            np.add.at(target, self.index, self.values)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward, op: str) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(Node(inputs, out, backward, op))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return _make(A @ B, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Rows of ``x`` mapped through ``w`` (out x in), plus optional bias.

    Computes ``x @ w.T`` then adds ``b``, in that order.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    X, W = x.data, w.data
    out = X @ W.T
    if b is None:
        return _make(out, (x, w), lambda g: (g @ W, g.T @ X), "linear")
    b = as_tensor(b)
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    out = out + b.data
    return _make(out, (x, w, b), lambda g: (g @ W, g.T @ X, g.sum(axis=0)), "linear")


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    A, B = a.data, b.data
    return _make(A * B, (a, b),
                 lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def elementwise(a, kind: str, b=None, c: float | None = None) -> Tensor:
    """Dispatch by name: tanh, sigmoid, mul, add, sub, scale."""
    unary = {"tanh": tanh, "sigmoid": sigmoid}
    binary = {"mul": mul, "add": add, "sub": sub}
    if kind in unary:
        return unary[kind](a)
    if kind in binary:
        if b is None:
            raise ShapeError(f"{kind} needs a second operand")
        a_, b_ = as_tensor(a), as_tensor(b)
        if a_.shape != b_.shape:
            raise ShapeError(f"{kind}: shapes differ, {a_.shape} vs {b_.shape}")
        return binary[kind](a_, b_)
    if kind == "scale":
        return scale(a, 1.0 if c is None else c)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------- shape ops


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def getitem(a: Tensor, index) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    basic = not any(isinstance(i, (list, np.ndarray)) for i in
                    (index if isinstance(index, tuple) else (index,)))
    return _make(np.array(a.data[index]), (a,),
                 lambda g: (Scatter(index, g, unique=basic),), "getitem")


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table; result shape is ``ids.shape + (cols,)``."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"take_rows: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"take_rows: id out of range for table with {table.shape[0]} rows")
    cols = table.shape[1]

    def backward(g):
        return (Scatter(ids.reshape(-1), g.reshape(-1, cols), unique=False),)

    return _make(table.data[ids], (table,), backward, "take_rows")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ax = axis % parts[0].ndim
    sizes = [p.shape[ax] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([p.data for p in parts], axis=ax), tuple(parts), backward, "concat")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.stack([p.data for p in parts], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(parts)))

    return _make(out, tuple(parts), backward, "stack")


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    src = a.shape
    if axis is None:
        return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, src),), "sum")
    ax = axis % a.ndim

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax), src),)

    return _make(a.data.sum(axis=ax), (a,), backward, "sum")


# ---------------------------------------------------------------- attention


def softmax(v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along the last axis.

    ``mask`` (same shape, 0/1) excludes entries; masked outputs are exactly 0.
    Every row must keep at least one entry.
    """
    v = as_tensor(v)
    if v.data.size == 0 or v.shape[-1] == 0:
        raise ShapeError("softmax of an empty vector")
    x = v.data
    if mask is None:
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise ShapeError("softmax: a row is fully masked")
        m = np.where(mask, x, -np.inf).max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, x - m, 0.0)), 0.0)
    # sorted summation: the denominator is independent of entry order
    denom = np.sort(e, axis=-1).sum(axis=-1, keepdims=True)
    y = e / denom

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (v,), backward, "softmax")


def topic_scores(u: Tensor, topics: Tensor) -> Tensor:
    """Dot product of every row of ``u`` (..., n) with every topic row (K, n).

    Each score is a separate row reduction, so permuting topics permutes
    scores exactly.
    """
    u, topics = as_tensor(u), as_tensor(topics)
    if topics.ndim != 2 or u.shape[-1] != topics.shape[1]:
        raise ShapeError(f"topic_scores: {u.shape} against topics {topics.shape}")
    U, E = u.data, topics.data
    out = (U[..., None, :] * E).sum(axis=-1)

    def backward(g):
        gu = g @ E
        ge = g.reshape(-1, E.shape[0]).T @ U.reshape(-1, E.shape[1])
        return gu, ge

    return _make(out, (u, topics), backward, "topic_scores")


def topic_mix(alpha: Tensor, topics: Tensor) -> Tensor:
    """Convex combination ``sum_k alpha_k * e_k`` for each row of ``alpha``."""
    alpha, topics = as_tensor(alpha), as_tensor(topics)
    if topics.ndim != 2 or alpha.shape[-1] != topics.shape[0]:
        raise ShapeError(f"topic_mix: weights {alpha.shape} against topics {topics.shape}")
    A, E = alpha.data, topics.data
    terms = A[..., :, None] * E
    out = np.sort(terms, axis=-2).sum(axis=-2)

    def backward(g):
        ga = g @ E.T
        ge = A.reshape(-1, E.shape[0]).T @ g.reshape(-1, E.shape[1])
        return ga, ge

    return _make(out, (alpha, topics), backward, "topic_mix")


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """``-log p[label]`` with probabilities clamped at ``CE_EPS``.

    A 1-D ``probs`` takes a single int label; a 2-D ``probs`` takes one label
    per row and returns the summed loss.
    """
    probs = as_tensor(probs)
    P = probs.data
    if P.ndim == 1:
        lab = np.asarray([labels], dtype=np.int64)
        P2 = P[None, :]
    elif P.ndim == 2:
        lab = np.asarray(labels, dtype=np.int64).reshape(-1)
        P2 = P
        if lab.shape[0] != P.shape[0]:
            raise ShapeError(f"cross_entropy: {lab.shape[0]} labels for {P.shape[0]} rows")
    else:
        raise ShapeError(f"cross_entropy: expected 1-D or 2-D probs, got {P.shape}")
    C = P2.shape[1]
    if np.any(lab < 0) or np.any(lab >= C):
        raise IndexError(f"cross_entropy: label out of range for {C} classes")
    rows = np.arange(P2.shape[0])
    picked = P2[rows, lab]
    clamped = np.maximum(picked, CE_EPS)
    loss = -np.log(clamped).sum()

    def backward(g):
        grad = np.zeros_like(P2)
        live = picked > CE_EPS
        grad[rows[live], lab[live]] = -float(g) / picked[live]
        return (grad.reshape(P.shape),)

    return _make(np.asarray(loss), (probs,), backward, "cross_entropy")


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_tensor: dict[str, float]
    passed: bool
    tol: float

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"grad_check {status}: max rel err {self.max_rel_error:.3e} (tol {self.tol:g})"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-6,
    names: Sequence[str] | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f()`` with central differences.

    ``f`` takes no arguments and reads the current values of ``inputs``
    (which are perturbed in place and restored).
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = f()
    if out.data.size != 1:
        raise ShapeError(f"grad_check: f must be scalar, got shape {out.shape}")
    tape.backward(out)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    names = list(names) if names is not None else [t.name or f"input{i}" for i, t in enumerate(inputs)]
    per_tensor: dict[str, float] = {}
    for name, t, ga in zip(names, inputs, analytic):
        numeric = np.zeros(t.shape)
        for idx in np.ndindex(*t.shape):
            orig = t.data[idx]
            t.data[idx] = orig + step
            fp = f().item()
            t.data[idx] = orig - step
            fm = f().item()
            t.data[idx] = orig
            numeric[idx] = (fp - fm) / (2.0 * step)
        err = relative_error(ga, numeric, floor)
        per_tensor[name] = float(err.max()) if err.size else 0.0
    worst = max(per_tensor.values(), default=0.0)
    return GradCheckReport(worst, per_tensor, worst < tol, tol)
