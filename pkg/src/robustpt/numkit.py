"""Small numerical kit: rank-2 tensors, a reverse-mode tape, labeled RNG streams.

Tensors are plain ``float64`` numpy arrays of rank 2.  A :class:`Tape` records
primitive operations on :class:`Var` nodes and :func:`grad` runs the reverse
sweep.  The primitive set is deliberately closed::

    add, sub, mul, matmul, transpose, tanh, exp, log, square, sum, mean, clamp_max

Everything else (``minimum``, ``clip``, negation, scaling) is composed from it.
"""

from __future__ import annotations

import hashlib
import math
from typing import Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

__all__ = [
    "as_tensor",
    "Tape",
    "Var",
    "grad",
    "add",
    "sub",
    "mul",
    "matmul",
    "transpose",
    "tanh",
    "exp",
    "log",
    "square",
    "sum",
    "mean",
    "clamp_max",
    "neg",
    "scale",
    "minimum",
    "clip",
    "spectral_norm",
    "RngStream",
    "rng_stream",
    "chi_mean",
]


def as_tensor(x) -> np.ndarray:
    """Coerce scalars / vectors / matrices to a rank-2 float64 array.

    Vectors become single rows.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim == 2:
        return a
    raise ShapeError(f"tensors have rank <= 2, got shape {a.shape}")


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


class Var:
    """A node on a tape.  Supports ``+ - * @`` and unary minus."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def _wrap(self, other):
        if isinstance(other, Var):
            return other
        return self.tape.const(other)

    def __add__(self, other):
        return add(self, self._wrap(other))

    def __radd__(self, other):
        return add(self._wrap(other), self)

    def __sub__(self, other):
        return sub(self, self._wrap(other))

    def __rsub__(self, other):
        return sub(self._wrap(other), self)

    def __mul__(self, other):
        if not isinstance(other, Var):
            return scale(self, other) if np.ndim(other) == 0 else mul(self, self._wrap(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, self._wrap(other))

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"


class Tape:
    """Append-only record of primitive operations.

    Each entry is ``(parents, backward)`` where ``backward(adjoint)`` returns one
    adjoint contribution per parent.  Parents always precede their children.
    """

    def __init__(self):
        self.nodes: list[tuple[tuple[int, ...], object]] = []
        self.values: list[np.ndarray] = []
        self.is_leaf: list[bool] = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, value, parents=(), backward=None, leaf=False) -> Var:
        self.nodes.append((tuple(parents), backward))
        self.values.append(value)
        self.is_leaf.append(leaf)
        return Var(value, self, len(self.nodes) - 1)

    def leaf(self, value) -> Var:
        """Differentiable input."""
        return self._push(as_tensor(value).copy(), leaf=True)

    def const(self, value) -> Var:
        """Non-differentiable input (gradient is still reported if asked for)."""
        return self._push(as_tensor(value), leaf=True)


def _check_same_tape(*vs: Var):
    tape = vs[0].tape
    for v in vs[1:]:
        if v.tape is not tape:
            raise ContractError("operands live on different tapes")
    return tape


def _broadcast_shape(sa, sb):
    out = []
    for x, y in zip(sa, sb):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeError(f"cannot broadcast {sa} with {sb}")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def add(a: Var, b: Var) -> Var:
    tape = _check_same_tape(a, b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return tape._push(
        a.value + b.value,
        (a.index, b.index),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a: Var, b: Var) -> Var:
    tape = _check_same_tape(a, b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return tape._push(
        a.value - b.value,
        (a.index, b.index),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a: Var, b: Var) -> Var:
    tape = _check_same_tape(a, b)
    _broadcast_shape(a.shape, b.shape)
    av, bv = a.value, b.value
    return tape._push(
        av * bv,
        (a.index, b.index),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def matmul(a: Var, b: Var) -> Var:
    tape = _check_same_tape(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return tape._push(av @ bv, (a.index, b.index), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Var) -> Var:
    return a.tape._push(a.value.T, (a.index,), lambda g: (g.T,))


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)
    return a.tape._push(y, (a.index,), lambda g: (g * (1.0 - y * y),))


def exp(a: Var) -> Var:
    y = np.exp(a.value)
    return a.tape._push(y, (a.index,), lambda g: (g * y,))


def log(a: Var) -> Var:
    av = a.value
    if np.any(av <= 0):
        raise DomainError("log of non-positive value")
    return a.tape._push(np.log(av), (a.index,), lambda g: (g / av,))


def square(a: Var) -> Var:
    av = a.value
    return a.tape._push(av * av, (a.index,), lambda g: (2.0 * av * g,))


def sum(a: Var, axis: int | None = None) -> Var:  # noqa: A001 - mirrors numpy
    shape = a.shape
    if axis is None:
        y = np.array([[a.value.sum()]])
        return a.tape._push(y, (a.index,), lambda g: (np.broadcast_to(g, shape).copy(),))
    y = a.value.sum(axis=axis, keepdims=True)
    return a.tape._push(y, (a.index,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Var, axis: int | None = None) -> Var:
    shape = a.shape
    n = a.value.size if axis is None else shape[axis]
    if axis is None:
        y = np.array([[a.value.mean()]])
    else:
        y = a.value.mean(axis=axis, keepdims=True)
    return a.tape._push(y, (a.index,), lambda g: (np.broadcast_to(g / n, shape).copy(),))


def clamp_max(a: Var, bound: float) -> Var:
    """``min(a, bound)`` elementwise; zero gradient where ``a > bound``."""
    av = a.value
    y = np.minimum(av, bound)
    keep = (av <= bound).astype(np.float64)
    return a.tape._push(y, (a.index,), lambda g: (g * keep,))


# composites ---------------------------------------------------------------


def scale(a: Var, c: float) -> Var:
    return mul(a, a.tape.const(float(c)))


def neg(a: Var) -> Var:
    return scale(a, -1.0)


def minimum(a: Var, b: Var) -> Var:
    # min(a, b) = b + min(a - b, 0)
    return add(b, clamp_max(sub(a, b), 0.0))


def clip(a: Var, lo: float, hi: float) -> Var:
    # max(min(a, hi), lo) = -min(-min(a, hi), -lo)
    return neg(clamp_max(neg(clamp_max(a, hi)), -lo))


def grad(output: Var, leaves: Sequence[Var]) -> list[np.ndarray]:
    """Reverse sweep from a scalar ``output``; one gradient per leaf.

    Leaves the output does not depend on get zeros.
    """
    if output.shape != (1, 1):
        raise ContractError(f"grad needs a scalar (1, 1) output, got {output.shape}")
    tape = output.tape
    for leaf in leaves:
        if leaf.tape is not tape:
            raise ContractError("leaf belongs to another tape")
    adj: list[np.ndarray | None] = [None] * (output.index + 1)
    adj[output.index] = np.ones((1, 1))
    for i in range(output.index, -1, -1):
        g = adj[i]
        if g is None:
            continue
        parents, backward = tape.nodes[i]
        if backward is None:
            continue
        for p, gp in zip(parents, backward(g)):
            adj[p] = gp if adj[p] is None else adj[p] + gp
    out = []
    for leaf in leaves:
        g = adj[leaf.index] if leaf.index <= output.index else None
        out.append(np.zeros_like(leaf.value) if g is None else np.asarray(g, dtype=np.float64))
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def spectral_norm(m, max_iter: int = 10_000, rtol: float = 1e-12) -> float:
    """Largest singular value by power iteration on ``MᵀM``.

    The start vector is fixed, so results are reproducible bit for bit.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.size == 0:
        raise DomainError("spectral norm of an empty matrix")
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix has non-finite entries")
    if not np.any(m):
        return 0.0
    n = m.shape[1]
    gram = m.T @ m
    # irrational offsets keep the start vector off any axis-aligned null space
    v = 1.0 + np.modf(np.arange(1, n + 1) * 0.6180339887498949)[0]
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
        new = float(v @ gram @ v)
        if est > 0 and abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    return math.sqrt(max(est, 0.0))


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


def _label_words(label) -> tuple[int, ...]:
    if isinstance(label, (bool, np.bool_)):
        raise TypeError("boolean labels are ambiguous; use int or str")
    if isinstance(label, (int, np.integer)):
        v = int(label)
        return (0, v & 0xFFFFFFFF, (v >> 32) & 0xFFFFFFFF, 1 if v < 0 else 0)
    if isinstance(label, str):
        h = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
        lo = int.from_bytes(h[:4], "little")
        hi = int.from_bytes(h[4:], "little")
        return (1, lo, hi, 0)
    raise TypeError(f"labels must be int or str, got {type(label).__name__}")


class RngStream:
    """Deterministic random stream identified by ``(seed, labels)``.

    Backed by numpy's PCG64 seeded through ``SeedSequence`` with the label path
    folded into the spawn key, so distinct paths are independent and drawing
    from one stream never touches another.
    """

    def __init__(self, seed: int, labels: Sequence = ()):
        self.seed = int(seed)
        self.labels = tuple(labels)
        words: list[int] = []
        for lab in self.labels:
            words.extend(_label_words(lab))
        ss = np.random.SeedSequence(entropy=self.seed & ((1 << 64) - 1), spawn_key=tuple(words))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *labels) -> "RngStream":
        return RngStream(self.seed, self.labels + tuple(labels))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def integers(self, low, high, size=None):
        """Integers in ``[low, high)``."""
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def unit_sphere(self, n: int, d: int) -> np.ndarray:
        """``n`` rows uniform on the unit sphere in R^d."""
        z = self._gen.standard_normal((n, d))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        # measure-zero event; redraw keeps the contract
        while np.any(norms == 0):
            bad = norms[:, 0] == 0
            z[bad] = self._gen.standard_normal((int(bad.sum()), d))
            norms = np.linalg.norm(z, axis=1, keepdims=True)
        return z / norms

    def __repr__(self):
        return f"RngStream(seed={self.seed}, labels={list(self.labels)})"


def rng_stream(seed: int, labels: Sequence = ()) -> RngStream:
    return RngStream(seed, labels)


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------


def chi_mean(d: int, sigma: float) -> float:
    """E‖ξ‖ for ξ ~ N(0, σ² I_d): σ·√2·Γ((d+1)/2)/Γ(d/2)."""
    if int(d) != d or d < 1:
        raise DomainError(f"dimension must be a positive integer, got {d}")
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    d = int(d)
    return sigma * math.sqrt(2.0) * math.exp(math.lgamma((d + 1) / 2.0) - math.lgamma(d / 2.0))
