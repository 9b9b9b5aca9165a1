"""Dense float64 numerics: seeded RNG, stable softmax/KL, a minimal
reverse-mode tape with hand-derived gradients, a finite-difference gradient
checker, and plain SGD/Adam update rules.

Everything is numpy float64 and single-threaded; determinism for a fixed seed
is part of the contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, EvaluationError, ShapeError

Array = np.ndarray

KL_FLOOR = 1e-12  # clamp on q before the log so near-deterministic pairs stay finite


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical stream for identical seeds."""
    return np.random.default_rng(int(seed))


# ---------------------------------------------------------------------------
# plain array ops
# ---------------------------------------------------------------------------


def softmax(v: Array) -> Array:
    """Numerically stable softmax of a 1-D vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise DomainError("softmax of an empty vector")
    if not np.all(np.isfinite(v)):
        raise DomainError("softmax input must be finite")
    e = np.exp(v - np.max(v))
    return e / e.sum()


def softmax_rows(m: Array) -> Array:
    m = np.asarray(m, dtype=np.float64)
    e = np.exp(m - m.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def kl_div(p: Array, q: Array, floor: float = KL_FLOOR) -> float:
    """KL(p || q) for distributions on the simplex, with 0*log(0) = 0.

    q is clamped at ``floor`` before the log so that a zero coordinate in q
    yields a large but finite divergence.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"kl_div shapes {p.shape} vs {q.shape}")
    if np.any(p < -1e-12) or np.any(q < -1e-12):
        raise DomainError("kl_div arguments must be non-negative")
    if abs(p.sum() - 1.0) > 1e-9 or abs(q.sum() - 1.0) > 1e-9:
        raise DomainError("kl_div arguments must sum to 1")
    p = np.clip(p, 0.0, None)
    mask = p > 0.0
    qc = np.maximum(q[mask], floor)
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(qc))))


# ---------------------------------------------------------------------------
# reverse-mode tape
# ---------------------------------------------------------------------------


class Var:
    """A node in the computation graph: a float64 array plus, after
    ``backward``, the gradient of the root scalar with respect to it.

    Parents are stored as ``(parent, pull)`` pairs where ``pull(g)`` maps the
    node's incoming gradient to the parent's contribution.
    """

    __slots__ = ("value", "grad", "_parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self._parents = parents

    @property
    def shape(self):
        return self.value.shape

    def backward(self) -> None:
        if self.value.size != 1:
            raise ShapeError("backward requires a scalar root")
        topo: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                stack.append((parent, False))
        for node in topo:
            node.grad = np.zeros_like(node.value)
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            for parent, pull in node._parents:
                parent.grad += pull(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Sum gradient g down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value + b.value
    return Var(out, (
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    ))


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value - b.value
    return Var(out, (
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(-g, b.value.shape)),
    ))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value * b.value
    return Var(out, (
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    ))


def scale(a, c: float) -> Var:
    a = as_var(a)
    return Var(a.value * c, ((a, lambda g: g * c),))


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul {a.value.shape} @ {b.value.shape}")
    out = a.value @ b.value
    return Var(out, (
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    ))


def matmul_t(a, b) -> Var:
    """a @ b.T without materializing the transpose on the tape."""
    a, b = as_var(a), as_var(b)
    if a.value.shape[-1] != b.value.shape[-1]:
        raise ShapeError(f"matmul_t {a.value.shape} vs {b.value.shape}")
    out = a.value @ b.value.T
    return Var(out, (
        (a, lambda g: g @ b.value),
        (b, lambda g: g.T @ a.value),
    ))


def affine(x, w, b) -> Var:
    """x @ w + b with b broadcast over rows."""
    x, w, b = as_var(x), as_var(w), as_var(b)
    if x.value.shape[-1] != w.value.shape[0]:
        raise ShapeError(f"affine input width {x.value.shape} vs weight {w.value.shape}")
    if b.value.reshape(-1).shape[0] != w.value.shape[1]:
        raise ShapeError(f"affine bias {b.value.shape} vs weight {w.value.shape}")
    return add(matmul(x, w), reshape(b, (1, w.value.shape[1])))


def relu(a) -> Var:
    a = as_var(a)
    mask = a.value > 0.0
    return Var(a.value * mask, ((a, lambda g: g * mask),))


def reshape(a, shape) -> Var:
    a = as_var(a)
    orig = a.value.shape
    return Var(a.value.reshape(shape), ((a, lambda g: g.reshape(orig)),))


def sum_all(a) -> Var:
    a = as_var(a)
    return Var(np.asarray(a.value.sum()), ((a, lambda g: np.broadcast_to(g, a.value.shape).copy()),))


def mean_all(a) -> Var:
    a = as_var(a)
    n = a.value.size
    return Var(np.asarray(a.value.mean()), ((a, lambda g: np.broadcast_to(g / n, a.value.shape).copy()),))


def log_floor(a, floor: float = KL_FLOOR) -> Var:
    """log(max(a, floor)); gradient is zero on the clamped region."""
    a = as_var(a)
    clamped = np.maximum(a.value, floor)
    active = a.value > floor
    return Var(np.log(clamped), ((a, lambda g: g * active / clamped),))


def gather_2d(a, rows: Array, cols: Array) -> Var:
    """Pick a[rows[i], cols[i]] into a 1-D vector."""
    a = as_var(a)
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    out = a.value[rows, cols]

    def pull(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, (rows, cols), g)
        return ga

    return Var(out, ((a, pull),))


def dot_last(a, w) -> Var:
    """Contract the last axis of a with vector w: (..., d) x (d,) -> (...)."""
    a, w = as_var(a), as_var(w)
    if a.value.shape[-1] != w.value.shape[0]:
        raise ShapeError(f"dot_last {a.value.shape} vs {w.value.shape}")
    out = a.value @ w.value
    return Var(out, (
        (a, lambda g: g[..., None] * w.value),
        (w, lambda g: np.tensordot(g, a.value, axes=(range(g.ndim), range(g.ndim)))),
    ))


def masked_softmax(logits, keep: Array) -> Var:
    """Softmax over the last axis restricted to ``keep``; masked-out entries
    get exact weight 0. Every row must keep at least one entry.
    """
    logits = as_var(logits)
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != logits.value.shape:
        raise ShapeError("mask shape mismatch")
    if not keep.any(axis=-1).all():
        raise DomainError("masked_softmax: a row has no surviving entries")
    masked = np.where(keep, logits.value, -np.inf)
    e = np.exp(masked - masked.max(axis=-1, keepdims=True))
    alpha = e / e.sum(axis=-1, keepdims=True)

    def pull(g):
        return alpha * (g - (g * alpha).sum(axis=-1, keepdims=True))

    return Var(alpha, ((logits, pull),))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(build_loss: Callable[[], Var], params: Sequence[Var], h: float = 1e-5) -> float:
    """Max relative error |analytic - central difference| / max(1, |analytic|)
    over all coordinates of ``params``.

    ``build_loss`` must rebuild the scalar loss from the params' current
    values on every call.
    """
    if not (1e-7 <= h <= 1e-4):
        raise DomainError(f"step {h} outside [1e-7, 1e-4]")
    root = build_loss()
    if not np.isfinite(root.value):
        raise EvaluationError("loss is non-finite at the evaluation point")
    root.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value)
                for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(build_loss().value)
            flat[i] = orig - h
            fm = float(build_loss().value)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise EvaluationError("loss is non-finite near the evaluation point")
            numeric = (fp - fm) / (2.0 * h)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


def sgd_step(theta: Array, g: Array, lr: float) -> Array:
    if theta.shape != g.shape:
        raise ShapeError(f"sgd_step shapes {theta.shape} vs {g.shape}")
    if lr <= 0:
        raise DomainError("lr must be positive")
    return theta - lr * g


@dataclass
class AdamState:
    m: Array
    v: Array
    t: int = 0

    @classmethod
    def like(cls, theta: Array) -> "AdamState":
        return cls(m=np.zeros_like(theta), v=np.zeros_like(theta))


def adam_step(theta: Array, g: Array, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    if theta.shape != g.shape:
        raise ShapeError(f"adam_step shapes {theta.shape} vs {g.shape}")
    if lr <= 0:
        raise DomainError("lr must be positive")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m=m, v=v, t=t)


class Adam:
    """In-place Adam over a list of parameter Vars (reads their .grad)."""

    def __init__(self, params: Sequence[Var], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = [AdamState.like(p.value) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            new, self.state[i] = adam_step(
                p.value, p.grad, self.state[i],
                lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)
            p.value[...] = new
