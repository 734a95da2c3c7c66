"""A small tape-based reverse-mode differentiation engine on numpy arrays.

Only the kernels the attention model needs are provided. Sparse tensors
store one value per entry of a fixed :class:`Pattern`; their gradients live on
the same pattern. Relation-specific quantities are stacked along a leading
axis of length ``P`` so that every relation is processed by one kernel call.

Usage::

    with Tape() as tape:
        loss = ad.sum(ad.matmul(x, w))
    backward(tape, loss)
    w.grad
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

_active: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("active_tape", default=None)

_EDGE_CHUNK = 1 << 12


class AutodiffError(RuntimeError):
    pass


class Pattern:
    """Row-compressed sparsity pattern of an ``n_rows x n_cols`` matrix."""

    def __init__(self, indptr, indices, shape):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.shape = tuple(shape)
        self.rows = np.repeat(np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr))
        self._nonempty = np.diff(self.indptr) > 0

    @classmethod
    def from_csr(cls, m: sp.csr_matrix) -> "Pattern":
        m = m.tocsr()
        m.sort_indices()
        return cls(m.indptr, m.indices, m.shape)

    @classmethod
    def block_diagonal(cls, masks) -> "Pattern":
        """Stack equally sized square masks into one block-diagonal pattern."""
        return cls.from_csr(sp.block_diag([m.tocsr() for m in masks], format="csr"))

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def matrix(self, values: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((values, self.indices, self.indptr), shape=self.shape)

    def row_sum(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.rows, weights=values, minlength=self.shape[0])

    def row_max(self, values: np.ndarray) -> np.ndarray:
        out = np.full(self.shape[0], -np.inf, dtype=values.dtype)
        if values.size:
            out[self._nonempty] = np.maximum.reduceat(values, self.indptr[:-1][self._nonempty])
        return out

    def dense(self, values: np.ndarray) -> np.ndarray:
        return self.matrix(values).toarray()


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "pattern", "name")

    def __init__(self, value, requires_grad: bool = False, pattern: Pattern | None = None, name: str = ""):
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.pattern = pattern
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        kind = "sparse" if self.pattern is not None else "dense"
        return f"Tensor({self.name or '?'}, {kind}, shape={self.shape})"


def param(value, name: str = "") -> Tensor:
    return Tensor(np.array(value, dtype=np.result_type(value, np.float32)), requires_grad=True, name=name)


def constant(value, pattern: Pattern | None = None) -> Tensor:
    return Tensor(value, pattern=pattern)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], tuple]


@dataclass
class Tape:
    records: list[_Record] = field(default_factory=list)
    consumed: bool = False
    _token: object = None

    def __enter__(self) -> "Tape":
        self._token = _active.set(self)
        return self

    def __exit__(self, *exc):
        _active.reset(self._token)
        return False

    def leaves(self) -> list[Tensor]:
        produced = {id(r.out) for r in self.records}
        seen: dict[int, Tensor] = {}
        for r in self.records:
            for t in r.inputs:
                if t.requires_grad and id(t) not in produced:
                    seen.setdefault(id(t), t)
        return list(seen.values())


def _emit(value, inputs, backward_fn, pattern: Pattern | None = None) -> Tensor:
    tape = _active.get()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=track, pattern=pattern)
    if track:
        tape.records.append(_Record(out, tuple(inputs), backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from ``loss`` on ``tape``."""
    if loss.value.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise AutodiffError("tape already consumed: double backward is not supported")
    tape.consumed = True
    for r in tape.records:
        r.out.grad = None
        for t in r.inputs:
            t.grad = None
    loss.grad = np.ones_like(loss.value)
    for r in reversed(tape.records):
        g = r.out.grad
        if g is None:
            continue
        for t, gi in zip(r.inputs, r.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            t.grad = gi if t.grad is None else t.grad + gi
    for leaf in tape.leaves():
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.value)


# dense algebra ---------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise AutodiffError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _emit(a.value + b.value, (a, b), lambda g: (g, g), a.pattern)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise AutodiffError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av), a.pattern)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` broadcast along every axis but the last."""
    if x.shape[-1:] != b.shape:
        raise AutodiffError(f"add_bias: bias {b.shape} does not match {x.shape}")
    axes = tuple(range(x.value.ndim - 1))
    return _emit(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=axes)))


def sum(x: Tensor) -> Tensor:  # noqa: A001
    return _emit(np.asarray(x.value.sum()), (x,), lambda g: (np.full_like(x.value, g),))


def l2norm(x: Tensor) -> Tensor:
    n = np.sqrt((x.value ** 2).sum())
    return _emit(np.asarray(n), (x,), lambda g: (g * x.value / n,))


def scale(x: Tensor, c: float) -> Tensor:
    return _emit(x.value * c, (x,), lambda g: (g * c,), x.pattern)


# elementwise nonlinearities (sparse tensors keep their pattern) ----------------

def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xv = x.value
    out = np.maximum(xv, 0)
    out += slope * np.minimum(xv, 0)
    # derivative: 1 above zero, slope at or below
    d = (xv > 0).astype(xv.dtype)
    d *= 1 - slope
    d += slope
    return _emit(out, (x,), lambda g: (g * d,), x.pattern)


def elu(x: Tensor) -> Tensor:
    xv = x.value
    # expm1(min(x, 0)) + 1 is the derivative on both sides of zero
    neg = np.expm1(np.minimum(xv, 0))
    out = np.maximum(xv, 0)
    out += neg

    def bw(g):
        gi = neg + 1
        gi *= g
        return (gi,)

    return _emit(out, (x,), bw, x.pattern)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.value)

    def bw(g):
        d = out * out
        np.subtract(1, d, out=d)
        d *= g
        return (d,)

    return _emit(out, (x,), bw, x.pattern)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the sampled keep-mask is stored for an exact backward."""
    if rate <= 0:
        return x
    if rate >= 1:
        raise AutodiffError("dropout rate must be < 1")
    keep = (rng.random(x.shape) >= rate) * np.asarray(1 / (1 - rate), dtype=x.value.dtype)
    return _emit(x.value * keep, (x,), lambda g: (g * keep,), x.pattern)


def softmax(x: Tensor) -> Tensor:
    """Softmax of a vector."""
    if x.value.ndim != 1:
        raise AutodiffError("softmax expects a vector")
    e = np.exp(x.value - x.value.max())
    s = e / e.sum()
    return _emit(s, (x,), lambda g: (s * (g - (g * s).sum()),))


# relation-stacked kernels -------------------------------------------------------

def relation_linear(x: Tensor, w: Tensor) -> Tensor:
    """Per-relation projection: ``x (n, d)`` and ``w (P, d, h)`` give ``(P, n, h)``."""
    xv, wv = x.value, w.value
    if xv.ndim != 2 or wv.ndim != 3 or wv.shape[1] != xv.shape[1]:
        raise AutodiffError(f"relation_linear: shapes {xv.shape} and {wv.shape} do not align")
    P, d, h = wv.shape
    n = xv.shape[0]
    wcat = wv.transpose(1, 0, 2).reshape(d, P * h)
    out = (xv @ wcat).reshape(n, P, h).transpose(1, 0, 2)

    def bw(g):
        gcat = g.transpose(1, 0, 2).reshape(n, P * h)
        gx = gcat @ wcat.T
        gw = (xv.T @ gcat).reshape(d, P, h).transpose(1, 0, 2)
        return gx, gw

    return _emit(np.ascontiguousarray(out), (x, w), bw)


def shared_linear(z: Tensor, f: Tensor) -> Tensor:
    """Apply one ``(h, q)`` matrix to every relation slice of ``z (P, n, h)``."""
    zv, fv = z.value, f.value
    P, n, h = zv.shape
    flat = zv.reshape(P * n, h)
    out = (flat @ fv).reshape(P, n, fv.shape[1])

    def bw(g):
        g2 = g.reshape(P * n, -1)
        return (g2 @ fv.T).reshape(P, n, h), flat.T @ g2

    return _emit(out, (z, f), bw)


def vector_dot(t: Tensor, q: Tensor) -> Tensor:
    """Contract the last axis with a vector: ``(..., q) . (q,)``."""
    tv, qv = t.value, q.value
    axes = tuple(range(tv.ndim - 1))
    return _emit(tv @ qv, (t, q), lambda g: (g[..., None] * qv, np.tensordot(g, tv, axes=(axes, axes))))


def attention_logits(hw: Tensor, a: Tensor, pattern: Pattern) -> Tensor:
    """Unnormalised pair scores on every pattern entry.

    For stacked row ``p*n + i`` and column ``p*n + j`` the score is
    ``a[p, :h] . hw[p, i] + a[p, h:] . hw[p, j]``, the split form of
    ``a_p . [hw_i || hw_j]``.
    """
    hv, av = hw.value, a.value
    P, n, h = hv.shape
    if av.shape != (P, 2 * h):
        raise AutodiffError(f"attention_logits: attention vectors {av.shape}, expected {(P, 2 * h)}")
    if pattern.shape != (P * n, P * n):
        raise AutodiffError(f"attention_logits: pattern {pattern.shape} does not match {P} x {n} vertices")
    a1, a2 = av[:, :h], av[:, h:]
    s_src = np.matmul(hv, a1[:, :, None]).reshape(-1)
    s_dst = np.matmul(hv, a2[:, :, None]).reshape(-1)
    out = s_src[pattern.rows] + s_dst[pattern.indices]

    def bw(g):
        gs = np.bincount(pattern.rows, weights=g, minlength=P * n)
        gd = np.bincount(pattern.indices, weights=g, minlength=P * n)
        gsd = np.stack([gs, gd], axis=1).astype(hv.dtype, copy=False).reshape(P, n, 2)
        ghw = np.matmul(gsd, av.reshape(P, 2, h))
        ga = np.matmul(gsd.transpose(0, 2, 1), hv).reshape(P, 2 * h)
        return ghw, ga

    return _emit(out, (hw, a), bw, pattern)


def masked_softmax(e: Tensor) -> Tensor:
    """Row-wise softmax over the entries of a sparse tensor (max-shifted)."""
    pat = e.pattern
    if pat is None:
        raise AutodiffError("masked_softmax needs a sparse tensor")
    ev = e.value
    shifted = np.exp(ev - pat.row_max(ev)[pat.rows])
    alpha = shifted / pat.row_sum(shifted)[pat.rows]
    alpha = alpha.astype(ev.dtype, copy=False)

    def bw(g):
        inner = pat.row_sum(alpha * g)
        return ((alpha * (g - inner[pat.rows])).astype(ev.dtype, copy=False),)

    return _emit(alpha, (e,), bw, pat)


def spmm(alpha: Tensor, hw: Tensor) -> Tensor:
    """Sparse (stacked block-diagonal) times the stacked dense ``(P, n, h)``."""
    pat = alpha.pattern
    hv = hw.value
    P, n, h = hv.shape
    flat = hv.reshape(P * n, h)
    A = pat.matrix(alpha.value)
    out = (A @ flat).reshape(P, n, h)

    def bw(g):
        g2 = g.reshape(P * n, h)
        ghw = (A.T @ g2).reshape(P, n, h)
        ga = np.empty(pat.nnz, dtype=hv.dtype)
        for s in range(0, pat.nnz, _EDGE_CHUNK):
            sl = slice(s, s + _EDGE_CHUNK)
            ga[sl] = np.einsum("eh,eh->e", g2[pat.rows[sl]], flat[pat.indices[sl]])
        return ga, ghw

    return _emit(out, (alpha, hw), bw)


def row_mean(s: Tensor, rows: np.ndarray | None = None) -> Tensor:
    """Mean of ``s (P, n)`` over vertices (optionally a subset) giving ``(P,)``."""
    sv = s.value
    if rows is None:
        m = sv.shape[1]

        def bw(g):
            return (np.repeat(g[:, None] / m, m, axis=1).astype(sv.dtype, copy=False),)

        return _emit(sv.mean(axis=1), (s,), bw)
    rows = np.asarray(rows)
    m = len(rows)

    def bw_sub(g):
        out = np.zeros_like(sv)
        out[:, rows] = g[:, None] / m
        return (out,)

    return _emit(sv[:, rows].mean(axis=1), (s,), bw_sub)


def weighted_sum(z: Tensor, beta: Tensor) -> Tensor:
    """``sum_p beta[p] * z[p]`` for ``z (P, n, h)``."""
    zv, bv = z.value, beta.value
    out = np.tensordot(bv, zv, axes=(0, 0))

    def bw(g):
        return bv[:, None, None] * g[None], np.tensordot(zv, g, axes=([1, 2], [0, 1]))

    return _emit(out, (z, beta), bw)


def cross_entropy(logits: Tensor, targets: np.ndarray, index: np.ndarray, reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy of ``logits[index]`` against integer ``targets``."""
    index = np.asarray(index, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if len(index) == 0:
        raise AutodiffError("cross_entropy: empty index set")
    if reduction not in ("mean", "sum"):
        raise AutodiffError(f"cross_entropy: unknown reduction {reduction!r}")
    z = logits.value[index]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    nll = -logp[np.arange(len(index)), targets]
    denom = len(index) if reduction == "mean" else 1
    out = np.asarray(nll.sum() / denom)

    def bw(g):
        p = np.exp(logp)
        p[np.arange(len(index)), targets] -= 1
        full = np.zeros_like(logits.value)
        np.add.at(full, index, p * (g / denom))
        return (full,)

    return _emit(out, (logits,), bw)


# gradient checking --------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(v < self.tol for v in self.max_rel_error.values())

    def __str__(self):
        lines = [f"{k:>12s}  max rel err {v:.3e}  {'ok' if v < self.tol else 'FAIL'}"
                 for k, v in self.max_rel_error.items()]
        return "\n".join(lines)


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-4,
               tol: float = 1e-4, floor: float = 1e-6) -> GradCheckReport:
    """Compare taped gradients of scalar ``f()`` with central differences.

    Relative error per entry is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    ``f`` must be deterministic (no dropout).
    """
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    errors = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.value) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        nflat = numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = float(f().value)
            flat[k] = orig - eps
            down = float(f().value)
            flat[k] = orig
            nflat[k] = (up - down) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        errors[name] = float((np.abs(analytic - numeric) / denom).max()) if flat.size else 0.0
    return GradCheckReport(errors, tol)
