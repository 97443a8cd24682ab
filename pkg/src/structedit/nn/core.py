"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the editor needs are provided.  Each op builds a
:class:`Tensor` that remembers its parents and a closure that pushes the
output gradient back into them; :meth:`Tensor.backward` runs the closures in
reverse topological order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "parents", "_back", "requires_grad", "name")

    def __init__(self, data, parents: Sequence["Tensor"] = (), back: Optional[Callable] = None,
                 requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self._back = back
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}{', ' + self.name if self.name else ''})"

    def _acc(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Accumulate gradients of this (usually scalar) tensor into all leaves."""
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._acc(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(order):
            if node._back is not None and node.grad is not None:
                node._back(node.grad)
                if node.parents:
                    node.grad = None  # free interior buffers

    # sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(as_tensor(o), self)

    def __sub__(self, o):
        return sub(self, o)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(as_tensor(o), self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        a._acc(_unbroadcast(g, a.shape))
        b._acc(_unbroadcast(g, b.shape))
    return Tensor(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        a._acc(_unbroadcast(g, a.shape))
        b._acc(_unbroadcast(-g, b.shape))
    return Tensor(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._acc(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(g * a.data, b.shape))
    return Tensor(a.data * b.data, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._acc(g @ b.data.T)
        if b.requires_grad:
            b._acc(a.data.T @ g)
    return Tensor(a.data @ b.data, (a, b), back)


def spmm(m: sp.spmatrix, a) -> Tensor:
    """Constant sparse matrix times a dense tensor."""
    a = as_tensor(a)
    m = sp.csr_matrix(m)

    def back(g):
        a._acc(m.T @ g)
    return Tensor(m @ a.data, (a,), back)


def tanh(a) -> Tensor:
    y = np.tanh(a.data)

    def back(g):
        a._acc(g * (1.0 - y * y))
    return Tensor(y, (a,), back)


def sigmoid(a) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def back(g):
        a._acc(g * y * (1.0 - y))
    return Tensor(y, (a,), back)


def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(ts, np.split(g, cuts, axis=axis)):
            t._acc(piece)
    return Tensor(np.concatenate([t.data for t in ts], axis=axis), ts, back)


def cols(a, start: int, stop: int) -> Tensor:
    """Column slice ``a[:, start:stop]``."""

    def back(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        a._acc(full)
    return Tensor(a.data[:, start:stop], (a,), back)


def take(a, idx) -> Tensor:
    """Row gather ``a[idx]``; repeated indices accumulate in the gradient."""
    if not isinstance(idx, (int, np.integer, slice)):
        idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        if isinstance(idx, np.ndarray) and idx.size > 64 and a.data.ndim == 2:
            m = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(a.shape[0], idx.size))
            a._acc(m @ g)
            return
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._acc(full)
    return Tensor(a.data[idx], (a,), back)


def flatten(a) -> Tensor:
    def back(g):
        a._acc(g.reshape(a.shape))
    return Tensor(a.data.reshape(-1), (a,), back)


def rowdot(a, b) -> Tensor:
    """Row-wise inner product of two ``(n, d)`` tensors."""

    def back(g):
        g = g[:, None]
        if a.requires_grad:
            a._acc(g * b.data)
        if b.requires_grad:
            b._acc(g * a.data)
    return Tensor(np.einsum("ij,ij->i", a.data, b.data), (a, b), back)


def total(a) -> Tensor:
    def back(g):
        a._acc(np.broadcast_to(g, a.shape))
    return Tensor(a.data.sum(), (a,), back)


def scale(a, c: float) -> Tensor:
    def back(g):
        a._acc(g * c)
    return Tensor(a.data * c, (a,), back)


def segment_mean(m_rows: np.ndarray, n_segments: int, a) -> Tensor:
    """Mean of the rows of ``a`` grouped by ``m_rows`` (segment id per row)."""
    m_rows = np.asarray(m_rows)
    counts = np.bincount(m_rows, minlength=n_segments).astype(DTYPE)
    w = 1.0 / np.maximum(counts, 1.0)
    mat = sp.csr_matrix((w[m_rows], (m_rows, np.arange(len(m_rows)))), shape=(n_segments, len(m_rows)))
    return spmm(mat, a)


def segment_nll(scores, segments: np.ndarray, gold: np.ndarray, n_segments: int) -> Tensor:
    """Summed negative log-likelihood of a batch of ragged softmaxes.

    ``scores`` is a flat vector of candidate logits, ``segments[i]`` names the
    softmax that candidate ``i`` belongs to and ``gold[k]`` is the flat index
    of the correct candidate of softmax ``k``.
    """
    s = scores.data
    segments = np.asarray(segments, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    mx = np.full(n_segments, -np.inf)
    np.maximum.at(mx, segments, s)
    e = np.exp(s - mx[segments])
    z = np.bincount(segments, weights=e, minlength=n_segments)
    lse = mx + np.log(z)
    loss = float((lse - s[gold]).sum())
    p = e / z[segments]

    def back(g):
        d = p.copy()
        np.subtract.at(d, gold, 1.0)
        scores._acc(g * d)
    return Tensor(loss, (scores,), back)


def segment_log_softmax(scores: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    """Non-differentiable ragged log-softmax (used at inference)."""
    segments = np.asarray(segments, dtype=np.int64)
    mx = np.full(n_segments, -np.inf)
    np.maximum.at(mx, segments, scores)
    e = np.exp(scores - mx[segments])
    z = np.bincount(segments, weights=e, minlength=n_segments)
    return scores - mx[segments] - np.log(z[segments])


@dataclass
class GradReport:
    """Worst relative error per checked parameter."""
    per_param: dict = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values(), default=0.0)

    def __bool__(self):
        return bool(self.per_param)


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5, tol: float = 1e-4,
               max_coords: int = 64, floor: float = 1e-4, rng: Optional[np.random.Generator] = None) -> GradReport:
    """Compare reverse-mode gradients of the scalar ``fn()`` against central
    differences.

    Every coordinate is checked for parameters with at most ``max_coords``
    entries, a random subset of that size otherwise.  The relative error is
    ``|numeric - analytic| / max(|numeric|, |analytic|, floor)``; the floor
    keeps round-off on near-zero gradients from dominating.  ``tol`` is only
    recorded on the report for callers.
    """
    rng = rng or np.random.default_rng(0)
    report = GradReport()
    report.tol = tol
    if not params:
        return report
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [None if p.grad is None else p.grad.copy() for p in params]
    for k, (p, ga) in enumerate(zip(params, analytic)):
        flat = p.data.reshape(-1)
        coords = range(flat.size) if flat.size <= max_coords else rng.choice(flat.size, max_coords, replace=False)
        worst = 0.0
        for c in coords:
            old = flat[c]
            flat[c] = old + h
            up = float(fn().data)
            flat[c] = old - h
            down = float(fn().data)
            flat[c] = old
            num = (up - down) / (2 * h)
            ana = 0.0 if ga is None else float(ga.reshape(-1)[c])
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), floor))
        report.per_param[p.name or f"param{k}"] = worst
    for p in params:
        p.grad = None
    return report
