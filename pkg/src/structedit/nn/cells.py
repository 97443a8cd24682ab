"""Recurrent cells and a ragged-batch LSTM scan."""
from __future__ import annotations

import numpy as np

from .core import Tensor, add, cols, concat, mul, sigmoid, sub, take, tanh
from .params import ParamStore


class GRUCell:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_hidden: int):
        self.n = n_hidden
        self.W = store.matrix(f"{name}.W", n_in, 3 * n_hidden)
        self.U = store.matrix(f"{name}.U", n_hidden, 2 * n_hidden)
        self.Uh = store.matrix(f"{name}.Uh", n_hidden, n_hidden)
        self.b = store.bias(f"{name}.b", 3 * n_hidden)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        n = self.n
        xw = add(x @ self.W, self.b)
        hu = h @ self.U
        z = sigmoid(add(cols(xw, 0, n), cols(hu, 0, n)))
        r = sigmoid(add(cols(xw, n, 2 * n), cols(hu, n, 2 * n)))
        cand = tanh(add(cols(xw, 2 * n, 3 * n), mul(r, h) @ self.Uh))
        return add(h, mul(z, sub(cand, h)))


class LSTMCell:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_hidden: int):
        self.n = n_hidden
        self.Wx = store.matrix(f"{name}.Wx", n_in, 4 * n_hidden)
        self.Wh = store.matrix(f"{name}.Wh", n_hidden, 4 * n_hidden)
        self.b = store.bias(f"{name}.b", 4 * n_hidden)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor):
        n = self.n
        gates = add(add(x @ self.Wx, h @ self.Wh), self.b)
        i = sigmoid(cols(gates, 0, n))
        f = sigmoid(cols(gates, n, 2 * n))
        o = sigmoid(cols(gates, 2 * n, 3 * n))
        g = tanh(cols(gates, 3 * n, 4 * n))
        c2 = add(mul(f, c), mul(i, g))
        return mul(o, tanh(c2)), c2


class RaggedLayout:
    """Time-major layout of a batch of variable-length sequences.

    Sequences are sorted by decreasing length so the sequences still running at
    step ``t`` form a prefix of that order.  ``row(i, t)`` is the output row of
    sequence ``i`` at step ``t``.
    """

    def __init__(self, lengths):
        self.lengths = np.asarray(lengths, dtype=np.int64)
        if (self.lengths <= 0).any():
            raise ValueError("sequences must be non-empty")
        self.order = np.argsort(-self.lengths, kind="stable")
        self.rank = np.empty_like(self.order)
        self.rank[self.order] = np.arange(len(self.order))
        self.tmax = int(self.lengths.max()) if len(self.lengths) else 0
        self.active = [int((self.lengths > t).sum()) for t in range(self.tmax)]
        self.offsets = np.concatenate([[0], np.cumsum(self.active)]).astype(np.int64)

    def row(self, i, t):
        return self.offsets[t] + self.rank[i]

    def rows_at(self, t):
        """Sequence ids active at step ``t`` in layout order."""
        return self.order[: self.active[t]]

    @property
    def size(self):
        return int(self.offsets[-1])


def lstm_scan(cell: LSTMCell, inputs: Tensor, layout: RaggedLayout, input_row, reverse=False) -> Tensor:
    """Run ``cell`` over every sequence.

    ``input_row(i, t)`` gives the row of ``inputs`` fed to sequence ``i`` at
    step ``t``.  With ``reverse`` each sequence is read back to front, so its
    step ``t`` consumes element ``len_i - 1 - t``.  Returns outputs laid out by
    ``layout.row``.
    """
    outs = []
    h = c = None
    for t in range(layout.tmax):
        ids = layout.rows_at(t)
        n = len(ids)
        src = [input_row(i, (layout.lengths[i] - 1 - t) if reverse else t) for i in ids]
        x = take(inputs, src)
        if h is None:
            h = c = Tensor(np.zeros((n, cell.n)))
        elif h.shape[0] != n:
            h, c = take(h, slice(0, n)), take(c, slice(0, n))
        h, c = cell(x, h, c)
        outs.append(h)
    return concat(outs, axis=0)
