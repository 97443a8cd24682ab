"""Built-in verification: gradient checks and an oracle-equivalence smoke test."""
from __future__ import annotations

import random
import time
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import nn
from .nn import Tensor


def _op_programs(rng: np.random.Generator) -> dict:
    """name -> (loss function, parameters) covering every differentiable op."""
    store = nn.ParamStore(rng)
    A = store.matrix("A", 4, 5)
    B = store.matrix("B", 5, 3)
    C = store.matrix("C", 4, 5)
    v = store.bias("v", 5)
    w = store.matrix("w", 6, 3)
    sm = sp.random(4, 4, density=0.5, random_state=int(rng.integers(1 << 30)), format="csr")
    gru = nn.GRUCell(store, "gru", 3, 4)
    lstm = nn.LSTMCell(store, "lstm", 3, 4)
    x = store.matrix("x", 3, 3)
    h0 = store.matrix("h0", 3, 4)
    seqs = store.matrix("seqs", 6, 3)
    layout = nn.RaggedLayout([3, 1, 2])
    starts = [0, 3, 4]
    weights = Tensor(rng.normal(size=(4, 5)))

    wt = {k: Tensor(rng.normal(size=s)) for k, s in
          (("mm", (4, 3)), ("cat", (4, 8)), ("cols", (4, 2)), ("take", (5, 5)), ("row", (4,)),
           ("gru", (3, 4)), ("lstm", (3, 4)), ("scan", (6, 4)), ("seg", (2, 5)), ("flat", (12,)))}

    def lin(t, key):
        return nn.total(nn.mul(t, wt[key]))

    scores = store.bias("scores", 7)
    sat = store.bias("sat", 4)
    sat.data[...] = [12.0, -3.0, 0.5, 9.0]
    progs = {
        "add": (lambda: nn.total(nn.mul(nn.add(A, v), weights)), [A, v]),
        "sub": (lambda: nn.total(nn.mul(nn.sub(A, C), weights)), [A, C]),
        "mul": (lambda: nn.total(nn.mul(nn.mul(A, C), weights)), [A, C]),
        "matmul": (lambda: lin(A @ B, "mm"), [A, B]),
        "tanh": (lambda: nn.total(nn.mul(nn.tanh(A), weights)), [A]),
        "sigmoid": (lambda: nn.total(nn.mul(nn.sigmoid(A), weights)), [A]),
        "concat": (lambda: lin(nn.concat([A @ B, nn.tanh(A @ B), nn.cols(A, 0, 2)]), "cat"), [A, B]),
        "cols": (lambda: lin(nn.cols(A, 1, 3), "cols"), [A]),
        "take": (lambda: lin(nn.take(A, [0, 2, 2, 3, 1]), "take"), [A]),
        "flatten": (lambda: lin(nn.flatten(A @ B), "flat"), [A, B]),
        "rowdot": (lambda: lin(nn.rowdot(A, C), "row"), [A, C]),
        "scale": (lambda: nn.total(nn.scale(nn.mul(A, weights), 0.3)), [A]),
        "spmm": (lambda: nn.total(nn.mul(nn.spmm(sm, A), weights)), [A]),
        "segment_mean": (lambda: lin(nn.segment_mean(np.array([0, 1, 0, 1]), 2, A), "seg"), [A]),
        "embedding_lookup": (lambda: lin(nn.take(w, [5, 0, 5, 2, 1]) @ Tensor(np.ones((3, 5))), "take"), [w]),
        "segment_nll": (lambda: nn.segment_nll(nn.flatten(scores), [0, 0, 0, 1, 1, 2, 2], [1, 3, 6], 3), [scores]),
        "segment_nll_saturated": (lambda: nn.segment_nll(nn.flatten(sat), [0, 0, 1, 1], [0, 2], 2), [sat]),
        "gru_cell": (lambda: lin(gru(x, h0), "gru"), [x, h0] + [gru.W, gru.U, gru.Uh, gru.b]),
        "lstm_cell": (lambda: lin(lstm(x, h0, nn.tanh(h0))[0], "lstm"), [x, h0, lstm.Wx, lstm.Wh, lstm.b]),
        "lstm_scan": (lambda: lin(nn.lstm_scan(lstm, seqs, layout, lambda i, t: starts[i] + t), "scan"),
                      [seqs, lstm.Wx, lstm.Wh, lstm.b]),
        "bilstm_scan": (lambda: lin(nn.lstm_scan(lstm, seqs, layout, lambda i, t: starts[i] + t, reverse=True),
                                    "scan"), [seqs, lstm.Wx]),
    }
    return progs


def check_ops(seed: int = 0) -> dict:
    """Max relative gradient error of every core op program."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, (fn, params) in _op_programs(rng).items():
        out[name] = nn.grad_check(fn, params, rng=np.random.default_rng(seed)).max_rel_err
    return out


def tiny_training_loss(seed: int = 0):
    """A 2-example training loss on a reduced editor: ``(fn, params)``."""
    from .grammar import minilang
    from .model import Editor, EditorConfig, Episode, Vocab, gold_trace
    from .oracle import gold_script
    from .tree import parse_tree

    g = minilang()
    pairs = [('(Assign (Name "x") (Call "f" [(Name "a") (Name "b")]))',
              '(Assign (Name "x") (Index (Name "a") (Name "b")))'),
             ('(Assign (Name "y") (BinOp (Num "1") (Add) (Name "z")))',
              '(Assign (Name "y") (BinOp (Name "z") (Add) (Neg (Num "2"))))')]
    trees = [(parse_tree(g, a), parse_tree(g, b)) for a, b in pairs]
    vocab = Vocab.from_trees(g, [t for p in trees for t in p])
    ed = Editor(EditorConfig.small(), vocab, seed=seed)
    eps = []
    for s, t in trees:
        tr = gold_trace(s, gold_script(s, t), vocab)
        eps.append(Episode(tr, tr))
    return (lambda: ed.loss(eps)[0]), list(ed.store)


def check_training_loss(seed: int = 0, max_coords: int = 8) -> float:
    fn, params = tiny_training_loss(seed)
    return nn.grad_check(fn, params, max_coords=max_coords, rng=np.random.default_rng(seed)).max_rel_err


def oracle_smoke(n: int = 40, seed: int = 0) -> int:
    """Number of mismatches between the DP and the search oracle on random
    small pairs."""
    from .corpus import random_small_pair
    from .oracle import brute_force_dist, edit_distance

    rng = random.Random(seed)
    bad = 0
    for _ in range(n):
        s, t = random_small_pair(rng)
        if edit_distance(s, t) != brute_force_dist(s, t, cap=30):
            bad += 1
    return bad


def run(seed: int = 0, emit: Callable[[str], None] = print, tol: float = 1e-4) -> bool:
    t0 = time.time()
    ok = True
    for name, err in check_ops(seed).items():
        emit(f"grad_check op={name} max_rel_err={err:.3e}")
        ok &= err < tol
    err = check_training_loss(seed)
    emit(f"grad_check op=training_loss max_rel_err={err:.3e}")
    ok &= err < tol
    bad = oracle_smoke(seed=seed)
    emit(f"oracle_equivalence mismatches={bad}")
    ok &= bad == 0
    emit(f"selfcheck status={'ok' if ok else 'failed'} seconds={time.time() - t0:.1f}")
    return ok
