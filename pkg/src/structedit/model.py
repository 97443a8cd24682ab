"""The neural editor: graph encoder, tree-history recurrence, decoder heads and
the TreeDiff edit encoder.

Everything is batched.  A batch is a list of :class:`Episode` objects.  Each
one pairs an *edit trace* (the gold script of an edit, with its intermediate
trees, read by the edit encoder) with a *decode trace* (the trees the editor
walks through and the action it should take at each).  In plain supervised
training both traces are the same object, so the graph encoder runs once per
tree and serves both sides.
"""
from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import nn
from .edits import (ADD_OP, COPY_OP, DELETE_OP, OPERATORS, STOP, STOP_OP, Add, CopySubTree, Delete,
                    EditAction, EditScript, Stop, Token, apply, operator_of)
from .grammar import Cardinality, Grammar, parse_grammar
from .nn import Tensor, add, concat, rowdot, take, tanh
from .tree import DUMMY, RULE, TOKEN, SubtreeMemory, Tree, as_graph, clear_dummies, subtree_memory

N_OPS = len(OPERATORS)
UNK = Token("", "<unk>")


@dataclass(frozen=True)
class EditorConfig:
    node_dim: int = 128
    seq_enc_dim: int = 64
    history_dim: int = 256
    op_emb_dim: int = 32
    field_emb_dim: int = 32
    rule_emb_dim: int = 128
    value_hidden_dim: int = 256
    edit_repr_dim: int = 512
    action_repr_dim: int = 256
    edit_enc_lstm_dim: int = 256
    ggnn_steps: int = 4
    max_edit_len: int = 70

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.edit_repr_dim != 2 * self.edit_enc_lstm_dim:
            raise ValueError("edit_repr_dim must be twice edit_enc_lstm_dim")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in {f.name for f in dataclasses.fields(cls)}})

    @classmethod
    def small(cls, **kw):
        """A reduced configuration for quick tests."""
        base = dict(node_dim=16, history_dim=24, op_emb_dim=4, field_emb_dim=4, rule_emb_dim=16,
                    value_hidden_dim=16, edit_repr_dim=16, action_repr_dim=12, edit_enc_lstm_dim=8,
                    ggnn_steps=2, seq_enc_dim=8)
        base.update(kw)
        return cls(**base)


class Vocab:
    """Stable integer ids for tokens, productions, fields and operators."""

    def __init__(self, grammar: Grammar, tokens: Sequence[Token] = ()):
        self.grammar = grammar
        self.tokens = [UNK] + sorted(set(tokens) - {UNK}, key=lambda t: (t.kind, t.value))
        self._tok = {t: i for i, t in enumerate(self.tokens)}
        self.productions = list(grammar.productions)
        self.fields = [("", "", "")] + [(p.head, p.constructor, f.name) for p in grammar.productions
                                        for f in p.fields]
        self._field = {k: i for i, k in enumerate(self.fields)}
        self.operators = list(OPERATORS)

    @classmethod
    def from_trees(cls, grammar: Grammar, trees) -> "Vocab":
        toks = {Token(n.kind, n.token) for t in trees for n in t.tokens()}
        return cls(grammar, toks)

    def token_id(self, tok: Token) -> int:
        return self._tok.get(tok, 0)

    def field_id(self, prod, field_index: int) -> int:
        f = prod.fields[field_index]
        return self._field[(prod.head, prod.constructor, f.name)]

    @property
    def known_tokens(self) -> list[Token]:
        return self.tokens[1:]

    def to_dict(self):
        return {"tokens": [[t.kind, t.value] for t in self.tokens[1:]],
                "productions": [str(p) for p in self.productions],
                "fields": ["/".join(f) for f in self.fields],
                "operators": self.operators}

    @classmethod
    def from_dict(cls, grammar, d):
        v = cls(grammar, [Token(k, x) for k, x in d["tokens"]])
        if [str(p) for p in v.productions] != d["productions"]:
            raise nn.CheckpointError("checkpoint productions do not match the grammar")
        return v


# --------------------------------------------------------------------------- #
# featurisation

class GraphFeat:
    """Index arrays for one tree: embedding-table row per node, typed edges,
    the parent-field id of every node and a node-id to position map."""

    __slots__ = ("rows", "src", "dst", "etype", "field", "pos", "n")

    def __init__(self, t: Tree, vocab: Vocab):
        g = as_graph(t)
        n_rules = len(vocab.productions)
        n_toks = len(vocab.tokens)
        rows = np.empty(len(g.nodes), dtype=np.int64)
        field = np.zeros(len(g.nodes), dtype=np.int64)
        self.pos = {}
        pid = vocab.grammar.production_id
        for i, node in enumerate(g.nodes):
            self.pos[node.id] = i
            if node.tag == RULE:
                rows[i] = pid(node.prod)
            elif node.tag == TOKEN:
                rows[i] = n_rules + vocab.token_id(Token(node.kind, node.token))
            else:
                rows[i] = n_rules + n_toks
        for node in g.nodes:
            if node.tag == RULE:
                for fi, kids in enumerate(node.children):
                    fid = vocab.field_id(node.prod, fi)
                    for c in kids:
                        field[self.pos[c.id]] = fid
        e = np.asarray(g.edges, dtype=np.int64).reshape(-1, 3)
        self.rows, self.field, self.n = rows, field, len(g.nodes)
        self.src, self.dst, self.etype = e[:, 0], e[:, 1], e[:, 2]


class Choices:
    """Legal decoder choices in one tree state."""

    def __init__(self, t: Tree, memory: SubtreeMemory, vocab: Vocab):
        g = t.grammar
        self.deletable = [n.id for n in t.root.preorder() if n.tag != DUMMY and n is not t.root]
        self.add = {}      # anchor id -> list of values (Production or Token)
        self.copy = {}     # anchor id -> list of memory indices
        mem_tokens = [Token(n.kind, n.token) for n in memory.tokens()]
        for n in t.root.preorder():
            if n.tag != RULE:
                continue
            for f, kids in zip(n.prod.fields, n.children):
                if f.cardinality is Cardinality.SEQUENTIAL:
                    anchors = kids
                elif kids and kids[0].tag == DUMMY:
                    anchors = kids[:1]
                else:
                    continue
                if g.is_terminal(f.accepts):
                    vals = list(dict.fromkeys([x for x in vocab.known_tokens if x.kind == f.accepts]
                                              + [x for x in mem_tokens if x.kind == f.accepts]))
                else:
                    vals = list(g.productions_of(f.accepts))
                mem = [i for i, m in enumerate(memory) if m.kind == f.accepts]
                for a in anchors:
                    if vals:
                        self.add[a.id] = vals
                    if mem:
                        self.copy[a.id] = mem

    def op_mask(self) -> np.ndarray:
        m = np.zeros(N_OPS, dtype=bool)
        m[DELETE_OP] = bool(self.deletable)
        m[ADD_OP] = bool(self.add)
        m[COPY_OP] = bool(self.copy)
        m[STOP_OP] = True
        return m

    def nodes_for(self, op: int) -> list[int]:
        if op == DELETE_OP:
            return self.deletable
        if op == ADD_OP:
            return list(self.add)
        if op == COPY_OP:
            return list(self.copy)
        return []


@dataclass
class StepFeat:
    op: int
    op_mask: np.ndarray
    anchor: int = -1           # position in this state's graph
    field: int = 0
    node_cands: Optional[np.ndarray] = None
    node_gold: int = -1
    val_kind: int = 0          # 0 none, 1 rule, 2 token, 3 copy
    val_cands: Optional[np.ndarray] = None   # table rows (rule/token) or g1 positions (copy)
    val_gold: int = -1
    enc_val: int = -1          # table row or g1 position of the chosen value


class Trace:
    """A sequence of tree states and the action taken (or labelled) at each."""

    def __init__(self, states: Sequence[Tree], actions: Sequence[EditAction], memory: SubtreeMemory,
                 vocab: Vocab, labeled: Optional[Sequence[bool]] = None):
        if len(states) != len(actions):
            raise ValueError("one action per state")
        self.T = len(actions)
        self.graphs = [GraphFeat(s, vocab) for s in states]
        self.labeled = np.ones(self.T, dtype=bool) if labeled is None else np.asarray(labeled, dtype=bool)
        g1 = self.graphs[0]
        self.mem_pos = np.array([g1.pos[m.id] for m in memory], dtype=np.int64)
        n_rules = len(vocab.productions)
        self.steps = []
        for t, (s, a) in enumerate(zip(states, actions)):
            ch = Choices(s, memory, vocab)
            op = operator_of(a)
            st = StepFeat(op, ch.op_mask())
            if not st.op_mask[op]:
                raise ValueError(f"action {a} is not legal at step {t}")
            gf = self.graphs[t]
            if op != STOP_OP:
                nid = a.target if op == DELETE_OP else a.anchor
                st.anchor = gf.pos[nid]
                st.field = int(gf.field[st.anchor])
                cands = ch.nodes_for(op)
                st.node_cands = np.array([gf.pos[i] for i in cands], dtype=np.int64)
                st.node_gold = cands.index(nid)
            if op == ADD_OP:
                vals = ch.add[a.anchor]
                st.val_gold = vals.index(a.value)
                if isinstance(a.value, Token):
                    st.val_kind = 2
                    st.val_cands = np.array([n_rules + vocab.token_id(v) for v in vals], dtype=np.int64)
                else:
                    st.val_kind = 1
                    st.val_cands = np.array([vocab.grammar.production_id(v) for v in vals], dtype=np.int64)
                st.enc_val = int(st.val_cands[st.val_gold])
            elif op == COPY_OP:
                mems = ch.copy[a.anchor]
                st.val_kind = 3
                st.val_gold = mems.index(a.source)
                st.val_cands = self.mem_pos[mems]
                st.enc_val = int(self.mem_pos[a.source])
            self.steps.append(st)


@dataclass
class Episode:
    edit: Trace
    decode: Trace


def gold_trace(src: Tree, script: Sequence[EditAction], vocab: Vocab, memory=None) -> Trace:
    memory = memory if memory is not None else subtree_memory(src)
    states = [src]
    for a in script[:-1]:
        states.append(apply(states[-1], memory, a))
    return Trace(states, list(script), memory, vocab)


# --------------------------------------------------------------------------- #
# the network

class Editor:
    def __init__(self, config: EditorConfig, vocab: Vocab, seed: int = 0):
        self.config = c = config
        self.vocab = vocab
        self.store = store = nn.ParamStore(np.random.default_rng(seed))
        d = c.node_dim
        n_rules, n_toks, n_fields = len(vocab.productions), len(vocab.tokens), len(vocab.fields)
        self.n_rules, self.n_toks = n_rules, n_toks
        self.rule_emb = store.embedding("emb.rule", n_rules, c.rule_emb_dim)
        self.rule_proj = store.matrix("emb.rule_proj", c.rule_emb_dim, d) if c.rule_emb_dim != d else None
        self.tok_emb = store.embedding("emb.token", n_toks, d)
        self.dummy_emb = store.embedding("emb.dummy", 1, d)
        self.op_emb = store.embedding("emb.op", N_OPS, c.op_emb_dim)
        self.field_emb = store.embedding("emb.field", n_fields, c.field_emb_dim)
        # graph encoder
        self.msg_W = store.matrix("ggnn.msg.W", d, 4 * d)
        self.msg_b = store.embedding("ggnn.msg.b", 4, d)
        self.msg_b.data[...] = 0.0
        self.gru = nn.GRUCell(store, "ggnn.gru", d, d)
        # history
        self.hist = nn.LSTMCell(store, "hist", d + c.edit_repr_dim, c.history_dim)
        # heads
        H = c.history_dim
        self.op_W = store.matrix("head.op.W", H, N_OPS)
        self.op_b = store.bias("head.op.b", N_OPS)
        self.node_W = store.matrix("head.node.W", H + c.op_emb_dim, d)
        self.node_b = store.bias("head.node.b", d)
        self.val_W = store.matrix("head.val.W", H + d + c.field_emb_dim, c.value_hidden_dim)
        self.val_b = store.bias("head.val.b", c.value_hidden_dim)
        self.val_bil = {k: store.matrix(f"head.val.{name}", c.value_hidden_dim, d)
                        for k, name in ((1, "rule"), (2, "token"), (3, "copy"))}
        # edit encoder
        A = c.action_repr_dim
        base = c.op_emb_dim + d + c.field_emb_dim
        self.enc_W = {STOP_OP: store.matrix("enc.stop.W", c.op_emb_dim, A),
                      DELETE_OP: store.matrix("enc.delete.W", base, A),
                      ADD_OP: store.matrix("enc.add.W", base + d, A),
                      COPY_OP: store.matrix("enc.copy.W", base + d, A)}
        self.enc_b = {k: store.bias(f"enc.{n}.b", A)
                      for k, n in ((STOP_OP, "stop"), (DELETE_OP, "delete"), (ADD_OP, "add"), (COPY_OP, "copy"))}
        self.enc_fwd = nn.LSTMCell(store, "enc.fwd", A, c.edit_enc_lstm_dim)
        self.enc_bwd = nn.LSTMCell(store, "enc.bwd", A, c.edit_enc_lstm_dim)

    # -- pieces ----------------------------------------------------------------
    def table(self) -> Tensor:
        """Node/value embedding table: productions, then tokens, then Dummy."""
        rules = self.rule_emb if self.rule_proj is None else self.rule_emb @ self.rule_proj
        return concat([rules, self.tok_emb, self.dummy_emb], axis=0)

    def encode_graphs(self, graphs: Sequence[GraphFeat], table: Optional[Tensor] = None):
        """Node matrix and mean-pooled vector per graph for a batch of trees."""
        table = self.table() if table is None else table
        sizes = np.array([g.n for g in graphs], dtype=np.int64)
        offs = np.concatenate([[0], np.cumsum(sizes)])
        N = int(offs[-1])
        rows = np.concatenate([g.rows for g in graphs])
        src = np.concatenate([g.src + o for g, o in zip(graphs, offs)])
        dst = np.concatenate([g.dst + o for g, o in zip(graphs, offs)])
        et = np.concatenate([g.etype for g in graphs])
        d = self.config.node_dim
        A = sp.csr_matrix((np.ones(len(src)), (dst, et * N + src)), shape=(N, 4 * N))
        deg = np.zeros((N, 4))
        np.add.at(deg, (dst, et), 1.0)
        bias = nn.matmul(Tensor(deg), self.msg_b)
        h = take(table, rows)
        for _ in range(self.config.ggnn_steps):
            hw = h @ self.msg_W
            stacked = concat([nn.cols(hw, e * d, (e + 1) * d) for e in range(4)], axis=0)
            m = add(nn.spmm(A, stacked), bias)
            h = self.gru(m, h)
        seg = np.repeat(np.arange(len(graphs)), sizes)
        pooled = nn.segment_mean(seg, len(graphs), h)
        return h, pooled, offs

    def encode_edits(self, traces: Sequence[Trace], H: Tensor, node_off: dict, table: Tensor) -> Tensor:
        """TreeDiff representation for each trace; ``node_off[(k, t)]`` is the
        first row of trace ``k``'s state ``t`` in ``H``."""
        groups = {op: [] for op in range(N_OPS)}
        for k, tr in enumerate(traces):
            for t, st in enumerate(tr.steps):
                groups[st.op].append((k, t, st))
        outs, order = [], []
        for op, items in groups.items():
            if not items:
                continue
            ops = np.full(len(items), op)
            parts = [take(self.op_emb, ops)]
            if op != STOP_OP:
                anchor = [node_off[(k, t)] + st.anchor for k, t, st in items]
                parts += [take(H, anchor), take(self.field_emb, [st.field for _, _, st in items])]
            if op == ADD_OP:
                parts.append(take(table, [st.enc_val for _, _, st in items]))
            elif op == COPY_OP:
                parts.append(take(H, [node_off[(k, 0)] + st.enc_val for k, _, st in items]))
            x = parts[0] if len(parts) == 1 else concat(parts)
            outs.append(add(x @ self.enc_W[op], self.enc_b[op]))
            order += [(k, t) for k, t, _ in items]
        acts = concat(outs, axis=0) if len(outs) > 1 else outs[0]
        where = {kt: i for i, kt in enumerate(order)}
        layout = nn.RaggedLayout([tr.T for tr in traces])

        def row(i, t):
            return where[(i, t)]
        fwd = nn.lstm_scan(self.enc_fwd, acts, layout, row)
        bwd = nn.lstm_scan(self.enc_bwd, acts, layout, row, reverse=True)
        last = [layout.row(i, tr.T - 1) for i, tr in enumerate(traces)]
        return concat([take(fwd, last), take(bwd, last)])

    def history_inputs(self, pooled_rows: Tensor, fdelta_rows: Tensor) -> Tensor:
        return concat([pooled_rows, fdelta_rows])

    def op_logits(self, s: Tensor) -> Tensor:
        return add(s @ self.op_W, self.op_b)

    def node_query(self, s: Tensor, ops) -> Tensor:
        return tanh(add(concat([s, take(self.op_emb, ops)]) @ self.node_W, self.node_b))

    def value_query(self, s: Tensor, anchors: Tensor, fields) -> Tensor:
        return tanh(add(concat([s, anchors, take(self.field_emb, fields)]) @ self.val_W, self.val_b))

    # -- training ----------------------------------------------------------------
    def _encode_batch(self, episodes: Sequence[Episode]):
        traces, index = [], {}
        for ep in episodes:
            for tr in (ep.edit, ep.decode):
                if id(tr) not in index:
                    index[id(tr)] = len(traces)
                    traces.append(tr)
        graphs, node_off, graph_id = [], {}, {}
        for k, tr in enumerate(traces):
            for t, g in enumerate(tr.graphs):
                graph_id[(k, t)] = len(graphs)
                graphs.append(g)
        table = self.table()
        H, pooled, offs = self.encode_graphs(graphs, table)
        for kt, gi in graph_id.items():
            node_off[kt] = int(offs[gi])
        return traces, index, H, pooled, node_off, graph_id, table

    def loss(self, episodes: Sequence[Episode]):
        """Summed cross-entropy of the operator, node and value heads over all
        labelled steps.  Returns ``(loss tensor, number of labelled steps)``."""
        traces, index, H, pooled, node_off, graph_id, table = self._encode_batch(episodes)
        edit_ids = sorted({index[id(ep.edit)] for ep in episodes})
        fd_row = {k: i for i, k in enumerate(edit_ids)}
        fd = self.encode_edits([traces[k] for k in edit_ids], H,
                               {(fd_row[k], t): v for (k, t), v in node_off.items() if k in fd_row}, table)
        decs = [traces[index[id(ep.decode)]] for ep in episodes]
        dec_k = [index[id(ep.decode)] for ep in episodes]
        layout = nn.RaggedLayout([tr.T for tr in decs])
        # history inputs, one row per (episode, step) in layout order
        pool_rows = np.zeros(layout.size, dtype=np.int64)
        fd_rows = np.zeros(layout.size, dtype=np.int64)
        for i, (ep, tr) in enumerate(zip(episodes, decs)):
            for t in range(tr.T):
                r = layout.row(i, t)
                pool_rows[r] = graph_id[(dec_k[i], t)]
                fd_rows[r] = fd_row[index[id(ep.edit)]]
        X = self.history_inputs(take(pooled, pool_rows), take(fd, fd_rows))
        S = nn.lstm_scan(self.hist, X, layout, lambda i, t: layout.row(i, t))
        # gather supervision
        op_idx, op_seg, op_gold = [], [], []
        nrow, nop, nc_seg, nc_node, n_gold = [], [], [], [], []
        vrow, vanch, vfield, vkind = [], [], [], []
        vc = {1: ([], [], []), 2: ([], [], []), 3: ([], [], [])}   # seg, cand, gold flag
        v_gold = []
        n_steps = 0
        for i, tr in enumerate(decs):
            k = dec_k[i]
            for t, st in enumerate(tr.steps):
                if not tr.labeled[t]:
                    continue
                n_steps += 1
                r = layout.row(i, t)
                seg = len(op_gold)
                legal = np.flatnonzero(st.op_mask)
                op_idx.extend(r * N_OPS + legal)
                op_seg.extend([seg] * len(legal))
                op_gold.append(len(op_idx) - len(legal) + int(np.flatnonzero(legal == st.op)[0]))
                if st.op == STOP_OP:
                    continue
                nseg = len(nrow)
                nrow.append(r)
                nop.append(st.op)
                base = len(nc_node)
                nc_seg.extend([nseg] * len(st.node_cands))
                off = node_off[(k, t)]
                nc_node.extend(off + st.node_cands)
                n_gold.append(base + st.node_gold)
                if st.val_kind:
                    vseg = len(vrow)
                    vrow.append(r)
                    vanch.append(off + st.anchor)
                    vfield.append(st.field)
                    vkind.append(st.val_kind)
                    segs, cands, _ = vc[st.val_kind]
                    cand = st.val_cands + (node_off[(k, 0)] if st.val_kind == 3 else 0)
                    v_gold.append((st.val_kind, len(cands) + st.val_gold))
                    segs.extend([vseg] * len(cand))
                    cands.extend(cand)
        logits = nn.flatten(self.op_logits(S))
        total = nn.segment_nll(take(logits, op_idx), op_seg, op_gold, len(op_gold))
        if nrow:
            q = self.node_query(take(S, nrow), nop)
            sc = rowdot(take(q, nc_seg), take(H, nc_node))
            total = add(total, nn.segment_nll(sc, nc_seg, n_gold, len(nrow)))
        if vrow:
            hv = self.value_query(take(S, vrow), take(H, vanch), vfield)
            scores, segs_all, starts = [], [], {}
            start = 0
            for kind in (1, 2, 3):
                segs, cands, _ = vc[kind]
                if not segs:
                    continue
                src = table if kind != 3 else H
                sc = rowdot(take(hv @ self.val_bil[kind], segs), take(src, cands))
                scores.append(sc)
                segs_all.append(np.asarray(segs))
                starts[kind] = start
                start += len(segs)
            flat = concat(scores, axis=0) if len(scores) > 1 else scores[0]
            gold = [starts[kind] + j for kind, j in v_gold]
            total = add(total, nn.segment_nll(flat, np.concatenate(segs_all), gold, len(vrow)))
        return total, n_steps

    # -- inference -----------------------------------------------------------------
    def edit_vectors(self, traces: Sequence[Trace], chunk: int = 64) -> np.ndarray:
        """TreeDiff vectors (rows) for gold traces."""
        out = []
        table = self.table()
        for lo in range(0, len(traces), chunk):
            part = traces[lo:lo + chunk]
            graphs, node_off = [], {}
            for k, tr in enumerate(part):
                for t, g in enumerate(tr.graphs):
                    node_off[(k, t)] = len(graphs)
                    graphs.append(g)
            H, _, offs = self.encode_graphs(graphs, table)
            node_off = {kt: int(offs[gi]) for kt, gi in node_off.items()}
            out.append(self.encode_edits(part, H, node_off, table).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.edit_repr_dim))

    def rollout(self, fdeltas: np.ndarray, starts: Sequence[Tree],
                override: Optional[Callable[[int, int, Tree, EditAction], EditAction]] = None,
                max_len: Optional[int] = None, chunk: int = 128):
        """Greedy decoding for a batch of inputs.

        ``override(i, t, tree, learner_action)`` may substitute the executed
        action (used for mixture policies).  Returns one
        ``(script, final_tree, states, stopped)`` tuple per input, where
        ``states`` lists the tree before every executed action.
        """
        results = []
        for lo in range(0, len(starts), chunk):
            results += self._rollout(fdeltas[lo:lo + chunk], starts[lo:lo + chunk], override, lo, max_len)
        return results

    def _rollout(self, fdeltas, starts, override, base, max_len):
        c = self.config
        max_len = c.max_edit_len if max_len is None else max_len
        B = len(starts)
        table = self.table()
        tdata = table.data
        trees = list(starts)
        mems = [subtree_memory(t) for t in trees]
        g1_vec = [None] * B
        mem_pos = [None] * B
        scripts = [[] for _ in range(B)]
        states = [[] for _ in range(B)]
        stopped = [False] * B
        h = np.zeros((B, c.history_dim))
        cst = np.zeros((B, c.history_dim))
        active = list(range(B))
        for t in range(max_len):
            if not active:
                break
            feats = [GraphFeat(trees[i], self.vocab) for i in active]
            H, pooled, offs = self.encode_graphs(feats, table)
            Hd = H.data
            if t == 0:
                for j, i in enumerate(active):
                    g1_vec[i] = Hd[offs[j]:offs[j + 1]]
                    mem_pos[i] = np.array([feats[j].pos[m.id] for m in mems[i]], dtype=np.int64)
            x = Tensor(np.concatenate([pooled.data, fdeltas[active]], axis=1))
            hs, cs = self.hist(x, Tensor(h[active]), Tensor(cst[active]))
            h[active], cst[active] = hs.data, cs.data
            S = hs.data
            op_logit = self.op_logits(hs).data
            nq_all = {op: self.node_query(hs, np.full(len(active), op)).data for op in (DELETE_OP, ADD_OP, COPY_OP)}
            still = []
            for j, i in enumerate(active):
                tree = trees[i]
                ch = Choices(tree, mems[i], self.vocab)
                mask = ch.op_mask()
                lo = np.where(mask, op_logit[j], -np.inf)
                op = int(np.argmax(lo))
                if op == STOP_OP:
                    a = STOP
                else:
                    gf = feats[j]
                    cands = ch.nodes_for(op)
                    vecs = Hd[offs[j] + np.array([gf.pos[n] for n in cands])]
                    nid = cands[int(np.argmax(vecs @ nq_all[op][j]))]
                    if op == DELETE_OP:
                        a = Delete(nid)
                    else:
                        anc = Hd[offs[j] + gf.pos[nid]]
                        fid = int(gf.field[gf.pos[nid]])
                        hv = np.tanh(np.concatenate([S[j], anc, self.field_emb.data[fid]]) @ self.val_W.data
                                     + self.val_b.data[0])
                        if op == ADD_OP:
                            vals = ch.add[nid]
                            if isinstance(vals[0], Token):
                                rows = [self.n_rules + self.vocab.token_id(v) for v in vals]
                                q = hv @ self.val_bil[2].data
                            else:
                                rows = [self.vocab.grammar.production_id(v) for v in vals]
                                q = hv @ self.val_bil[1].data
                            a = Add(nid, vals[int(np.argmax(tdata[rows] @ q))])
                        else:
                            mems_i = ch.copy[nid]
                            g1pos = mem_pos[i][mems_i]
                            q = hv @ self.val_bil[3].data
                            a = CopySubTree(nid, mems_i[int(np.argmax(g1_vec[i][g1pos] @ q))])
                if override is not None:
                    a = override(base + i, t, tree, a)
                states[i].append(tree)
                scripts[i].append(a)
                if isinstance(a, Stop):
                    stopped[i] = True
                    trees[i] = clear_dummies(tree)
                else:
                    trees[i] = apply(tree, mems[i], a)
                    still.append(i)
            active = still
        return [(EditScript(s) if stopped[i] else tuple(s), trees[i], states[i], stopped[i])
                for i, s in enumerate(scripts)]

    # -- persistence ------------------------------------------------------------------
    def save(self, path_or_file):
        header = {"config": self.config.to_dict(), "grammar": self.vocab.grammar.to_text(),
                  "vocab": self.vocab.to_dict()}
        if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
            with open(path_or_file, "wb") as f:
                nn.write_checkpoint(f, header, self.store.state())
        else:
            nn.write_checkpoint(path_or_file, header, self.store.state())

    @classmethod
    def load(cls, path_or_file) -> "Editor":
        if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
            with open(path_or_file, "rb") as f:
                header, tensors = nn.read_checkpoint(f)
        else:
            header, tensors = nn.read_checkpoint(path_or_file)
        grammar = parse_grammar(header["grammar"])
        vocab = Vocab.from_dict(grammar, header["vocab"])
        ed = cls(EditorConfig.from_dict(header["config"]), vocab)
        ed.store.load_state(tensors)
        return ed

    def copy(self) -> "Editor":
        buf = io.BytesIO()
        self.save(buf)
        buf.seek(0)
        return Editor.load(buf)
