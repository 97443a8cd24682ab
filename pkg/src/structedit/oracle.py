"""Shortest edit scripts between trees, the dynamic oracle, and a search oracle.

The distance is computed field by field with an alignment table per field,
recursing into children that share a production.  Every step costs one:
deleting a subtree, adding one node, or copying one subtree from the memory
of the initial tree.  Dummies are free to skip on either side, and nothing
can be added to a single/optional field that still holds a real child.

Two pricing modes exist for placing a target subtree into an empty position:

``"paper"``
    one step when the subtree is in memory, otherwise one step per node.
``"exact"`` (default)
    the cheapest of: copying an identical subtree, adding the root and then
    building each child the same way, or copying a same-constructor subtree
    from memory and editing it into shape.  This makes the table an exact
    shortest distance under the four operators, which the search oracle
    :func:`brute_force_dist` confirms on small trees.
"""
from __future__ import annotations

import heapq
import itertools
from collections import defaultdict
from typing import Iterable, Optional

from .edits import (STOP, Add, CopySubTree, Delete, EditAction, EditScript, Stop, Token,
                    TypeMismatch, apply, legal_actions, resolve_path)
from .grammar import Cardinality
from .tree import DUMMY, RULE, TOKEN, Node, SubtreeMemory, Tree, structural_eq, subtree_memory

INF = float("inf")
MODES = ("exact", "paper")


class UnlearnableExample(ValueError):
    """A required token is neither in the vocabulary nor in the input tree."""


class Exceeded(Exception):
    """The search oracle hit its cost cap."""


def _sub_kind(a: Node, b: Node) -> int:
    """0: recurse into same production, 1: identical token, -1: no match."""
    if a.tag == RULE and b.tag == RULE:
        return 0 if a.prod is b.prod or a.prod == b.prod else -1
    if a.tag == TOKEN and b.tag == TOKEN and a.kind == b.kind and a.token == b.token:
        return 1
    return -1


class ShortestDist:
    """Memoised distance tables for one subtree memory.

    Plans are positional, so results are shared between structurally equal
    node pairs regardless of their ids.
    """

    def __init__(self, memory: SubtreeMemory, mode: str = "exact"):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.memory = memory
        self.mode = mode
        self._same_ctor = defaultdict(list)
        for i, n in enumerate(memory):
            if n.tag == RULE:
                self._same_ctor[(n.prod.head, n.prod.constructor)].append(i)
        self._dist: dict = {}
        self._build: dict = {}

    # -- costs ---------------------------------------------------------------
    def build_cost(self, t: Node) -> int:
        if t.tag == DUMMY:
            return 0
        key = t.ekey
        hit = self._build.get(key)
        if hit is not None:
            return hit[0]
        mem = self.memory.find(t)
        if t.tag == TOKEN:
            plan = (1, ("copy", mem) if mem is not None else ("add",))
        elif mem is not None:
            plan = (1, ("copy", mem))
        elif self.mode == "paper":
            plan = (t.size, ("nodes",))
        else:
            fresh = 1 + sum(self.build_cost(c) for c in t.iter_children())
            plan = (fresh, ("fresh",))
            for i in self._same_ctor.get((t.prod.head, t.prod.constructor), ()):
                c = 1 + self.dist(self.memory[i], t)
                if c < plan[0]:
                    plan = (c, ("copyedit", i))
        self._build[key] = plan
        return plan[0]

    def dist(self, s: Node, t: Node) -> int:
        if s.tag != RULE or t.tag != RULE or s.prod != t.prod:
            raise TypeMismatch("distance is defined between nodes of one production")
        key = (s.skey, t.ekey)
        hit = self._dist.get(key)
        if hit is not None:
            return hit[0]
        total = 0
        aligns = []
        for field, skids, tkids in zip(s.prod.fields, s.children, t.children):
            cost, align = self._field(field, skids, tkids)
            total += cost
            aligns.append(align)
        self._dist[key] = (total, tuple(aligns))
        return total

    def _field(self, field, S, T):
        M, N = len(S), len(T)
        D = [[INF] * (N + 1) for _ in range(M + 1)]
        D[0][0] = 0
        for m in range(1, M + 1):
            D[m][0] = D[m - 1][0] + (0 if S[m - 1].tag == DUMMY else 1)
        blocked = field.cardinality is not Cardinality.SEQUENTIAL and M > 0 and S[0].tag != DUMMY
        ins = [self.build_cost(x) for x in T]
        for n in range(1, N + 1):
            D[0][n] = INF if blocked else D[0][n - 1] + ins[n - 1]
        sub = {}
        for m in range(1, M + 1):
            a = S[m - 1]
            dele = 0 if a.tag == DUMMY else 1
            for n in range(1, N + 1):
                b = T[n - 1]
                v1 = D[m - 1][n] + dele
                v2 = D[m][n - 1] + ins[n - 1]
                k = _sub_kind(a, b)
                if k == 0:
                    v3 = D[m - 1][n - 1] + self.dist(a, b)
                elif k == 1:
                    v3 = D[m - 1][n - 1]
                else:
                    v3 = INF
                sub[m, n] = v3
                D[m][n] = min(v1, v2, v3)
        # backtrace; ties prefer match/recurse, then insertion, then deletion
        align = []
        m, n = M, N
        while m or n:
            here = D[m][n]
            if m and n and sub[m, n] == here:
                align.append(("s", m - 1, n - 1))
                m, n = m - 1, n - 1
            elif n and D[m][n - 1] + ins[n - 1] == here:
                align.append(("i", n - 1))
                n -= 1
            else:
                align.append(("d", m - 1))
                m -= 1
        align.reverse()
        return D[M][N], tuple(align)

    # -- witness scripts -------------------------------------------------------
    def emit_dist(self, s: Node, t: Node, path: tuple, out: list):
        self.dist(s, t)
        _, aligns = self._dist[(s.skey, t.ekey)]
        for fi, (field, align) in enumerate(zip(s.prod.fields, aligns)):
            S, T = s.children[fi], t.children[fi]
            seq = field.cardinality is Cardinality.SEQUENTIAL
            pos = 0
            for op in align:
                step = path + ((fi, pos if seq else None),)
                if op[0] == "d":
                    if S[op[1]].tag != DUMMY:
                        out.append(("del", step))
                elif op[0] == "i":
                    node = T[op[1]]
                    if node.tag != DUMMY:
                        self.emit_build(node, step, out)
                        pos += 1
                else:
                    a, b = S[op[1]], T[op[2]]
                    if a.tag == RULE:
                        self.emit_dist(a, b, step, out)
                    pos += 1

    def emit_build(self, t: Node, path: tuple, out: list):
        self.build_cost(t)
        _, plan = self._build[t.ekey]
        kind = plan[0]
        if kind == "copy":
            out.append(("cpy", path, plan[1]))
        elif kind == "add":
            out.append(("add", path, Token(t.kind, t.token)))
        elif kind == "copyedit":
            out.append(("cpy", path, plan[1]))
            self.emit_dist(self.memory[plan[1]], t, path, out)
        elif kind == "fresh":
            out.append(("add", path, t.prod))
            self._emit_children(t, path, out, self.emit_build)
        else:
            self._emit_nodes(t, path, out)

    def _emit_nodes(self, t: Node, path, out):
        mem = self.memory.find(t)
        if t.tag == TOKEN:
            out.append(("cpy", path, mem) if mem is not None else ("add", path, Token(t.kind, t.token)))
        elif t.size == 1 and mem is not None:
            out.append(("cpy", path, mem))
        else:
            out.append(("add", path, t.prod))
            self._emit_children(t, path, out, self._emit_nodes)

    @staticmethod
    def _emit_children(t, path, out, emit):
        for fi, (field, kids) in enumerate(zip(t.prod.fields, t.children)):
            real = [c for c in kids if c.tag != DUMMY]
            if field.cardinality is Cardinality.SEQUENTIAL:
                for j, c in enumerate(real):
                    emit(c, path + ((fi, j),), out)
            elif real:
                emit(real[0], path + ((fi, None),), out)


def _solver(memory: SubtreeMemory, mode: str) -> ShortestDist:
    cache = memory.__dict__.setdefault("_solvers", {})
    s = cache.get(mode)
    if s is None:
        s = cache[mode] = ShortestDist(memory, mode)
    return s


def tree_shortest_dist(src: Node, tgt: Node, memory: SubtreeMemory, mode: str = "exact"):
    """``(distance, ops)`` for editing ``src`` into ``tgt``.

    ``ops`` are positional: ``("del", path)``, ``("add", path, value)`` and
    ``("cpy", path, memory_index)`` with paths relative to ``src``'s position,
    in left-to-right, top-down order.
    """
    solver = _solver(memory, mode)
    d = solver.dist(src, tgt)
    ops: list = []
    solver.emit_dist(src, tgt, (), ops)
    return d, ops


def _resolve(t: Tree, op) -> EditAction:
    anchor = resolve_path(t, op[1])
    if op[0] == "del":
        return Delete(anchor)
    if op[0] == "add":
        return Add(anchor, op[2])
    return CopySubTree(anchor, op[2])


def shortest_script(current: Tree, target: Tree, memory: SubtreeMemory, mode: str = "exact",
                    vocab=None, with_stop: bool = True) -> EditScript:
    """Shortest id-addressed script from ``current`` to ``target``."""
    if current.root.prod != target.root.prod:
        raise TypeMismatch("trees have different root productions")
    _, ops = tree_shortest_dist(current.root, target.root, memory, mode)
    actions = []
    t = current
    known = None if vocab is None else set(vocab)
    for op in ops:
        a = _resolve(t, op)
        if known is not None and isinstance(a, Add) and isinstance(a.value, Token) and a.value not in known:
            raise UnlearnableExample(f"token {a.value.value!r} is outside the vocabulary and the input tree")
        actions.append(a)
        t = apply(t, memory, a)
    if with_stop:
        actions.append(STOP)
    return EditScript(actions)


def gold_script(src: Tree, tgt: Tree, vocab=None, mode: str = "exact") -> EditScript:
    """Shortest script from ``src`` to ``tgt`` with a final ``Stop``.

    When ``vocab`` (a collection of :class:`~structedit.edits.Token`) is given,
    any token that has to be added from scratch must belong to it.
    """
    return shortest_script(src, tgt, subtree_memory(src), mode, vocab)


def edit_distance(current: Tree, target: Tree, memory: Optional[SubtreeMemory] = None,
                  mode: str = "exact") -> int:
    if memory is None:
        memory = subtree_memory(current)
    if current.root.prod != target.root.prod:
        raise TypeMismatch("trees have different root productions")
    return _solver(memory, mode).dist(current.root, target.root)


def dynamic_oracle(current: Tree, target: Tree, memory: SubtreeMemory, vocab=None,
                   mode: str = "exact") -> EditAction:
    """First action of a shortest continuation from ``current`` to ``target``,
    copying only from the initial tree's ``memory``; ``Stop`` once they match."""
    if structural_eq(current, target):
        return STOP
    _, ops = tree_shortest_dist(current.root, target.root, memory, mode)
    a = _resolve(current, ops[0])
    if vocab is not None and isinstance(a, Add) and isinstance(a.value, Token) and a.value not in vocab:
        raise UnlearnableExample(f"token {a.value.value!r} is outside the vocabulary and the input tree")
    return a


# --------------------------------------------------------------------------- #
# independent search oracle

_EMPTY = Node(-1, DUMMY, "")


class _Bound:
    """Admissible lower bound on the steps that turn slot content into a target.

    Every action touches a single slot, so costs add up over disjoint parts of
    the tree.  A node that survives keeps its production, so its cost is at
    least the sum of its fields' costs.  A node that does not survive is
    deleted (one step) and its replacement has to be built.  Building a
    subtree that is not in memory takes either an add of its root plus builds
    of every child, or a copy of another entry with the same production plus
    at least one repair.  In a sequence, surviving elements keep their order,
    so the bound is a cheapest alignment of old and new elements.
    """

    def __init__(self, memory: SubtreeMemory):
        self.memory = memory
        self._build = {}
        self._fields = {}
        self._by_prod = {}
        for m in memory:
            if m.tag == RULE:
                self._by_prod.setdefault(m.prod, []).append(m)

    def build(self, t: Node) -> int:
        if t.tag == DUMMY:
            return 0
        hit = self._build.get(t.ekey)
        if hit is None:
            if t.tag == TOKEN or self.memory.find(t) is not None:
                hit = 1
            else:
                hit = 1 + sum(self.build(c) for c in t.iter_children())
                for m in self._by_prod.get(t.prod, ()):
                    hit = min(hit, 1 + max(1, self.fields(m, t)))
            self._build[t.ekey] = hit
        return hit

    def slot(self, c: Node, t: Node) -> int:
        if c.tag == DUMMY and t.tag == DUMMY:
            return 0
        if c.tag == DUMMY:
            return self.build(t)
        if t.tag == DUMMY:
            return 1
        if c.ekey == t.ekey:
            return 0
        replace = 1 + self.build(t)
        if c.tag == RULE and t.tag == RULE and c.prod == t.prod:
            return min(replace, self.fields(c, t))
        return replace

    def _keep(self, c: Node, t: Node) -> float:
        if c.ekey == t.ekey:
            return 0
        if c.tag == RULE and t.tag == RULE and c.prod == t.prod:
            return self.fields(c, t)
        return INF

    def _sequence(self, cs, ts) -> int:
        n, m = len(cs), len(ts)
        row = [0] * (m + 1)
        for j in range(1, m + 1):
            row[j] = row[j - 1] + self.build(ts[j - 1])
        for i in range(1, n + 1):
            prev, row = row, [row[0] + 1] + [0] * m
            for j in range(1, m + 1):
                row[j] = min(prev[j] + 1, row[j - 1] + self.build(ts[j - 1]),
                             prev[j - 1] + self._keep(cs[i - 1], ts[j - 1]))
        return row[m]

    def fields(self, c: Node, t: Node) -> int:
        key = (c.skey, t.skey)
        hit = self._fields.get(key)
        if hit is not None:
            return hit
        total = 0
        for field, ck, tk in zip(c.prod.fields, c.children, t.children):
            if field.cardinality is Cardinality.SEQUENTIAL:
                total += self._sequence([x for x in ck if x.tag != DUMMY], [x for x in tk if x.tag != DUMMY])
            else:
                total += self.slot(ck[0] if ck else _EMPTY, tk[0] if tk else _EMPTY)
        self._fields[key] = total
        return total


def brute_force_dist(src: Tree, tgt: Tree, memory: Optional[SubtreeMemory] = None, cap: int = 12,
                     vocab: Optional[Iterable[Token]] = None, prune: bool = True,
                     heuristic: bool = True) -> int:
    """Exact distance by best-first search over :func:`legal_actions`.

    States are deduplicated by their structural key (dummies included).  With
    ``prune`` the search skips actions that create a node whose constructor or
    token never occurs in ``tgt``: such a node has to be removed again, so
    dropping it can only shorten a path.  ``heuristic`` enables an admissible
    lower bound (A*); without it the search is plain uniform-cost.
    """
    if memory is None:
        memory = subtree_memory(src)
    if vocab is None:
        vocab = [Token(n.kind, n.token) for n in tgt.tokens()]
    vocab = list(dict.fromkeys(vocab))
    goal = tgt.root.ekey
    allowed_rules = {n.prod for n in tgt.root.preorder() if n.tag == RULE}
    allowed_toks = {(n.kind, n.token) for n in tgt.root.preorder() if n.tag == TOKEN}

    def useful(a) -> bool:
        if isinstance(a, Add):
            v = a.value
            if isinstance(v, Token):
                return (v.kind, v.value) in allowed_toks
            return v in allowed_rules
        if isinstance(a, CopySubTree):
            m = memory[a.source]
            if m.tag == TOKEN:
                return (m.kind, m.token) in allowed_toks
            return m.prod in allowed_rules
        return True

    bound = _Bound(memory)

    def h(t: Tree) -> int:
        return bound.fields(t.root, tgt.root) if heuristic else 0

    if src.root.prod != tgt.root.prod:
        raise TypeMismatch("trees have different root productions")
    counter = itertools.count()
    best = {src.root.skey: 0}
    frontier = [(h(src), next(counter), 0, src)]
    while frontier:
        f, _, g, t = heapq.heappop(frontier)
        if f > cap:
            break
        if best.get(t.root.skey, INF) < g:
            continue
        if t.root.ekey == goal:
            return g
        for a in legal_actions(t, memory, vocab):
            if isinstance(a, Stop) or (prune and not useful(a)):
                continue
            nt = apply(t, memory, a)
            key = nt.root.skey
            ng = g + 1
            if ng < best.get(key, INF):
                best[key] = ng
                heapq.heappush(frontier, (ng + h(nt), next(counter), ng, nt))
    raise Exceeded(f"distance exceeds cap {cap}")
