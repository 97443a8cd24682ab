"""Grammar-typed ASTs with dummy placeholders.

Trees are immutable values.  Every node carries an integer id that is unique
within the tree's lifetime; edits produce new trees that share untouched
nodes with their predecessor (see :mod:`structedit.edits`).

Terminal tokens are nodes of their own, children of the production that owns
the terminal field, so ``Num("1")`` is two nodes.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterator, Optional

from .grammar import Cardinality, FieldDecl, Grammar, Production

RULE, TOKEN, DUMMY = 0, 1, 2

# Structural keys are interned to small ints so nested keys hash in O(children).
_INTERN: dict = {}


def _intern(key) -> int:
    k = _INTERN.get(key)
    if k is None:
        k = _INTERN[key] = len(_INTERN)
    return k


_DUMMY_KEY = _intern(("_",))


class TreeError(ValueError):
    pass


class Node:
    """One AST node.  ``kind`` is the production head, the terminal kind, or
    (for dummies) the type accepted by the slot the dummy occupies."""

    __slots__ = ("id", "tag", "prod", "kind", "token", "children", "_skey", "_ekey", "_size")

    def __init__(self, id, tag, kind, prod=None, token=None, children=()):
        self.id = id
        self.tag = tag
        self.kind = kind
        self.prod = prod
        self.token = token
        self.children = children
        self._skey = None
        self._ekey = None
        self._size = None

    @property
    def is_dummy(self) -> bool:
        return self.tag == DUMMY

    @property
    def is_token(self) -> bool:
        return self.tag == TOKEN

    @property
    def is_rule(self) -> bool:
        return self.tag == RULE

    @property
    def skey(self) -> int:
        """Structural key including dummy placeholders (ids ignored)."""
        if self._skey is None:
            if self.tag == RULE:
                self._skey = _intern((self.prod.head, self.prod.constructor,
                                      tuple(tuple(c.skey for c in f) for f in self.children)))
            elif self.tag == TOKEN:
                self._skey = _intern(("'", self.kind, self.token))
            else:
                self._skey = _DUMMY_KEY
        return self._skey

    @property
    def ekey(self) -> int:
        """Structural key with dummies cleared; equal keys mean structurally equal."""
        if self._ekey is None:
            if self.tag == RULE:
                self._ekey = _intern((self.prod.head, self.prod.constructor,
                                      tuple(tuple(c.ekey for c in f if c.tag != DUMMY)
                                            for f in self.children)))
            elif self.tag == TOKEN:
                self._ekey = self.skey
            else:
                self._ekey = _DUMMY_KEY
        return self._ekey

    @property
    def size(self) -> int:
        """Number of non-dummy nodes in this subtree."""
        if self._size is None:
            if self.tag == DUMMY:
                self._size = 0
            else:
                self._size = 1 + sum(c.size for f in self.children for c in f)
        return self._size

    def iter_children(self) -> Iterator["Node"]:
        for f in self.children:
            yield from f

    def preorder(self) -> Iterator["Node"]:
        stack = [self]
        while stack:
            n = stack.pop()
            yield n
            if n.children:
                stack.extend(reversed([c for f in n.children for c in f]))

    def with_children(self, children) -> "Node":
        return Node(self.id, self.tag, self.kind, self.prod, self.token, children)

    def __repr__(self):
        return f"<{self.id}:{to_sexpr(self, include_dummies=True)}>"


def count_nodes(node: Node) -> int:
    return node.size


class _Ids:
    __slots__ = ("next",)

    def __init__(self, start=0):
        self.next = start

    def __call__(self) -> int:
        i = self.next
        self.next += 1
        return i


def make_dummy(kind: str, ids) -> Node:
    return Node(ids(), DUMMY, kind)


def make_token(kind: str, value: str, ids) -> Node:
    return Node(ids(), TOKEN, kind, token=value)


def instantiate_node(p: Production, ids) -> Node:
    children = tuple((make_dummy(f.accepts, ids),) for f in p.fields)
    return Node(ids(), RULE, p.head, prod=p, children=children)


def instantiate(g: Grammar, p: Production, next_id: int = 0) -> tuple[Node, int]:
    """A fresh node for ``p`` with every field holding exactly one dummy.

    Returns the node and the next unused id.
    """
    if p not in g.productions:
        raise TreeError(f"{p} is not part of the grammar")
    ids = _Ids(next_id)
    node = instantiate_node(p, ids)
    return node, ids.next


def clone_node(node: Node, ids) -> Node:
    """Deep copy with fresh ids."""
    if node.tag == RULE:
        return Node(ids(), RULE, node.kind, node.prod,
                    children=tuple(tuple(clone_node(c, ids) for c in f) for f in node.children))
    return Node(ids(), node.tag, node.kind, token=node.token)


class Tree:
    """Immutable grammar-typed tree.  ``next_id`` is the first id never used."""

    __slots__ = ("grammar", "root", "next_id", "_index")

    def __init__(self, grammar: Grammar, root: Node, next_id: Optional[int] = None):
        self.grammar = grammar
        self.root = root
        if next_id is None:
            next_id = max(n.id for n in root.preorder()) + 1
        self.next_id = next_id
        self._index = None

    @property
    def index(self) -> dict:
        """``id -> (node, parent_id, field_index, child_index)``."""
        if self._index is None:
            idx = {self.root.id: (self.root, None, None, None)}
            stack = [self.root]
            while stack:
                n = stack.pop()
                for fi, f in enumerate(n.children):
                    for ci, c in enumerate(f):
                        if c.id in idx:
                            raise TreeError(f"duplicate node id {c.id}")
                        idx[c.id] = (c, n.id, fi, ci)
                        if c.children:
                            stack.append(c)
            self._index = idx
        return self._index

    def node(self, node_id: int) -> Node:
        return self.index[node_id][0]

    def __contains__(self, node_id):
        return node_id in self.index

    def nodes(self) -> list[Node]:
        return list(self.root.preorder())

    def parent(self, node_id: int) -> Optional[Node]:
        pid = self.index[node_id][1]
        return None if pid is None else self.index[pid][0]

    def field_of(self, node_id: int) -> Optional[FieldDecl]:
        _, pid, fi, _ = self.index[node_id]
        if pid is None:
            return None
        return self.index[pid][0].prod.fields[fi]

    def slot_type(self, node_id: int) -> str:
        f = self.field_of(node_id)
        return self.grammar.root_type if f is None else f.accepts

    def tokens(self) -> list[Node]:
        return [n for n in self.root.preorder() if n.tag == TOKEN]

    def __len__(self):
        return len(self.index)

    def __repr__(self):
        return f"Tree({to_sexpr(self.root, include_dummies=True)})"


# --------------------------------------------------------------------------- #
# validation, equality, dummies

def validate(t: Tree) -> None:
    """Check every node invariant; raises :class:`TreeError` on the first violation."""
    g = t.grammar
    root = t.root
    if root.tag != RULE or root.prod.head != g.root_type:
        raise TreeError("root must be a production of the root type")
    seen = set()
    stack = [(root, g.root_type)]
    while stack:
        n, accepts = stack.pop()
        if n.id in seen:
            raise TreeError(f"duplicate node id {n.id}")
        seen.add(n.id)
        if n.tag == DUMMY:
            if n.kind != accepts:
                raise TreeError(f"dummy {n.id} typed {n.kind!r} in a {accepts!r} slot")
            continue
        if n.tag == TOKEN:
            if not g.is_terminal(accepts) or n.kind != accepts:
                raise TreeError(f"token {n.token!r} of kind {n.kind!r} in a {accepts!r} slot")
            if n.children:
                raise TreeError("token nodes have no children")
            continue
        if n.prod.head != accepts:
            raise TreeError(f"{n.prod.constructor} ({n.prod.head}) in a {accepts!r} slot")
        if len(n.children) != len(n.prod.fields):
            raise TreeError(f"{n.prod.constructor} node {n.id} has wrong number of fields")
        for f, kids in zip(n.prod.fields, n.children):
            if f.cardinality is Cardinality.SEQUENTIAL:
                if not kids or kids[-1].tag != DUMMY:
                    raise TreeError(f"sequential field {f.name} of node {n.id} must end in a dummy")
                if any(c.tag == DUMMY for c in kids[:-1]):
                    raise TreeError(f"sequential field {f.name} of node {n.id} has an inner dummy")
            elif len(kids) != 1:
                raise TreeError(f"field {f.name} of node {n.id} must hold exactly one child")
            for c in kids:
                stack.append((c, f.accepts))


def is_valid(t: Tree) -> bool:
    try:
        validate(t)
        return True
    except TreeError:
        return False


def _clear(n: Node) -> Node:
    if n.tag != RULE:
        return n
    return n.with_children(tuple(tuple(_clear(c) for c in f if c.tag != DUMMY) for f in n.children))


def clear_dummies(t: Tree) -> Tree:
    """Copy of ``t`` without dummies.  The result may have empty fields."""
    return Tree(t.grammar, _clear(t.root), t.next_id)


def structural_eq(a: Tree, b: Tree) -> bool:
    ra = a.root if isinstance(a, Tree) else a
    rb = b.root if isinstance(b, Tree) else b
    return ra.ekey == rb.ekey


def has_dummies(t: Tree) -> bool:
    for n in t.root.preorder():
        if n.tag == DUMMY:
            return True
    return False


# --------------------------------------------------------------------------- #
# graph view

PARENT_TO_CHILD, CHILD_TO_PARENT, NEXT_SIBLING, PREV_SIBLING = range(4)
EDGE_TYPES = ("ParentToChild", "ChildToParent", "NextSibling", "PrevSibling")


@dataclass
class Graph:
    nodes: list          # Node objects in pre-order
    edges: list          # (src position, dst position, edge type)

    def edge_counts(self) -> dict:
        counts = dict.fromkeys(EDGE_TYPES, 0)
        for _, _, e in self.edges:
            counts[EDGE_TYPES[e]] += 1
        return counts


def as_graph(t) -> Graph:
    """Nodes (dummies included) plus parent/child and adjacent-sibling edges.

    Siblings are adjacent children of the same parent, taken in field order.
    """
    root = t.root if isinstance(t, Tree) else t
    nodes = list(root.preorder())
    pos = {n.id: i for i, n in enumerate(nodes)}
    edges = []
    for n in nodes:
        if not n.children:
            continue
        p = pos[n.id]
        prev = None
        for c in n.iter_children():
            q = pos[c.id]
            edges.append((p, q, PARENT_TO_CHILD))
            edges.append((q, p, CHILD_TO_PARENT))
            if prev is not None:
                edges.append((prev, q, NEXT_SIBLING))
                edges.append((q, prev, PREV_SIBLING))
            prev = q
    return Graph(nodes, edges)


# --------------------------------------------------------------------------- #
# subtree memory

class SubtreeMemory:
    """Every non-dummy subtree of an initial tree, in pre-order, deduplicated
    by structural equality (first occurrence wins)."""

    def __init__(self, t):
        root = t.root if isinstance(t, Tree) else t
        self.entries: list[Node] = []
        self._by_key: dict[int, int] = {}
        for n in root.preorder():
            if n.tag == DUMMY:
                continue
            k = n.ekey
            if k not in self._by_key:
                self._by_key[k] = len(self.entries)
                self.entries.append(n)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> Node:
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    def find(self, node: Node) -> Optional[int]:
        """Index of the entry structurally equal to ``node``, if any."""
        return self._by_key.get(node.ekey)

    def fits(self, i: int, accepts: str) -> bool:
        return self.entries[i].kind == accepts

    def tokens(self) -> list[Node]:
        return [n for n in self.entries if n.tag == TOKEN]


def subtree_memory(t) -> SubtreeMemory:
    return SubtreeMemory(t)


# --------------------------------------------------------------------------- #
# s-expressions

def to_sexpr(t, include_dummies: bool = False) -> str:
    """``(Ctor child ...)``; sequential fields are bracketed, empty single or
    optional slots print as ``_``, trailing sequential dummies only on request."""
    node = t.root if isinstance(t, Tree) else t
    out: list[str] = []
    _emit(node, include_dummies, out)
    return "".join(out)


def _emit(n: Node, include_dummies, out):
    if n.tag == TOKEN:
        out.append(json.dumps(n.token))
        return
    if n.tag == DUMMY:
        out.append("_")
        return
    out.append("(")
    out.append(n.prod.constructor)
    for f, kids in zip(n.prod.fields, n.children):
        out.append(" ")
        if f.cardinality is Cardinality.SEQUENTIAL:
            out.append("[")
            first = True
            for c in kids:
                if c.tag == DUMMY and not include_dummies:
                    continue
                if not first:
                    out.append(" ")
                _emit(c, include_dummies, out)
                first = False
            out.append("]")
        elif not kids:
            out.append("_")
        else:
            _emit(kids[0], include_dummies, out)
    out.append(")")


serialize = to_sexpr

_TOKEN_RE = re.compile(r'\s*(?:(\()|(\))|(\[)|(\])|("(?:[^"\\]|\\.)*")|([A-Za-z_][A-Za-z0-9_]*))')


def _lex(text: str):
    pos = 0
    toks = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            raise TreeError(f"unexpected character at offset {pos}: {text[pos:pos + 10]!r}")
        kind = m.lastindex
        toks.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return toks


def parse_tree(g: Grammar, text: str) -> Tree:
    """Parse the s-expression format.  Sequential fields receive their
    trailing dummy automatically when it is not written out."""
    toks = _lex(text)
    if not toks:
        raise TreeError("empty tree text")
    ids = _Ids()
    pos, root = _parse(g, toks, 0, g.root_type, ids)
    if pos != len(toks):
        raise TreeError(f"trailing input at offset {toks[pos][2]}")
    if root.tag != RULE:
        raise TreeError("root must be a production")
    t = Tree(g, root, ids.next)
    validate(t)
    return t


deserialize = parse_tree


def _parse(g, toks, i, accepts, ids):
    if i >= len(toks):
        raise TreeError("unexpected end of input")
    kind, val, off = toks[i]
    if kind == 6 and val == "_":
        return i + 1, make_dummy(accepts, ids)
    if kind == 5:
        if not g.is_terminal(accepts):
            raise TreeError(f"token {val} at offset {off} where {accepts!r} is expected")
        return i + 1, make_token(accepts, json.loads(val), ids)
    if kind != 1:
        raise TreeError(f"expected '(' at offset {off}")
    if i + 1 >= len(toks) or toks[i + 1][0] != 6:
        raise TreeError(f"expected a constructor at offset {off + 1}")
    ctor = toks[i + 1][1]
    try:
        prod = g.lookup(accepts, ctor)
    except KeyError:
        raise TreeError(f"{ctor!r} at offset {toks[i + 1][2]} is not a constructor of {accepts!r}") from None
    node_id = ids()
    i += 2
    children = []
    for f in prod.fields:
        if i < len(toks) and toks[i][0] == 2:
            raise TreeError(f"arity error: {ctor} expects {len(prod.fields)} fields at offset {toks[i][2]}")
        if f.cardinality is Cardinality.SEQUENTIAL:
            if i >= len(toks) or toks[i][0] != 3:
                raise TreeError(f"expected '[' for sequential field {f.name} of {ctor}")
            i += 1
            kids = []
            while i < len(toks) and toks[i][0] != 4:
                i, c = _parse(g, toks, i, f.accepts, ids)
                kids.append(c)
            if i >= len(toks):
                raise TreeError("unterminated '['")
            i += 1
            if not kids or kids[-1].tag != DUMMY:
                kids.append(make_dummy(f.accepts, ids))
            children.append(tuple(kids))
        else:
            i, c = _parse(g, toks, i, f.accepts, ids)
            children.append((c,))
    if i >= len(toks) or toks[i][0] != 2:
        off = toks[i][2] if i < len(toks) else -1
        raise TreeError(f"arity error: {ctor} expects {len(prod.fields)} fields (offset {off})")
    return i + 1, Node(node_id, RULE, prod.head, prod=prod, children=tuple(children))
