"""Edit actions and their application.

Four operators act on a tree ``g_t``:

* ``Delete(n)`` removes ``n`` and its descendants.  A single/optional slot is
  refilled with a dummy; in a sequential field the child just disappears.
* ``Add(anchor, value)`` places a fresh node (a production instantiated with
  dummies, or a terminal token).  In single/optional fields the anchor must be
  the slot's dummy and is replaced; in sequential fields the anchor may be any
  child and the new node is inserted before it.
* ``CopySubTree(anchor, i)`` positions like ``Add`` but inserts a deep copy of
  entry ``i`` of the initial tree's subtree memory.
* ``Stop`` clears the remaining dummies.

Actions address nodes by id.  Scripts are written out with id-free paths
(``rhs/args[1]``) so they survive id regeneration.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Union

from .grammar import Cardinality, Production
from .tree import (DUMMY, RULE, TOKEN, Node, SubtreeMemory, Tree, _Ids, clear_dummies,
                   clone_node, instantiate_node, make_dummy, make_token, subtree_memory)


class EditError(ValueError):
    pass


class IllegalTarget(EditError):
    pass


class TypeMismatch(EditError):
    pass


class UnknownNode(EditError):
    pass


class ReplayError(EditError):
    def __init__(self, index: int, cause: Exception):
        self.index = index
        self.cause = cause
        super().__init__(f"action {index}: {cause}")


@dataclass(frozen=True)
class Token:
    kind: str
    value: str

    def __str__(self):
        return json.dumps(self.value)


@dataclass(frozen=True)
class Delete:
    target: int


@dataclass(frozen=True)
class Add:
    anchor: int
    value: Union[Production, Token]


@dataclass(frozen=True)
class CopySubTree:
    anchor: int
    source: int     # index into the initial tree's subtree memory


@dataclass(frozen=True)
class Stop:
    pass


STOP = Stop()
EditAction = Union[Delete, Add, CopySubTree, Stop]

# Operator ids shared with the model.
DELETE_OP, ADD_OP, COPY_OP, STOP_OP = range(4)
OPERATORS = ("Delete", "Add", "CopySubTree", "Stop")


def operator_of(a: EditAction) -> int:
    if isinstance(a, Delete):
        return DELETE_OP
    if isinstance(a, Add):
        return ADD_OP
    if isinstance(a, CopySubTree):
        return COPY_OP
    return STOP_OP


def operator_kind(a: EditAction) -> str:
    """Coarse label used in tests and reports: Delete, Add-rule, Add-token, CopySubTree, Stop."""
    if isinstance(a, Add):
        return "Add-rule" if isinstance(a.value, Production) else "Add-token"
    return OPERATORS[operator_of(a)]


class EditScript(tuple):
    """Ordered actions; ``Stop`` may appear only as the final action."""

    def __new__(cls, actions: Iterable[EditAction] = ()):
        self = super().__new__(cls, actions)
        for i, a in enumerate(self):
            if isinstance(a, Stop) and i != len(self) - 1:
                raise ValueError("Stop must be the last action of a script")
        return self

    @property
    def stopped(self) -> bool:
        return bool(self) and isinstance(self[-1], Stop)

    def __repr__(self):
        return f"EditScript({list(self)!r})"


# --------------------------------------------------------------------------- #
# application

def _lookup(t: Tree, node_id: int):
    try:
        return t.index[node_id]
    except KeyError:
        raise UnknownNode(f"node {node_id} is not in the tree") from None


def _replace_child(t: Tree, parent_id: int, field_index: int, new_kids: tuple) -> Node:
    """Path-copy from ``parent_id`` to the root with one field replaced."""
    idx = t.index
    node, pid, fi, ci = idx[parent_id]
    kids = list(node.children)
    kids[field_index] = new_kids
    new = node.with_children(tuple(kids))
    while pid is not None:
        pnode, ppid, pfi, pci = idx[pid]
        pkids = list(pnode.children)
        f = list(pkids[fi])
        f[ci] = new
        pkids[fi] = tuple(f)
        new = pnode.with_children(tuple(pkids))
        pid, fi, ci = ppid, pfi, pci
    return new


def _slot(t: Tree, anchor: int):
    node, pid, fi, ci = _lookup(t, anchor)
    if pid is None:
        raise IllegalTarget("the root is not an insertion position")
    parent = t.index[pid][0]
    return node, parent, fi, ci, parent.prod.fields[fi]


def _place(t: Tree, anchor: int, make) -> Tree:
    node, parent, fi, ci, field = _slot(t, anchor)
    ids = _Ids(t.next_id)
    kids = parent.children[fi]
    if field.cardinality is Cardinality.SEQUENTIAL:
        new_node = make(field.accepts, ids)
        new_kids = kids[:ci] + (new_node,) + kids[ci:]
    else:
        if node.tag != DUMMY:
            raise IllegalTarget(f"node {anchor} is not the dummy of a single/optional field")
        new_node = make(field.accepts, ids)
        new_kids = (new_node,)
    return Tree(t.grammar, _replace_child(t, parent.id, fi, new_kids), ids.next)


def apply(t: Tree, memory: Optional[SubtreeMemory], a: EditAction) -> Tree:
    """Apply one action, returning the successor tree."""
    if isinstance(a, Stop):
        return clear_dummies(t)
    if isinstance(a, Delete):
        node, pid, fi, ci = _lookup(t, a.target)
        if pid is None:
            raise IllegalTarget("the root cannot be deleted")
        if node.tag == DUMMY:
            raise IllegalTarget(f"node {a.target} is a dummy")
        parent = t.index[pid][0]
        field = parent.prod.fields[fi]
        kids = parent.children[fi]
        if field.cardinality is Cardinality.SEQUENTIAL:
            new_kids = kids[:ci] + kids[ci + 1:]
            next_id = t.next_id
        else:
            new_kids = (make_dummy(field.accepts, lambda: t.next_id),)
            next_id = t.next_id + 1
        return Tree(t.grammar, _replace_child(t, pid, fi, new_kids), next_id)
    if isinstance(a, Add):
        value = a.value
        if isinstance(value, Production):
            def make(accepts, ids):
                if value.head != accepts:
                    raise TypeMismatch(f"{value.constructor} ({value.head}) cannot fill a {accepts!r} slot")
                return instantiate_node(value, ids)
        elif isinstance(value, Token):
            def make(accepts, ids):
                if value.kind != accepts:
                    raise TypeMismatch(f"{value.kind} token cannot fill a {accepts!r} slot")
                return make_token(value.kind, value.value, ids)
        else:
            raise TypeError(f"bad Add value {value!r}")
        return _place(t, a.anchor, make)
    if isinstance(a, CopySubTree):
        if memory is None or not 0 <= a.source < len(memory):
            raise IllegalTarget(f"memory entry {a.source} does not exist")
        src = memory[a.source]

        def make(accepts, ids):
            if src.kind != accepts:
                raise TypeMismatch(f"subtree of type {src.kind!r} cannot fill a {accepts!r} slot")
            return clone_node(src, ids)
        return _place(t, a.anchor, make)
    raise TypeError(f"not an edit action: {a!r}")


def replay(t0: Tree, script: Iterable[EditAction], memory: Optional[SubtreeMemory] = None,
           trace: Optional[list] = None) -> Tree:
    """Fold :func:`apply` over ``script``; the memory defaults to ``t0``'s.

    When ``trace`` is a list, every intermediate tree (including ``t0``) is
    appended to it.
    """
    if memory is None:
        memory = subtree_memory(t0)
    t = t0
    if trace is not None:
        trace.append(t)
    for i, a in enumerate(script):
        try:
            t = apply(t, memory, a)
        except EditError as e:
            raise ReplayError(i, e) from e
        if trace is not None:
            trace.append(t)
    return t


# --------------------------------------------------------------------------- #
# legality

def insertion_anchors(t: Tree) -> list[tuple[Node, str]]:
    """Every position where Add/CopySubTree may act, with the accepted type."""
    out = []
    for n in t.root.preorder():
        if n.tag != RULE:
            continue
        for f, kids in zip(n.prod.fields, n.children):
            if f.cardinality is Cardinality.SEQUENTIAL:
                out.extend((c, f.accepts) for c in kids)
            elif kids[0].tag == DUMMY:
                out.append((kids[0], f.accepts))
    return out


def deletable(t: Tree) -> list[Node]:
    root = t.root
    return [n for n in root.preorder() if n.tag != DUMMY and n is not root]


def token_candidates(accepts: str, vocab: Iterable[Token], memory: Optional[SubtreeMemory]) -> list[Token]:
    """Vocabulary tokens of kind ``accepts`` plus tokens of the initial tree."""
    seen = {}
    for tok in vocab:
        if tok.kind == accepts:
            seen.setdefault(tok, None)
    if memory is not None:
        for n in memory.tokens():
            if n.kind == accepts:
                seen.setdefault(Token(n.kind, n.token), None)
    return list(seen)


def legal_actions(t: Tree, memory: Optional[SubtreeMemory], vocab: Iterable[Token] = ()) -> list[EditAction]:
    """Exactly the actions :func:`apply` accepts on ``t``, in a fixed order."""
    g = t.grammar
    vocab = list(vocab)
    actions: list[EditAction] = [Delete(n.id) for n in deletable(t)]
    for anchor, accepts in insertion_anchors(t):
        if g.is_terminal(accepts):
            actions.extend(Add(anchor.id, tok) for tok in token_candidates(accepts, vocab, memory))
        else:
            actions.extend(Add(anchor.id, p) for p in g.productions_of(accepts))
        if memory is not None:
            actions.extend(CopySubTree(anchor.id, i) for i, m in enumerate(memory) if m.kind == accepts)
    actions.append(STOP)
    return actions


# --------------------------------------------------------------------------- #
# id-free paths and the script text format

def node_path(t: Tree, node_id: int) -> tuple:
    """``((field_index, child_index_or_None), ...)`` from the root."""
    steps = []
    idx = t.index
    _, pid, fi, ci = _lookup(t, node_id)
    while pid is not None:
        parent = idx[pid][0]
        seq = parent.prod.fields[fi].cardinality is Cardinality.SEQUENTIAL
        steps.append((fi, ci if seq else None))
        _, pid, fi, ci = idx[pid]
    return tuple(reversed(steps))


def resolve_path(t: Tree, path) -> int:
    n = t.root
    for fi, ci in path:
        if n.tag != RULE or fi >= len(n.children):
            raise UnknownNode(f"path {path!r} does not exist")
        kids = n.children[fi]
        i = 0 if ci is None else ci
        if i >= len(kids):
            raise UnknownNode(f"path {path!r} does not exist")
        n = kids[i]
    return n.id


def format_path(t: Tree, path) -> str:
    if not path:
        return "."
    parts = []
    n = t.root
    for fi, ci in path:
        name = n.prod.fields[fi].name
        parts.append(name if ci is None else f"{name}[{ci}]")
        n = n.children[fi][0 if ci is None else ci]
    return "/".join(parts)


_STEP = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)(?:\[(\d+)\])?$")


def parse_path(t: Tree, text: str) -> tuple:
    if text == ".":
        return ()
    path = []
    n = t.root
    for part in text.split("/"):
        m = _STEP.match(part)
        if not m or n.tag != RULE:
            raise UnknownNode(f"bad path {text!r}")
        try:
            fi = n.prod.field_index(m.group(1))
        except KeyError:
            raise UnknownNode(f"bad path {text!r}: no field {m.group(1)!r}") from None
        seq = n.prod.fields[fi].cardinality is Cardinality.SEQUENTIAL
        if seq != (m.group(2) is not None):
            raise UnknownNode(f"bad path {text!r}: index use does not match field cardinality")
        ci = int(m.group(2)) if seq else None
        kids = n.children[fi]
        if (ci or 0) >= len(kids):
            raise UnknownNode(f"bad path {text!r}: index out of range")
        path.append((fi, ci))
        n = kids[ci or 0]
    return tuple(path)


def action_to_text(t: Tree, a: EditAction) -> str:
    if isinstance(a, Stop):
        return "STOP"
    if isinstance(a, Delete):
        return f"DEL {format_path(t, node_path(t, a.target))}"
    if isinstance(a, Add):
        where = format_path(t, node_path(t, a.anchor))
        if isinstance(a.value, Production):
            return f"ADD {where} RULE {a.value.constructor}"
        return f"ADD {where} TOK {json.dumps(a.value.value)}"
    return f"CPY {format_path(t, node_path(t, a.anchor))} {a.source}"


def action_from_text(t: Tree, line: str) -> EditAction:
    parts = line.strip().split(" ", 3)
    op = parts[0]
    if op == "STOP" and len(parts) == 1:
        return STOP
    if op == "DEL" and len(parts) == 2:
        return Delete(resolve_path(t, parse_path(t, parts[1])))
    if op == "CPY" and len(parts) == 3:
        return CopySubTree(resolve_path(t, parse_path(t, parts[1])), int(parts[2]))
    if op == "ADD" and len(parts) == 4:
        anchor = resolve_path(t, parse_path(t, parts[1]))
        accepts = t.slot_type(anchor)
        if parts[2] == "RULE":
            try:
                return Add(anchor, t.grammar.lookup(accepts, parts[3]))
            except KeyError:
                raise TypeMismatch(f"{parts[3]!r} is not a constructor of {accepts!r}") from None
        if parts[2] == "TOK":
            return Add(anchor, Token(accepts, json.loads(parts[3])))
    raise EditError(f"cannot parse action {line!r}")


def script_to_text(t0: Tree, script: Iterable[EditAction], memory: Optional[SubtreeMemory] = None) -> str:
    """One action per line, each path relative to the tree the action applies to."""
    if memory is None:
        memory = subtree_memory(t0)
    lines = []
    t = t0
    for a in script:
        lines.append(action_to_text(t, a))
        t = apply(t, memory, a)
    return "\n".join(lines) + ("\n" if lines else "")


def script_from_text(t0: Tree, text: str, memory: Optional[SubtreeMemory] = None) -> EditScript:
    """Parse a script, resolving each line against the tree it applies to."""
    if memory is None:
        memory = subtree_memory(t0)
    actions = []
    t = t0
    for i, line in enumerate(l for l in text.splitlines() if l.strip()):
        try:
            a = action_from_text(t, line)
            t = apply(t, memory, a)
        except EditError as e:
            raise ReplayError(i, e) from e
        actions.append(a)
    return EditScript(actions)
