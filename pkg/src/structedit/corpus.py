"""Synthetic MiniLang edit pairs.

Each example is a random statement plus one rewrite rule applied at the first
eligible site in pre-order.  When a sampled tree has no eligible site, an
instance of the rule's pattern is planted at a random expression position.
Rules share an intent across examples, which is what the one-shot protocol
needs.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from .grammar import Cardinality, Grammar, minilang
from .tree import DUMMY, RULE, Node, Tree, TreeError, _Ids, make_dummy, make_token, parse_tree, to_sexpr, validate

NAMES = ("a", "b", "c", "i", "j", "k", "n", "x", "y", "z", "acc", "buf", "data", "item", "total")
FUNCS = ("foo", "bar", "baz", "qux", "load", "emit")
RENAMES = {f: f + "2" for f in FUNCS}
CHECK = "check"
INTS = tuple(str(i) for i in range(10))
MAX_DEPTH = 5
MAX_SEQ = 3
SPLITS = ("train", "dev", "test")
DEFAULT_SIZES = {"train": 2000, "dev": 250, "test": 250, "oneshot": 400}


class CorpusError(ValueError):
    def __init__(self, message, index: Optional[int] = None):
        self.index = index
        super().__init__(message if index is None else f"line {index}: {message}")


@dataclass(frozen=True)
class Example:
    src: Tree
    tgt: Tree
    category: str

    def to_json(self) -> str:
        return json.dumps({"src": to_sexpr(self.src), "tgt": to_sexpr(self.tgt), "category": self.category})


# --------------------------------------------------------------------------- #
# tree construction helpers (nodes built directly, ids assigned by Tree)

class _B:
    """Node builder over a grammar with a private id counter."""

    def __init__(self, g: Grammar):
        self.g = g
        self.ids = _Ids(0)

    def rule(self, head, ctor, *fields):
        p = self.g.lookup(head, ctor)
        kids = []
        for f, val in zip(p.fields, fields):
            if f.is_sequential:
                kids.append(tuple(val) + (make_dummy(f.accepts, self.ids),))
            elif val is None:
                kids.append((make_dummy(f.accepts, self.ids),))
            else:
                kids.append((val,))
        return Node(self.ids(), RULE, head, p, None, tuple(kids))

    def tok(self, kind, value):
        return make_token(kind, value, self.ids)

    def name(self, v):
        return self.rule("expr", "Name", self.tok("ident", v))

    def num(self, v):
        return self.rule("expr", "Num", self.tok("int", v))

    def op(self, ctor):
        return self.rule("op", ctor)

    def copy(self, n: Node) -> Node:
        if n.tag == RULE:
            return Node(self.ids(), n.tag, n.kind, n.prod, None,
                        tuple(tuple(self.copy(c) for c in kids) for kids in n.children))
        return Node(self.ids(), n.tag, n.kind, n.prod, n.token, ())


def _ctor(n: Node) -> Optional[str]:
    return n.prod.constructor if n.tag == RULE else None


def _real(kids):
    return [c for c in kids if c.tag != 2]


def _depth(n: Node) -> int:
    if n.tag != RULE:
        return 0
    return 1 + max((_depth(c) for c in n.iter_children()), default=0)


class Sampler:
    def __init__(self, rng: random.Random, g: Grammar):
        self.rng = rng
        self.b = _B(g)

    def expr(self, depth: int) -> Node:
        """Random expression whose rule-node nesting is at most ``depth``."""
        r, b = self.rng, self.b
        if depth <= 2:
            kinds, weights = ("Name", "Num"), (3, 2)
        else:
            kinds = ("Name", "Num", "BinOp", "Call", "Index", "Neg")
            weights = (6, 4, 4, 3, 2, 2)
        k = r.choices(kinds, weights)[0]
        if k == "Name":
            return b.name(r.choice(NAMES))
        if k == "Num":
            return b.num(r.choice(INTS))
        if k == "BinOp":
            return b.rule("expr", "BinOp", self.expr(depth - 1), b.op(r.choice(("Add", "Sub", "Mul", "Div"))),
                          self.expr(depth - 1))
        if k == "Call":
            n = r.choice((0, 1, 1, 2, 2, 3))
            return b.rule("expr", "Call", b.tok("ident", r.choice(FUNCS)), [self.expr(depth - 1) for _ in range(n)])
        if k == "Index":
            return b.rule("expr", "Index", self.expr(depth - 1), self.expr(depth - 1))
        return b.rule("expr", "Neg", self.expr(depth - 1))

    def stmt(self) -> Node:
        lhs = self.expr(2) if self.rng.random() < 0.8 else self.expr(3)
        return self.b.rule("stmt", "Assign", lhs, self.expr(MAX_DEPTH - 1))


# --------------------------------------------------------------------------- #
# rewrite rules

class Rule:
    """``match`` tests a node, ``rewrite`` returns its replacement, ``plant``
    builds a small matching expression from a sampler."""

    name: str
    structure_invariant = False

    def match(self, n: Node) -> bool:
        raise NotImplementedError

    def rewrite(self, b: _B, n: Node) -> Node:
        raise NotImplementedError

    def plant(self, s: Sampler, depth: int) -> Node:
        raise NotImplementedError

    def rhs_only(self) -> bool:
        return False


class CallToIndex(Rule):
    name = "call_to_index"
    structure_invariant = True

    def match(self, n):
        return _ctor(n) == "Call" and len(_real(n.children[1])) == 2

    def rewrite(self, b, n):
        a, c = _real(n.children[1])
        return b.rule("expr", "Index", b.copy(a), b.copy(c))

    def plant(self, s, depth):
        return s.b.rule("expr", "Call", s.b.tok("ident", s.rng.choice(FUNCS)),
                        [s.expr(min(depth - 1, 2)), s.expr(min(depth - 1, 2))])


class OperandSwap(Rule):
    name = "operand_swap"
    structure_invariant = True

    def match(self, n):
        if _ctor(n) != "BinOp":
            return False
        return _ctor(n.children[0][0]) != _ctor(n.children[2][0])

    def rewrite(self, b, n):
        l, o, r = (k[0] for k in n.children)
        return b.rule("expr", "BinOp", b.copy(r), b.copy(o), b.copy(l))

    def plant(self, s, depth):
        b = s.b
        left = b.name(s.rng.choice(NAMES))
        right = s.expr(min(depth - 1, 3))
        while _ctor(right) == "Name":
            right = s.expr(min(depth - 1, 3))
        if s.rng.random() < 0.5:
            left, right = right, left
        return b.rule("expr", "BinOp", left, b.op(s.rng.choice(("Add", "Sub", "Mul", "Div"))), right)


class DoubleNegation(Rule):
    name = "double_negation"

    def match(self, n):
        return _ctor(n) == "Neg" and _ctor(n.children[0][0]) == "Neg"

    def rewrite(self, b, n):
        return b.copy(n.children[0][0].children[0][0])

    def plant(self, s, depth):
        return s.b.rule("expr", "Neg", s.b.rule("expr", "Neg", s.expr(min(depth - 2, 3))))


class _Identity(Rule):
    op = ""
    unit = ""

    def match(self, n):
        if _ctor(n) != "BinOp":
            return False
        o, r = n.children[1][0], n.children[2][0]
        return _ctor(o) == self.op and _ctor(r) == "Num" and r.children[0][0].token == self.unit

    def rewrite(self, b, n):
        return b.copy(n.children[0][0])

    def plant(self, s, depth):
        b = s.b
        return b.rule("expr", "BinOp", s.expr(min(depth - 1, 3)), b.op(self.op), b.num(self.unit))


class MulByOne(_Identity):
    name = "mul_by_one"
    op, unit = "Mul", "1"


class AddZero(_Identity):
    name = "add_zero"
    op, unit = "Add", "0"


class RenameCallAppendLiteral(Rule):
    name = "rename_call_append_literal"

    def match(self, n):
        return (_ctor(n) == "Call" and n.children[0][0].token in RENAMES
                and len(_real(n.children[1])) < MAX_SEQ)

    def rewrite(self, b, n):
        args = [b.copy(a) for a in _real(n.children[1])] + [b.num("0")]
        return b.rule("expr", "Call", b.tok("ident", RENAMES[n.children[0][0].token]), args)

    def plant(self, s, depth):
        n = s.rng.choice((0, 1, 2))
        return s.b.rule("expr", "Call", s.b.tok("ident", s.rng.choice(FUNCS)),
                        [s.expr(min(depth - 1, 2)) for _ in range(n)])


class WrapInCheckCall(Rule):
    name = "wrap_in_check_call"

    def match(self, n):
        return n.tag == RULE and n.kind == "expr"

    def rhs_only(self):
        return True

    def rewrite(self, b, n):
        return b.rule("expr", "Call", b.tok("ident", CHECK), [b.copy(n)])

    def plant(self, s, depth):
        return s.expr(depth)


class NegateOperand(Rule):
    name = "negate_operand"

    def match(self, n):
        return _ctor(n) == "BinOp" and _ctor(n.children[2][0]) != "Neg"

    def rewrite(self, b, n):
        l, o, r = (k[0] for k in n.children)
        return b.rule("expr", "BinOp", b.copy(l), b.copy(o), b.rule("expr", "Neg", b.copy(r)))

    def plant(self, s, depth):
        b = s.b
        return b.rule("expr", "BinOp", s.expr(min(depth - 1, 3)), b.op(s.rng.choice(("Add", "Sub", "Mul", "Div"))),
                      s.expr(min(depth - 1, 2)))


class IdentityEdit(Rule):
    """Leaves the tree unchanged; not part of the default rule set."""
    name = "identity"
    structure_invariant = True

    def match(self, n):
        return n.tag == RULE and n.kind == "stmt"

    def rewrite(self, b, n):
        return b.copy(n)

    def plant(self, s, depth):
        return s.expr(depth)


DEFAULT_RULES = (CallToIndex(), OperandSwap(), DoubleNegation(), MulByOne(), AddZero(),
                 RenameCallAppendLiteral(), WrapInCheckCall(), NegateOperand())
ALL_RULES = DEFAULT_RULES + (IdentityEdit(),)
RULES_BY_NAME = {r.name: r for r in ALL_RULES}
STRUCTURE_INVARIANT = tuple(r.name for r in DEFAULT_RULES if r.structure_invariant)


def _first_site(root: Node, rule: Rule):
    """Path to the first pre-order node matching ``rule``."""
    if rule.rhs_only():
        return ((1, 0),) if root.prod.constructor == "Assign" else None
    stack = [(root, ())]
    while stack:
        n, path = stack.pop()
        if rule.match(n):
            return path
        kids = []
        for fi, ks in enumerate(n.children):
            for ci, c in enumerate(ks):
                if c.tag == RULE:
                    kids.append((c, path + ((fi, ci),)))
        stack.extend(reversed(kids))
    return None


def _get(root, path):
    for fi, ci in path:
        root = root.children[fi][ci]
    return root


def _replace(root: Node, path, new: Node) -> Node:
    if not path:
        return new
    (fi, ci), rest = path[0], path[1:]
    kids = list(root.children)
    row = list(kids[fi])
    row[ci] = _replace(row[ci], rest, new)
    kids[fi] = tuple(row)
    return root.with_children(tuple(kids))


def _expr_slots(root: Node, depth_left: int, path=(), out=None):
    """Single-field expression positions, with the depth budget remaining."""
    out = [] if out is None else out
    for fi, (f, ks) in enumerate(zip(root.prod.fields, root.children)):
        for ci, c in enumerate(ks):
            if c.tag == RULE and c.kind == "expr":
                out.append((path + ((fi, ci),), depth_left))
                _expr_slots(c, depth_left - 1, path + ((fi, ci),), out)
    return out


def _tree(g: Grammar, root: Node) -> Tree:
    t = parse_tree(g, to_sexpr(Tree(g, root, 10 ** 6), include_dummies=True))
    validate(t)
    return t


def make_example(rng: random.Random, rule: Rule, g: Grammar, retries: int = 20) -> Example:
    s = Sampler(rng, g)
    for _ in range(retries):
        root = s.stmt()
        path = _first_site(root, rule)
        if path is None:
            slots = [(p, d) for p, d in _expr_slots(root, MAX_DEPTH - 1) if d >= 3]
            if not slots:
                continue
            p, d = rng.choice(slots)
            root = _replace(root, p, rule.plant(s, d))
            path = _first_site(root, rule)
            if path is None:
                continue
        if _depth(root) > MAX_DEPTH:
            continue
        new = _replace(root, path, rule.rewrite(s.b, _get(root, path)))
        src, tgt = _tree(g, root), _tree(g, new)
        if rule.name != "identity" and to_sexpr(src) == to_sexpr(tgt):
            continue
        return Example(src, tgt, rule.name)
    raise CorpusError(f"rule {rule.name} could not be applied")


def quotas(n: int, names: Sequence[str], weights: Optional[Sequence[float]] = None) -> dict:
    """Exact per-category counts by the largest-remainder method."""
    weights = [1.0] * len(names) if weights is None else list(weights)
    tot = float(sum(weights))
    raw = [n * w / tot for w in weights]
    base = [int(x) for x in raw]
    order = sorted(range(len(names)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[: n - sum(base)]:
        base[i] += 1
    return dict(zip(names, base))


def generate_split(seed: int, split: str, n: int, rules: Sequence[Rule] = DEFAULT_RULES,
                   grammar: Optional[Grammar] = None, weights=None) -> list[Example]:
    if not rules:
        raise CorpusError("rule set is empty")
    g = grammar or minilang()
    rng = random.Random(f"{seed}/{split}")
    counts = quotas(n, [r.name for r in rules], weights)
    plan = [r for r in rules for _ in range(counts[r.name])]
    rng.shuffle(plan)
    return [make_example(rng, r, g) for r in plan]


def generate(seed: int = 0, sizes: Optional[dict] = None, rules: Sequence[Rule] = DEFAULT_RULES,
             grammar: Optional[Grammar] = None) -> dict:
    """Datasets keyed by split name; sizes default to 2000/250/250 and a
    400-example one-shot set."""
    sizes = dict(DEFAULT_SIZES if sizes is None else sizes)
    return {split: generate_split(seed, split, n, rules, grammar) for split, n in sizes.items()}


# --------------------------------------------------------------------------- #
# files

def dumps(examples: Iterable[Example]) -> str:
    return "".join(e.to_json() + "\n" for e in examples)


def save(path, examples: Iterable[Example]):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(examples))


def loads(text: str, grammar: Optional[Grammar] = None) -> list[Example]:
    g = grammar or minilang()
    out = []
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusError(f"malformed record ({e.msg})", i) from None
        if not isinstance(rec, dict) or set(rec) != {"src", "tgt", "category"}:
            raise CorpusError("record must have exactly the fields src, tgt, category", i)
        try:
            src, tgt = parse_tree(g, rec["src"]), parse_tree(g, rec["tgt"])
            validate(src)
            validate(tgt)
        except (TreeError, ValueError) as e:
            raise CorpusError(f"invalid tree: {e}", i) from None
        if src.root.prod.head != tgt.root.prod.head:
            raise CorpusError("src and tgt have different root types", i)
        out.append(Example(src, tgt, str(rec["category"])))
    return out


def load(path, grammar: Optional[Grammar] = None) -> list[Example]:
    with open(path, encoding="utf-8") as f:
        return loads(f.read(), grammar)


def save_dataset(directory, data: dict):
    import os
    os.makedirs(directory, exist_ok=True)
    for split, examples in data.items():
        save(os.path.join(directory, f"{split}.jsonl"), examples)


def load_dataset(directory, splits=None, grammar=None) -> dict:
    import os
    names = splits or [f[:-6] for f in sorted(os.listdir(directory)) if f.endswith(".jsonl")]
    return {s: load(os.path.join(directory, f"{s}.jsonl"), grammar) for s in names}


# --------------------------------------------------------------------------- #
# small random pairs for oracle cross-checks

def _real_size(t: Tree) -> int:
    return sum(1 for n in t.root.preorder() if n.tag != DUMMY)


def _complete(n: Node) -> bool:
    """No single field is left empty."""
    if n.tag != RULE:
        return True
    for f, kids in zip(n.prod.fields, n.children):
        if f.cardinality is Cardinality.SINGLE and (not kids or kids[0].tag == DUMMY):
            return False
    return all(_complete(c) for c in n.iter_children())


SMALLEST = 5    # Assign with two leaf expressions


def random_small_tree(rng: random.Random, max_nodes: int = 8, grammar: Optional[Grammar] = None) -> Tree:
    """A random statement with at most ``max_nodes`` non-dummy nodes.

    The size is drawn uniformly from the feasible range first, so larger trees
    are not crowded out by the many ways to build the smallest ones.
    """
    if max_nodes < SMALLEST:
        raise ValueError(f"no statement has fewer than {SMALLEST} nodes")
    g = grammar or minilang()
    s = Sampler(rng, g)
    want = rng.randint(SMALLEST, max_nodes)
    while True:
        root = s.b.rule("stmt", "Assign", s.expr(rng.choice((2, 2, 3))), s.expr(rng.choice((2, 3, 4))))
        t = _tree(g, root)
        if _real_size(t) == want:
            return t


def random_small_pair(rng: random.Random, max_nodes: int = 8, grammar: Optional[Grammar] = None):
    """Two small distinct trees: either independent samples or the first one
    perturbed by up to three random legal edits."""
    from .edits import STOP, Token, apply, legal_actions
    from .tree import clear_dummies, subtree_memory

    g = grammar or minilang()
    src = random_small_tree(rng, max_nodes, g)
    if rng.random() < 0.5:
        while True:
            tgt = random_small_tree(rng, max_nodes, g)
            if to_sexpr(tgt) != to_sexpr(src):
                return src, tgt
    memory = subtree_memory(src)
    extra = [Token("ident", rng.choice(NAMES)), Token("int", rng.choice(INTS))]
    while True:
        t = src
        for _ in range(rng.randint(1, 3)):
            acts = [a for a in legal_actions(t, memory, extra) if a != STOP]
            t = apply(t, memory, rng.choice(acts))
        t = _tree(g, clear_dummies(t).root)
        if _real_size(t) <= max_nodes and _complete(t.root) and to_sexpr(t) != to_sexpr(src):
            return src, t
