"""ASDL-style grammars: node types, constructors, fields and cardinalities.

The concrete syntax is line oriented::

    root stmt;
    terminal ident;
    stmt = Assign(expr lhs, expr rhs)
    expr = Call(ident func, expr* args)

A ``?`` suffix on a field type marks it optional, ``*`` marks it sequential.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional


class GrammarError(ValueError):
    """Raised for syntax and validation errors in grammar sources."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class Cardinality(enum.Enum):
    SINGLE = ""
    OPTIONAL = "?"
    SEQUENTIAL = "*"


@dataclass(frozen=True)
class FieldDecl:
    name: str
    accepts: str
    cardinality: Cardinality = Cardinality.SINGLE

    @property
    def is_sequential(self) -> bool:
        return self.cardinality is Cardinality.SEQUENTIAL

    def __str__(self):
        return f"{self.accepts}{self.cardinality.value} {self.name}"


@dataclass(frozen=True)
class Production:
    head: str
    constructor: str
    fields: tuple[FieldDecl, ...] = ()

    def __str__(self):
        return f"{self.head} = {self.constructor}({', '.join(map(str, self.fields))})"

    def field_index(self, name: str) -> int:
        for i, f in enumerate(self.fields):
            if f.name == name:
                return i
        raise KeyError(f"{self.constructor} has no field {name!r}")


class Grammar:
    """An immutable, validated grammar.

    Productions keep their declaration order; ``productions.index(p)`` is the
    stable integer id used by vocabularies and checkpoints.
    """

    def __init__(self, root_type: str, terminal_kinds, productions):
        self.root_type = root_type
        self.terminal_kinds = tuple(terminal_kinds)
        self.productions = tuple(productions)
        self.types = tuple(dict.fromkeys(p.head for p in self.productions))
        self._by_head: dict[str, tuple[Production, ...]] = {}
        for p in self.productions:
            self._by_head[p.head] = self._by_head.get(p.head, ()) + (p,)
        self._ids = {p: i for i, p in enumerate(self.productions)}
        self._validate()

    def _validate(self):
        if self.root_type is None:
            raise GrammarError("missing root")
        seen = set()
        for p in self.productions:
            if p.head in self.terminal_kinds:
                raise GrammarError(f"terminal kind {p.head!r} cannot have productions")
            if (p.head, p.constructor) in seen:
                raise GrammarError(f"duplicate constructor {p.constructor!r} for type {p.head!r}")
            seen.add((p.head, p.constructor))
            names = [f.name for f in p.fields]
            if len(set(names)) != len(names):
                raise GrammarError(f"duplicate field name in {p.constructor!r}")
            for f in p.fields:
                if not self.is_declared(f.accepts):
                    raise GrammarError(f"unknown type reference {f.accepts!r} in {p.constructor!r}")
        if self.root_type not in self._by_head:
            raise GrammarError(f"root type {self.root_type!r} has no productions")

    def is_declared(self, name: str) -> bool:
        return name in self._by_head or name in self.terminal_kinds

    def is_terminal(self, name: str) -> bool:
        return name in self.terminal_kinds

    def productions_of(self, head: str) -> tuple[Production, ...]:
        return self._by_head.get(head, ())

    def production_id(self, p: Production) -> int:
        return self._ids[p]

    def lookup(self, head: str, constructor: str) -> Production:
        for p in self._by_head.get(head, ()):
            if p.constructor == constructor:
                return p
        raise KeyError(f"no constructor {constructor!r} for type {head!r}")

    def candidate_productions(self, field: FieldDecl) -> list[Production]:
        return list(self._by_head.get(field.accepts, ()))

    def to_text(self) -> str:
        lines = [f"root {self.root_type};"]
        lines += [f"terminal {k};" for k in self.terminal_kinds]
        lines += [str(p) for p in self.productions]
        return "\n".join(lines) + "\n"

    def __eq__(self, other):
        if not isinstance(other, Grammar):
            return NotImplemented
        return (self.root_type, self.terminal_kinds, self.productions) == (
            other.root_type, other.terminal_kinds, other.productions)

    def __hash__(self):
        return hash((self.root_type, self.terminal_kinds, self.productions))

    def __repr__(self):
        return (f"Grammar(root={self.root_type!r}, types={len(self.types)}, "
                f"productions={len(self.productions)}, terminals={len(self.terminal_kinds)})")


def candidate_productions(g: Grammar, field: FieldDecl) -> list[Production]:
    """Productions that can fill ``field``, in declaration order (empty for terminals)."""
    return g.candidate_productions(field)


_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_DIRECTIVE = re.compile(rf"^(root|terminal)\s+({_IDENT})\s*;?\s*$")
_PRODUCTION = re.compile(rf"^({_IDENT})\s*=\s*({_IDENT})\s*\((.*)\)\s*$")
_FIELD = re.compile(rf"^({_IDENT})([?*]?)\s+({_IDENT})$")


def parse_grammar(text: str) -> Grammar:
    root = None
    terminals: list[str] = []
    productions: list[Production] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        col = raw.index(line[0]) + 1
        m = _DIRECTIVE.match(line)
        if m:
            if m.group(1) == "root":
                if root is not None:
                    raise GrammarError("duplicate root directive", lineno, col)
                root = m.group(2)
            else:
                if m.group(2) in terminals:
                    raise GrammarError(f"duplicate terminal {m.group(2)!r}", lineno, col)
                terminals.append(m.group(2))
            continue
        m = _PRODUCTION.match(line)
        if not m:
            raise GrammarError(f"cannot parse {line!r}", lineno, col)
        head, ctor, body = m.groups()
        fields = []
        if body.strip():
            offset = raw.index("(") + 2
            for part in body.split(","):
                fm = _FIELD.match(part.strip())
                if not fm:
                    raise GrammarError(f"bad field declaration {part.strip()!r}", lineno, offset)
                fields.append(FieldDecl(fm.group(3), fm.group(1), Cardinality(fm.group(2))))
                offset += len(part) + 1
        productions.append(Production(head, ctor, tuple(fields)))
    if root is None:
        raise GrammarError("missing root")
    return Grammar(root, terminals, productions)


MINILANG_TEXT = resources.files("structedit").joinpath("data/minilang.asdl").read_text(encoding="utf-8")

_minilang: Optional[Grammar] = None


def minilang() -> Grammar:
    """The shipped toy grammar."""
    global _minilang
    if _minilang is None:
        _minilang = parse_grammar(MINILANG_TEXT)
    return _minilang
