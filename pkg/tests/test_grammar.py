import pytest

from structedit.grammar import Cardinality, GrammarError, minilang, parse_grammar


def test_minilang_shape():
    g = minilang()
    assert g.root_type == "stmt"
    assert g.types == ("stmt", "expr", "op")
    assert g.terminal_kinds == ("ident", "int")
    assert len(g.productions) == 11
    call = g.lookup("expr", "Call")
    assert [f.name for f in call.fields] == ["func", "args"]
    assert call.fields[1].cardinality is Cardinality.SEQUENTIAL


def test_round_trip_through_text():
    g = minilang()
    assert parse_grammar(g.to_text()) == g


def test_optional_fields_parse():
    g = parse_grammar("root s;\nterminal t;\ns = S(t? name, e* xs)\ne = E()\n")
    s = g.lookup("s", "S")
    assert s.fields[0].cardinality is Cardinality.OPTIONAL
    assert g.productions_of("e")[0].fields == ()


@pytest.mark.parametrize("text, line", [
    ("terminal t;\ns = S(t x)\n", None),                     # missing root
    ("root s;\ns = S(q x)\n", None),                         # unknown type
    ("root s;\ns = S()\ns = S()\n", None),                   # duplicate constructor
    ("root s;\ns = S(s x, s x)\n", None),                    # duplicate field
    ("root s;\nterminal t;\nt = T()\ns = S()\n", None),      # production for a terminal
    ("root s;\nthis is not a rule\n", 2),
    ("root s;\ns = S(s)\n", 2),                              # field without name
])
def test_malformed_grammars(text, line):
    with pytest.raises(GrammarError) as e:
        parse_grammar(text)
    if line is not None:
        assert e.value.line == line


def test_comments_and_blank_lines_ignored():
    g = parse_grammar("# header\n\nroot s;   # the root\ns = S()\n")
    assert g.root_type == "s"
