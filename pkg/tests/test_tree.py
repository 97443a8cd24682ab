import pytest

from structedit.tree import (EDGE_TYPES, TreeError, as_graph, clear_dummies, has_dummies,
                             is_valid, parse_tree, structural_eq, subtree_memory, to_sexpr, validate)

from conftest import CALL_SRC


def test_parse_inserts_dummies(parse):
    t = parse(CALL_SRC)
    validate(t)
    # one trailing dummy in the args list
    assert to_sexpr(t, include_dummies=True) == '(Assign (Name "x") (Call "foo" [(Name "a") (Name "b") _]))'
    assert to_sexpr(t) == CALL_SRC
    # Assign, Name, x, Call, foo, Name, a, Name, b, dummy
    assert len(t) == 10


def test_sexpr_round_trip(parse):
    for text in [CALL_SRC, '(Assign (Name "y") (BinOp (Num "1") (Add) (Neg (Name "z"))))',
                 '(Assign (Name "q") (Call "f" []))']:
        assert to_sexpr(parse(text)) == text


def test_holes_parse_and_fail_clear_round_trip(parse):
    t = parse('(Assign _ (Num "1"))')
    validate(t)
    assert has_dummies(t)
    assert to_sexpr(clear_dummies(t)) == '(Assign _ (Num "1"))'


@pytest.mark.parametrize("text", [
    '(Assign (Num "1"))',                    # arity
    '(Assign (Add) (Num "1"))',              # op where expr expected
    '(Assign (Name "x") (Num "1")',          # unbalanced
    '(Bogus)',
    '(Assign (Name x) (Num "1"))',           # unquoted token
    '(Assign (Name "x") (Call "f" (Name "a")))',   # list without brackets
])
def test_parse_errors(g, text):
    with pytest.raises(ValueError):
        parse_tree(g, text)


def test_structural_equality_ignores_ids(parse):
    a, b = parse(CALL_SRC), parse(CALL_SRC)
    assert structural_eq(a, b)
    assert not structural_eq(a, parse('(Assign (Name "x") (Call "foo" [(Name "b") (Name "a")]))'))


def test_graph_edges(parse):
    t = parse('(Assign (Name "x") (Call "f" [(Name "a")]))')
    gr = as_graph(t)
    # nodes: Assign Name x Call f Name a dummy
    assert len(gr.nodes) == 8
    counts = gr.edge_counts()
    assert counts["ParentToChild"] == counts["ChildToParent"] == 7
    # Assign: lhs-rhs; Call: f-Name, Name-dummy
    assert counts["NextSibling"] == counts["PrevSibling"] == 3
    assert set(counts) == set(EDGE_TYPES)


def test_memory_dedups_and_skips_dummies(parse):
    t = parse('(Assign (Name "a") (BinOp (Name "a") (Add) (Name "b")))')
    m = subtree_memory(t)
    # Assign, Name a, a, BinOp, Add, Name b, b  (second Name a deduplicated)
    assert len(m) == 7
    assert all(not n.is_dummy for n in m)
    assert m.find(t.root) == 0
    assert len(m.tokens()) == 2


def test_validate_rejects_bad_structure(parse):
    t = parse(CALL_SRC)
    cleared = clear_dummies(t)
    # without the trailing dummy the args list breaks the invariant
    assert not is_valid(cleared)
    with pytest.raises(TreeError):
        validate(cleared)
