import pytest

from structedit.edits import (STOP, Add, CopySubTree, Delete, EditError, EditScript, IllegalTarget, Token,
                              TypeMismatch, action_from_text, action_to_text, apply, legal_actions,
                              node_path, operator_kind, replay, resolve_path, script_from_text,
                              script_to_text)
from structedit.tree import is_valid, subtree_memory, to_sexpr

from conftest import CALL_SRC, CALL_TGT


def _find(t, pred):
    return next(n for n in t.nodes() if pred(n))


def test_delete_single_leaves_dummy(parse):
    t = parse(CALL_SRC)
    call = _find(t, lambda n: n.prod is not None and n.prod.constructor == "Call")
    t2 = apply(t, subtree_memory(t), Delete(call.id))
    assert to_sexpr(t2, include_dummies=True) == '(Assign (Name "x") _)'
    assert is_valid(t2)


def test_delete_list_element_shifts(parse):
    t = parse(CALL_SRC)
    a = _find(t, lambda n: n.token == "a").id
    name_a = t.parent(a).id
    t2 = apply(t, None, Delete(name_a))
    assert to_sexpr(t2) == '(Assign (Name "x") (Call "foo" [(Name "b")]))'


def test_add_rule_and_token(parse, g):
    t = parse('(Assign (Name "x") _)')
    hole = _find(t, lambda n: n.is_dummy).id
    t = apply(t, None, Add(hole, g.lookup("expr", "Num")))
    assert to_sexpr(t, include_dummies=True) == '(Assign (Name "x") (Num _))'
    hole = _find(t, lambda n: n.is_dummy).id
    t = apply(t, None, Add(hole, Token("int", "7")))
    assert to_sexpr(t, include_dummies=True) == '(Assign (Name "x") (Num "7"))'


def test_add_inserts_before_list_anchor(parse):
    t = parse('(Assign (Name "x") (Call "f" [(Name "a")]))')
    m = subtree_memory(t)
    first = resolve_path(t, ((1, None), (1, 0)))
    name_a = m.find(t.node(first))
    t2 = apply(t, m, CopySubTree(first, name_a))
    assert to_sexpr(t2) == '(Assign (Name "x") (Call "f" [(Name "a") (Name "a")]))'


def test_illegal_actions(parse, g):
    t = parse(CALL_SRC)
    m = subtree_memory(t)
    with pytest.raises(IllegalTarget):
        apply(t, m, Delete(t.root.id))
    x = _find(t, lambda n: n.token == "x").id
    with pytest.raises(IllegalTarget):           # occupied single slot
        apply(t, m, Add(x, Token("ident", "y")))
    hole = _find(t, lambda n: n.is_dummy).id
    with pytest.raises(TypeMismatch):
        apply(t, m, Add(hole, g.lookup("op", "Add")))
    with pytest.raises(IllegalTarget):
        apply(t, m, CopySubTree(hole, 999))
    with pytest.raises(EditError):
        apply(t, m, Delete(12345))


def test_every_legal_action_applies_and_keeps_validity(parse):
    t = parse('(Assign (Name "x") (Call "f" [(BinOp _ (Add) (Num "1"))]))')
    m = subtree_memory(t)
    acts = legal_actions(t, m, [Token("ident", "z")])
    assert acts[-1] == STOP
    for a in acts[:-1]:
        assert is_valid(apply(t, m, a))
    # Stop clears dummies, which leaves the hole in BinOp empty
    assert to_sexpr(apply(t, m, STOP)) == to_sexpr(t)


def test_stop_must_be_last():
    with pytest.raises(ValueError):
        EditScript([STOP, Delete(1)])


def test_script_text_round_trip(parse):
    src = parse(CALL_SRC)
    m = subtree_memory(src)
    # DEL rhs; ADD rhs RULE Index; CPY rhs/obj (Name a); CPY rhs/index (Name b); STOP
    t = src
    call = _find(t, lambda n: n.prod is not None and n.prod.constructor == "Call")
    script = [Delete(call.id)]
    t = apply(t, m, script[-1])
    hole = _find(t, lambda n: n.is_dummy).id
    script.append(Add(hole, src.grammar.lookup("expr", "Index")))
    t = apply(t, m, script[-1])
    name_a = m.find(src.parent(_find(src, lambda n: n.token == "a").id))
    name_b = m.find(src.parent(_find(src, lambda n: n.token == "b").id))
    for idx in (name_a, name_b):
        hole = _find(t, lambda n: n.is_dummy).id
        script.append(CopySubTree(hole, idx))
        t = apply(t, m, script[-1])
    script.append(STOP)
    text = script_to_text(src, script)
    assert text.splitlines()[0] == "DEL rhs"
    assert text.splitlines()[1] == "ADD rhs RULE Index"
    assert text.splitlines()[-1] == "STOP"
    again = script_from_text(src, text)
    assert list(again) == script
    assert to_sexpr(replay(src, again)) == CALL_TGT
    assert [operator_kind(a) for a in script] == ["Delete", "Add-rule", "CopySubTree", "CopySubTree", "Stop"]


def test_paths_round_trip(parse):
    t = parse(CALL_SRC)
    for n in t.nodes():
        p = node_path(t, n.id)
        assert resolve_path(t, p) == n.id
        if p:
            assert action_from_text(t, action_to_text(t, Delete(n.id))) == Delete(n.id) or n.is_dummy


def test_bad_script_text(parse):
    t = parse(CALL_SRC)
    for bad in ["DEL nope", "FROB rhs", "ADD lhs RULE Num", "ADD rhs/args[9] RULE Num"]:
        with pytest.raises(EditError):
            script_from_text(t, bad)
