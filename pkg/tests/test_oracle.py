"""The DP distance is checked against an unpruned breadth-first search written
here, independent of the library's own search."""
import random
from collections import deque

import pytest

from structedit.corpus import random_small_pair
from structedit.edits import STOP, Add, Delete, Stop, Token, apply, legal_actions, operator_kind, replay
from structedit.oracle import (Exceeded, brute_force_dist, dynamic_oracle, edit_distance, gold_script,
                               UnlearnableExample)
from structedit.tree import is_valid, subtree_memory, to_sexpr

from conftest import CALL_SRC, CALL_TGT


def bfs_distance(src, tgt, limit=6):
    """Fewest non-Stop actions until the tree, holes aside, prints as ``tgt``."""
    memory = subtree_memory(src)
    vocab = [Token(n.kind, n.token) for n in tgt.tokens()]
    goal = to_sexpr(tgt)
    seen = {to_sexpr(src, include_dummies=True)}
    frontier = deque([(src, 0)])
    while frontier:
        t, d = frontier.popleft()
        if to_sexpr(t) == goal and "_" not in to_sexpr(t):
            return d
        if d == limit:
            continue
        for a in legal_actions(t, memory, vocab):
            if isinstance(a, Stop):
                continue
            nt = apply(t, memory, a)
            k = to_sexpr(nt, include_dummies=True)
            if k not in seen:
                seen.add(k)
                frontier.append((nt, d + 1))
    return None


HAND = [
    # (src, tgt, distance worked out by hand)
    (CALL_SRC, CALL_TGT, 4),                      # delete call, add Index, copy both operands
    ('(Assign (Name "a") (Name "b"))', '(Assign (Name "b") (Name "a"))', 4),
    ('(Assign (Name "a") (Num "1"))', '(Assign (Name "a") (Num "1"))', 0),
    ('(Assign (Name "a") (Num "1"))', '(Assign (Name "a") (Num "2"))', 2),      # delete token, add token
    ('(Assign (Name "a") (Neg (Neg (Num "1"))))', '(Assign (Name "a") (Num "1"))', 2),
    ('(Assign (Name "a") (Call "f" [(Num "1")]))', '(Assign (Name "a") (Call "f" []))', 1),
    ('(Assign (Name "a") (Call "f" []))', '(Assign (Name "a") (Call "f" [(Name "a")]))', 1),
    ('(Assign (Name "a") (Num "1"))', '(Assign (Name "a") (Neg (Num "1")))', 3),  # delete, add Neg, copy
]


@pytest.mark.parametrize("src, tgt, d", HAND)
def test_hand_distances(parse, src, tgt, d):
    s, t = parse(src), parse(tgt)
    if len(s) <= 8:     # the plain search is exponential; larger rows rest on the hand count
        assert bfs_distance(s, t, limit=d + 1) == d
    assert edit_distance(s, t) == d
    assert brute_force_dist(s, t) == d


def test_dp_matches_plain_bfs_on_tiny_pairs():
    rng = random.Random(11)
    checked = 0
    while checked < 40:
        s, t = random_small_pair(rng, max_nodes=5)
        d = edit_distance(s, t)
        if d > 4:
            continue
        assert bfs_distance(s, t, limit=d) == d, (to_sexpr(s), to_sexpr(t))
        checked += 1


def test_gold_script_replays_and_ends_with_one_stop(parse):
    for src, tgt, d in HAND:
        s, t = parse(src), parse(tgt)
        script = gold_script(s, t)
        assert len(script) == d + 1
        assert [isinstance(a, Stop) for a in script].count(True) == 1 and script[-1] == STOP
        trace = []
        out = replay(s, script, trace=trace)
        assert to_sexpr(out) == tgt
        assert all(is_valid(x) for x in trace[:-1])


def test_call_to_index_kinds(parse):
    kinds = [operator_kind(a) for a in gold_script(parse(CALL_SRC), parse(CALL_TGT))]
    assert kinds == ["Delete", "Add-rule", "CopySubTree", "CopySubTree", "Stop"]


def test_dynamic_oracle_walks_a_shortest_path(parse):
    rng = random.Random(3)
    for _ in range(30):
        s, t = random_small_pair(rng)
        m = subtree_memory(s)
        d = edit_distance(s, t)
        cur, steps = s, 0
        while True:
            a = dynamic_oracle(cur, t, m)
            if a == STOP:
                break
            cur = apply(cur, m, a)
            steps += 1
            assert edit_distance(cur, t, m) == d - steps
        assert steps == d
        assert to_sexpr(cur) == to_sexpr(t)


def test_dynamic_oracle_recovers_from_a_wrong_action(parse, g):
    s, t = parse(CALL_SRC), parse(CALL_TGT)
    m = subtree_memory(s)
    x = next(n for n in s.nodes() if n.token == "x")
    bad = apply(s, m, Delete(s.parent(x.id).id))
    # the lhs now needs rebuilding by copying (Name "x") back
    assert edit_distance(bad, t, m) == 5
    cur, steps = bad, 0
    while (a := dynamic_oracle(cur, t, m)) != STOP:
        cur = apply(cur, m, a)
        steps += 1
    assert steps == 5 and to_sexpr(cur) == CALL_TGT


def test_unlearnable_token(parse):
    s = parse('(Assign (Name "a") (Num "1"))')
    t = parse('(Assign (Name "a") (Num "9"))')
    with pytest.raises(UnlearnableExample):
        gold_script(s, t, vocab=[Token("int", "1")])
    assert isinstance(gold_script(s, t, vocab=[Token("int", "9")])[1], Add)


def test_paper_mode_overestimates(parse):
    # rebuilding from scratch is priced by size in this mode, so copying a
    # larger memory subtree into place looks more expensive than it is
    s = parse('(Assign (Name "a") (BinOp (Name "b") (Add) (Name "c")))')
    t = parse('(Assign (BinOp (Name "b") (Add) (Name "c")) (Name "a"))')
    exact = edit_distance(s, t)
    assert exact == brute_force_dist(s, t, cap=20)
    assert edit_distance(s, t, mode="paper") >= exact


def test_cap_is_enforced(parse):
    s = parse('(Assign (Name "a") (Num "1"))')
    t = parse('(Assign (BinOp (Num "3") (Mul) (Num "4")) (Neg (Num "5")))')
    with pytest.raises(Exceeded):
        brute_force_dist(s, t, cap=2)


def test_search_heuristic_is_admissible():
    from structedit.oracle import _Bound
    rng = random.Random(5)
    for _ in range(60):
        s, t = random_small_pair(rng, max_nodes=7)
        m = subtree_memory(s)
        bound = _Bound(m)
        cur = s
        # walk a few random legal steps and compare the bound with the true distance
        for _ in range(3):
            assert bound.fields(cur.root, t.root) <= edit_distance(cur, t, m)
            acts = [a for a in legal_actions(cur, m, []) if not isinstance(a, Stop)]
            cur = apply(cur, m, rng.choice(acts))


def test_search_with_and_without_heuristic_agree():
    rng = random.Random(6)
    for _ in range(15):
        s, t = random_small_pair(rng, max_nodes=6)
        assert brute_force_dist(s, t, heuristic=False, cap=30) == brute_force_dist(s, t, cap=30)
