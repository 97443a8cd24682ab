from types import SimpleNamespace

import numpy as np
import pytest

from structedit import evaluation
from structedit.corpus import generate
from structedit.evaluation import cosine_ranking, eval_gold, eval_oneshot, group_by_category, nearest_neighbors
from structedit.model import Editor, EditorConfig
from structedit.training import build_vocab, prepare


def fake(cat, i):
    return SimpleNamespace(example=SimpleNamespace(category=cat, src=i, tgt=i), trace=None)


def test_oneshot_averages(monkeypatch):
    items = [fake("a", i) for i in range(3)] + [fake("b", i) for i in range(2)] + [fake("c", 0)]
    monkeypatch.setattr(evaluation, "edit_vectors", lambda ed, ps: np.zeros((len(ps), 2)))
    # category a: seeds 0, 1, 2 each applied to the two others
    #   seed 0 -> 1 of 2 right, seed 1 -> 2 of 2, seed 2 -> 0 of 2   => mean 0.5
    # category b: both seeds right                                    => 1.0
    answers = {"a": [True, False, True, True, False, False], "b": [True, True]}

    def correct(editor, fd, prepared):
        return np.array(answers[prepared[0].example.category][:len(prepared)])
    monkeypatch.setattr(evaluation, "_correct", correct)
    res = eval_oneshot(None, items)
    assert res.per_category == {"a": pytest.approx(0.5), "b": pytest.approx(1.0)}
    assert res.macro == pytest.approx(0.75)
    assert res.micro == pytest.approx((0.5 * 3 + 1.0 * 2) / 5)
    assert res.warnings and "c" in res.warnings[0]
    assert res.table().splitlines()[0] == "category\tsize\taccuracy"

    res = eval_oneshot(None, items, seeds_per_category=1, categories=["a"])
    # only seed 0 remains: 1 of 2 right
    assert list(res.per_category) == ["a"] and res.per_category["a"] == pytest.approx(0.5)


def test_group_by_category_keeps_order():
    items = [fake("x", 0), fake("y", 1), fake("x", 2)]
    assert {k: [p.example.src for p in v] for k, v in group_by_category(items).items()} == {"x": [0, 2], "y": [1]}


def test_cosine_ranking_by_hand():
    pool = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.0]])
    order, sims = cosine_ranking(np.array([1.0, 0.0]), pool)
    # rows 0 and 3 tie at 1.0 (lower index first), then row 2 at 1/sqrt(2), then row 1
    assert order == [0, 3, 2, 1]
    assert sims[2] == pytest.approx(2 ** -0.5)
    order, _ = cosine_ranking(np.array([1.0, 0.0]), pool, exclude=0)
    assert order == [3, 2, 1]
    with pytest.raises(ValueError):
        cosine_ranking(np.zeros(2), np.zeros((0, 2)))


@pytest.fixture(scope="module")
def small():
    d = generate(2, {"test": 16})
    vocab = build_vocab(d["test"])
    prepared, _ = prepare(d["test"], vocab)
    return Editor(EditorConfig.small(), vocab, seed=0), prepared


def test_nearest_neighbors_ranks_the_query_itself_first(small):
    ed, prepared = small
    top = nearest_neighbors(ed, prepared[3], prepared, k=3)
    assert top[0][0] == 3 and top[0][1] == pytest.approx(1.0)
    top = nearest_neighbors(ed, prepared[3], prepared, k=3, exclude_index=3)
    assert 3 not in [i for i, _ in top] and len(top) == 3
    sims = [s for _, s in top]
    assert sims == sorted(sims, reverse=True)


def test_eval_gold_range(small):
    ed, prepared = small
    acc = eval_gold(ed, prepared)
    assert 0.0 <= acc <= 1.0
    assert eval_gold(ed, []) == 0.0
