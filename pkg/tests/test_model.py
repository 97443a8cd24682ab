import io

import numpy as np
import pytest

from structedit import nn
from structedit.edits import ADD_OP, COPY_OP, DELETE_OP, STOP, STOP_OP, Delete, apply
from structedit.model import Choices, Editor, EditorConfig, Episode, Vocab, gold_trace
from structedit.oracle import gold_script
from structedit.tree import is_valid, structural_eq, subtree_memory, to_sexpr

from conftest import CALL_SRC, CALL_TGT

PAIRS = [(CALL_SRC, CALL_TGT),
         ('(Assign (Name "y") (BinOp (Num "1") (Add) (Name "z")))',
          '(Assign (Name "y") (BinOp (Name "z") (Add) (Num "1")))'),
         ('(Assign (Name "k") (Neg (Neg (Name "q"))))', '(Assign (Name "k") (Name "q"))')]


@pytest.fixture
def setup(parse, g):
    trees = [(parse(a), parse(b)) for a, b in PAIRS]
    vocab = Vocab.from_trees(g, [t for p in trees for t in p])
    traces = [gold_trace(s, gold_script(s, t), vocab) for s, t in trees]
    return trees, vocab, traces


def test_config_validation():
    with pytest.raises(ValueError):
        EditorConfig(node_dim=0)
    with pytest.raises(ValueError):
        EditorConfig(edit_repr_dim=100, edit_enc_lstm_dim=30)
    assert EditorConfig().edit_repr_dim == 512


def test_parameter_count_at_default_size(g):
    vocab = Vocab(g, [])
    c = EditorConfig()
    ed = Editor(c, vocab)
    d, H, A = c.node_dim, c.history_dim, c.action_repr_dim
    n_rules, n_tok, n_fields = 11, 1, 1 + 12      # 12 declared fields plus the root slot

    def lstm(i, h):
        return 4 * h * (i + h) + 4 * h

    assert c.rule_emb_dim == d                            # so no projection matrix
    expected = (n_rules * c.rule_emb_dim + n_tok * d + d
                + 4 * c.op_emb_dim + n_fields * c.field_emb_dim
                + d * 4 * d + 4 * d                                   # messages
                + 3 * d * (2 * d) + 3 * d                             # GRU (input, hidden, bias)
                + lstm(d + c.edit_repr_dim, H)
                + H * 4 + 4 + (H + c.op_emb_dim) * d + d
                + (H + d + c.field_emb_dim) * c.value_hidden_dim + c.value_hidden_dim
                + 3 * c.value_hidden_dim * d
                + c.op_emb_dim * A + 3 * (c.op_emb_dim + d + c.field_emb_dim) * A + 2 * d * A + 4 * A
                + 2 * lstm(A, c.edit_enc_lstm_dim))
    assert ed.store.count() == expected


def test_operator_mask_by_hand(parse):
    t = parse('(Assign (Name "a") (Num "1"))')
    ch = Choices(t, subtree_memory(t), Vocab(t.grammar, []))
    # no holes: nothing to add or copy into
    assert ch.op_mask().tolist() == [True, False, False, True]
    t2 = apply(t, subtree_memory(t), Delete(t.root.children[1][0].id))
    ch = Choices(t2, subtree_memory(t), Vocab(t.grammar, []))
    assert ch.op_mask()[[DELETE_OP, ADD_OP, COPY_OP, STOP_OP]].all()


def test_trace_rejects_illegal_action(parse, g):
    t = parse('(Assign (Name "a") (Num "1"))')
    vocab = Vocab(g, [])
    with pytest.raises(ValueError):
        gold_trace(t, [Delete(12345), STOP], vocab)


def test_loss_is_additive_over_the_batch(setup):
    trees, vocab, traces = setup
    ed = Editor(EditorConfig.small(), vocab, seed=1)
    eps = [Episode(tr, tr) for tr in traces]
    whole, n = ed.loss(eps)
    parts = [float(ed.loss([e])[0].data) for e in eps]
    assert float(whole.data) == pytest.approx(sum(parts), rel=1e-9)
    assert n == sum(tr.T for tr in traces)


def test_edit_vectors_independent_of_batching(setup):
    _, vocab, traces = setup
    ed = Editor(EditorConfig.small(), vocab, seed=2)
    full = ed.edit_vectors(traces)
    assert full.shape == (3, 16)
    np.testing.assert_allclose(ed.edit_vectors(traces, chunk=1), full, atol=1e-12)
    np.testing.assert_allclose(ed.edit_vectors(traces[1:2])[0], full[1], atol=1e-12)


def test_untrained_rollouts_stay_valid(setup):
    trees, vocab, traces = setup
    ed = Editor(EditorConfig.small(), vocab, seed=3)
    res = ed.rollout(ed.edit_vectors(traces), [s for s, _ in trees], max_len=15)
    for script, final, states, stopped in res:
        assert all(is_valid(s) for s in states)
        assert len(script) == len(states) <= 15
        assert stopped == (bool(script) and script[-1] == STOP)


def test_override_replays_gold(setup):
    trees, vocab, traces = setup
    ed = Editor(EditorConfig.small(), vocab, seed=4)
    scripts = [gold_script(s, t) for s, t in trees]
    res = ed.rollout(ed.edit_vectors(traces), [s for s, _ in trees],
                     override=lambda i, t, tree, a: scripts[i][t])
    for (s, t), (script, final, _, stopped) in zip(trees, res):
        assert stopped and structural_eq(final, t)


def test_overfits_three_examples(setup):
    trees, vocab, traces = setup
    ed = Editor(EditorConfig.small(), vocab, seed=0)
    opt = nn.Adam(ed.store, lr=1e-2)
    eps = [Episode(tr, tr) for tr in traces]
    for _ in range(150):
        loss, _ = ed.loss(eps)
        loss.backward()
        opt.step()
    assert float(ed.loss(eps)[0].data) < 0.05
    res = ed.rollout(ed.edit_vectors(traces), [s for s, _ in trees])
    assert [to_sexpr(r[1]) for r in res] == [b for _, b in PAIRS]


def test_checkpoint_round_trip(setup, tmp_path):
    trees, vocab, traces = setup
    ed = Editor(EditorConfig.small(), vocab, seed=5)
    path = tmp_path / "m.ckpt"
    ed.save(path)
    back = Editor.load(path)
    assert back.config == ed.config
    assert back.vocab.tokens == ed.vocab.tokens
    eps = [Episode(tr, tr) for tr in traces]
    assert float(back.loss(eps)[0].data) == float(ed.loss(eps)[0].data)
    np.testing.assert_array_equal(back.edit_vectors(traces), ed.edit_vectors(traces))
    with pytest.raises(nn.CheckpointError):
        Editor.load(io.BytesIO(b"junk"))
