"""Supervised training on gold scripts and the two imitation-learning samplers."""
from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import nn
from .corpus import Example
from .edits import Add, Delete, EditAction, Stop, apply
from .model import Editor, Episode, Trace, Vocab, gold_trace
from .oracle import UnlearnableExample, dynamic_oracle, gold_script
from .tree import Tree, structural_eq, subtree_memory

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 5.0
    seed: int = 0
    beta: float = 0.5
    imitation_iterations: int = 1
    imitation_epochs: int = 10
    aggregation_ratio: Optional[float] = None   # gold episodes per demonstration; None keeps all gold
    patience: Optional[int] = 10

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("epochs must be >= 0 and batch_size > 0")
        if self.aggregation_ratio is not None and self.aggregation_ratio < 0:
            raise ValueError("aggregation_ratio must be >= 0")


@dataclass
class Prepared:
    """A corpus example with its gold script and teacher-forced trace."""
    example: Example
    script: tuple
    trace: Trace

    @property
    def episode(self) -> Episode:
        return Episode(self.trace, self.trace)


def build_vocab(examples: Sequence[Example]) -> Vocab:
    if not examples:
        raise ValueError("cannot build a vocabulary from no examples")
    g = examples[0].src.grammar
    return Vocab.from_trees(g, [t for e in examples for t in (e.src, e.tgt)])


def prepare(examples: Sequence[Example], vocab: Vocab):
    """Gold traces for every learnable example; returns ``(prepared, skipped)``."""
    out, skipped = [], 0
    for e in examples:
        try:
            script = gold_script(e.src, e.tgt, vocab=vocab.known_tokens)
        except UnlearnableExample:
            skipped += 1
            continue
        out.append(Prepared(e, tuple(script), gold_trace(e.src, script, vocab)))
    return out, skipped


def _batches(n, size, rng: Optional[random.Random]):
    idx = list(range(n))
    if rng is not None:
        rng.shuffle(idx)
    return [idx[i:i + size] for i in range(0, n, size)]


def supervised_epoch(editor: Editor, opt: nn.Adam, episodes: Sequence[Episode], batch_size: int,
                     rng: random.Random) -> float:
    """One pass of Adam updates; returns the mean loss per episode."""
    total = 0.0
    for b in _batches(len(episodes), batch_size, rng):
        loss, _ = editor.loss([episodes[i] for i in b])
        total += float(loss.data)
        nn.scale(loss, 1.0 / len(b)).backward()
        opt.step()
    return total / max(1, len(episodes))


def mean_loss(editor: Editor, episodes: Sequence[Episode], batch_size: int = 64) -> float:
    """Mean cross-entropy per episode, no updates."""
    total = 0.0
    for b in _batches(len(episodes), batch_size, None):
        total += float(editor.loss([episodes[i] for i in b])[0].data)
    return total / max(1, len(episodes))


def fit(editor: Editor, train: Sequence[Episode], dev: Sequence[Episode], config: TrainConfig,
        epochs: Optional[int] = None, on_epoch: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """Train, keeping the parameters with the lowest dev loss (train loss when
    there is no dev set)."""
    rng = random.Random(config.seed)
    opt = nn.Adam(editor.store, config.lr, config.beta1, config.beta2, config.eps, config.clip)
    best, best_state, stale = float("inf"), editor.store.state(), 0
    history = []
    for ep in range(config.epochs if epochs is None else epochs):
        t0 = time.time()
        tr = supervised_epoch(editor, opt, train, config.batch_size, rng)
        dv = mean_loss(editor, dev) if dev else tr
        rec = {"epoch": ep + 1, "train_loss": tr, "dev_loss": dv, "seconds": time.time() - t0}
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
        if dv < best:
            best, best_state, stale = dv, editor.store.state(), 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break
    editor.store.load_state(best_state)
    return history


# --------------------------------------------------------------------------- #
# rollouts and metrics

def edit_vectors(editor: Editor, prepared: Sequence[Prepared]) -> np.ndarray:
    return editor.edit_vectors([p.trace for p in prepared])


def add_then_delete(script: Sequence[EditAction], states: Sequence[Tree]) -> int:
    """Adds whose freshly created node is deleted by the very next action."""
    n = 0
    for t in range(len(script) - 1):
        a, b = script[t], script[t + 1]
        if isinstance(a, Add) and isinstance(b, Delete) and b.target not in states[t]:
            n += 1
    return n


@dataclass
class RolloutStats:
    accuracy: float
    mean_length: float
    add_then_delete: int
    correct: list = field(default_factory=list)

    def as_dict(self):
        return {"accuracy": self.accuracy, "mean_length": self.mean_length, "add_then_delete": self.add_then_delete}


def rollout_stats(editor: Editor, prepared: Sequence[Prepared], fdeltas: Optional[np.ndarray] = None) -> RolloutStats:
    if not prepared:
        return RolloutStats(0.0, 0.0, 0, [])
    fd = edit_vectors(editor, prepared) if fdeltas is None else fdeltas
    res = editor.rollout(fd, [p.example.src for p in prepared])
    correct = [bool(stopped and structural_eq(tree, p.example.tgt))
               for (script, tree, states, stopped), p in zip(res, prepared)]
    lengths = [len(r[0]) for r in res]
    loops = sum(add_then_delete(r[0], r[2]) for r in res)
    return RolloutStats(float(np.mean(correct)), float(np.mean(lengths)), loops, correct)


# --------------------------------------------------------------------------- #
# imitation learning

@dataclass
class Demonstration:
    """A visited trajectory with expert labels.

    ``states[t]`` is the tree before step ``t``; ``labels[t]`` the expert's
    action there; ``executed[t]`` what was actually done; only steps with
    ``labeled[t]`` contribute to the loss.
    """
    prepared: Prepared
    states: list
    labels: list
    executed: list
    labeled: list

    def episode(self, vocab: Vocab) -> Episode:
        acts = [lab if on else ex for lab, ex, on in zip(self.labels, self.executed, self.labeled)]
        tr = Trace(self.states, acts, subtree_memory(self.states[0]), vocab, self.labeled)
        return Episode(self.prepared.trace, tr)

    def pairs(self):
        return [(s, a) for s, a, on in zip(self.states, self.labels, self.labeled) if on]


def _expert(p: Prepared):
    memory = subtree_memory(p.example.src)

    def act(tree: Tree) -> EditAction:
        return dynamic_oracle(tree, p.example.tgt, memory)
    return act


def dagger_sampling(editor: Editor, prepared: Sequence[Prepared], beta: float, rng: random.Random,
                    fdeltas: Optional[np.ndarray] = None) -> list[Demonstration]:
    """Roll out the per-step mixture of expert and learner and label every
    visited state with the expert's action."""
    experts = [_expert(p) for p in prepared]
    labels = [[] for _ in prepared]
    # draw the coin flips up front so results do not depend on batching
    coins = [[rng.random() < beta for _ in range(editor.config.max_edit_len)] for _ in prepared]

    def override(i, t, tree, learner):
        a = experts[i](tree)
        labels[i].append(a)
        return a if coins[i][t] else learner
    fd = edit_vectors(editor, prepared) if fdeltas is None else fdeltas
    res = editor.rollout(fd, [p.example.src for p in prepared], override=override)
    out = []
    for p, lab, (script, tree, states, stopped) in zip(prepared, labels, res):
        out.append(Demonstration(p, list(states), lab, list(script), [True] * len(lab)))
    return out


def postrefine_sampling(editor: Editor, prepared: Sequence[Prepared],
                        fdeltas: Optional[np.ndarray] = None) -> list[Demonstration]:
    """Let the learner finish, then let the expert repair from the learner's
    last state; only the repair steps are labelled.  Correct rollouts yield
    nothing."""
    fd = edit_vectors(editor, prepared) if fdeltas is None else fdeltas
    res = editor.rollout(fd, [p.example.src for p in prepared])
    out = []
    for p, (script, tree, states, stopped) in zip(prepared, res):
        if stopped and structural_eq(tree, p.example.tgt):
            continue
        expert = _expert(p)
        if stopped:
            prefix_states, prefix_actions = list(states[:-1]), list(script[:-1])
            cur = states[-1]
        else:
            prefix_states, prefix_actions = list(states), list(script)
            cur = tree
        memory = subtree_memory(p.example.src)
        st, lab = [], []
        while True:
            a = expert(cur)
            st.append(cur)
            lab.append(a)
            if isinstance(a, Stop):
                break
            cur = apply(cur, memory, a)
        T = len(prefix_states)
        out.append(Demonstration(p, prefix_states + st, [None] * T + lab, prefix_actions + lab,
                                 [False] * T + [True] * len(lab)))
    return out


@dataclass
class ImitationResult:
    strategy: str
    demonstrations: int
    before: RolloutStats
    after: RolloutStats
    history: list


def imitation_iteration(editor: Editor, train: Sequence[Prepared], dev: Sequence[Prepared], strategy: str,
                        config: TrainConfig, eval_set: Optional[Sequence[Prepared]] = None) -> ImitationResult:
    """Collect demonstrations on ``train`` with ``strategy`` ("dagger" or
    "postrefine"), aggregate them with gold episodes and retrain."""
    rng = random.Random(config.seed + 7919)
    eval_set = train if eval_set is None else eval_set
    before = rollout_stats(editor, eval_set)
    if strategy == "dagger":
        demos = dagger_sampling(editor, train, config.beta, rng)
    elif strategy == "postrefine":
        demos = postrefine_sampling(editor, train)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    demos = [d for d in demos if any(d.labeled)]
    episodes = [d.episode(editor.vocab) for d in demos]
    if config.aggregation_ratio is None:
        gold = [p.episode for p in train]
    else:
        n_gold = min(len(train), int(round(len(episodes) * config.aggregation_ratio)))
        gold = [train[i].episode for i in sorted(rng.sample(range(len(train)), n_gold))]
    history = []
    if episodes:
        history = fit(editor, episodes + gold, [p.episode for p in dev], config, epochs=config.imitation_epochs)
    after = rollout_stats(editor, eval_set)
    return ImitationResult(strategy, len(episodes), before, after, history)
