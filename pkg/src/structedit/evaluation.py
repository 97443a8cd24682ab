"""Evaluation protocols: gold-setting accuracy, one-shot transfer and
nearest neighbours in edit-representation space."""
from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import Editor
from .training import Prepared, edit_vectors
from .tree import structural_eq

log = logging.getLogger(__name__)


def _correct(editor: Editor, fdeltas: np.ndarray, prepared: Sequence[Prepared]) -> np.ndarray:
    res = editor.rollout(fdeltas, [p.example.src for p in prepared])
    return np.array([bool(stopped and structural_eq(tree, p.example.tgt))
                     for (_, tree, _, stopped), p in zip(res, prepared)])


def eval_gold(editor: Editor, prepared: Sequence[Prepared]) -> float:
    """Exact-match accuracy when each input is edited with its own gold edit's
    representation."""
    if not prepared:
        return 0.0
    return float(_correct(editor, edit_vectors(editor, prepared), prepared).mean())


@dataclass
class OneShotResult:
    macro: float
    micro: float
    per_category: "OrderedDict[str, float]" = field(default_factory=OrderedDict)
    sizes: "OrderedDict[str, int]" = field(default_factory=OrderedDict)
    warnings: list = field(default_factory=list)

    def table(self) -> str:
        rows = ["category\tsize\taccuracy"]
        rows += [f"{c}\t{self.sizes[c]}\t{a:.4f}" for c, a in self.per_category.items()]
        return "\n".join(rows) + "\n"


def group_by_category(prepared: Sequence[Prepared]) -> "OrderedDict[str, list]":
    groups: "OrderedDict[str, list]" = OrderedDict()
    for p in prepared:
        groups.setdefault(p.example.category, []).append(p)
    return groups


def eval_oneshot(editor: Editor, prepared: Sequence[Prepared], seeds_per_category: int = 100,
                 categories: Sequence[str] = None) -> OneShotResult:
    """Apply each seed example's edit representation to every other example of
    its category.

    The first ``min(seeds_per_category, N)`` examples of a category are seeds;
    a seed's accuracy is over the remaining ``N - 1`` examples; a category
    scores the mean over its seeds.  Macro averages categories equally, micro
    weights them by size.
    """
    groups = group_by_category(prepared)
    if categories is not None:
        groups = OrderedDict((c, groups[c]) for c in categories if c in groups)
    res = OneShotResult(0.0, 0.0)
    for cat, items in groups.items():
        n = len(items)
        if n < 2:
            msg = f"category {cat} has a single example; skipped"
            log.warning(msg)
            res.warnings.append(msg)
            continue
        fd = edit_vectors(editor, items)
        n_seeds = min(seeds_per_category, n)
        pairs = [(s, j) for s in range(n_seeds) for j in range(n) if j != s]
        ok = _correct(editor, fd[[s for s, _ in pairs]], [items[j] for _, j in pairs])
        per_seed = ok.reshape(n_seeds, n - 1).mean(axis=1)
        res.per_category[cat] = float(per_seed.mean())
        res.sizes[cat] = n
    if res.per_category:
        scores = np.array(list(res.per_category.values()))
        sizes = np.array(list(res.sizes.values()), dtype=float)
        res.macro = float(scores.mean())
        res.micro = float((scores * sizes).sum() / sizes.sum())
    return res


def cosine_ranking(query: np.ndarray, pool: np.ndarray, exclude: int = -1):
    """Pool indices sorted by decreasing cosine similarity, ties by index."""
    if len(pool) == 0:
        raise ValueError("empty pool")
    qn = query / max(np.linalg.norm(query), 1e-12)
    pn = pool / np.maximum(np.linalg.norm(pool, axis=1, keepdims=True), 1e-12)
    sims = pn @ qn
    order = [int(i) for i in np.lexsort((np.arange(len(pool)), -sims)) if i != exclude]
    return order, sims


def nearest_neighbors(editor: Editor, query: Prepared, pool: Sequence[Prepared], k: int = 5,
                      exclude_index: int = -1):
    """Top-``k`` pool entries by cosine similarity of edit representations,
    as ``(pool index, similarity)`` pairs.  ``exclude_index`` drops the
    query's own position when it is part of the pool."""
    if not pool:
        raise ValueError("empty pool")
    vecs = edit_vectors(editor, list(pool) + [query])
    order, sims = cosine_ranking(vecs[-1], vecs[:-1], exclude_index)
    return [(i, float(sims[i])) for i in order[:k]]


def neighbor_category_match(editor: Editor, prepared: Sequence[Prepared]) -> float:
    """Fraction of examples whose nearest other example shares its category."""
    vecs = edit_vectors(editor, prepared)
    hits = 0
    for i, p in enumerate(prepared):
        order, _ = cosine_ranking(vecs[i], vecs, exclude=i)
        hits += prepared[order[0]].example.category == p.example.category
    return hits / max(1, len(prepared))
