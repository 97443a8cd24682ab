"""Command-line interface.

Exit codes: 0 on success, 1 on usage errors, 2 on data or validation errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

DEFAULT_SEED = 0


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from None


def _grammar(spec: str):
    from .grammar import GrammarError, minilang, parse_grammar
    if spec == "minilang":
        return minilang()
    try:
        return parse_grammar(_read(spec))
    except GrammarError as e:
        raise DataError(f"{spec}: {e}") from None


def _tree(g, path: str):
    from .tree import parse_tree, validate
    try:
        t = parse_tree(g, _read(path).strip())
        validate(t)
        return t
    except DataError:
        raise
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None


def _set_threads(n: int):
    if n < 1:
        raise UsageError("--threads must be at least 1")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # BLAS keeps its own default
        return
    threadpool_limits(n)


# --------------------------------------------------------------------------- #
# subcommands

def cmd_grammar_check(args, out):
    g = _grammar(args.file)
    out(f"ok types={len(g.types)} productions={len(g.productions)} terminals={len(g.terminal_kinds)}")


def cmd_diff(args, out):
    from .edits import script_to_text
    from .oracle import edit_distance, gold_script
    g = _grammar(args.grammar)
    src, tgt = _tree(g, args.src), _tree(g, args.tgt)
    if src.root.prod.head != tgt.root.prod.head:
        raise DataError("trees have different root types")
    try:
        script = gold_script(src, tgt, mode=args.mode)
    except ValueError as e:
        raise DataError(str(e)) from None
    out(f"distance={edit_distance(src, tgt, mode=args.mode)}")
    sys.stdout.write(script_to_text(src, script))


def _load_script(src, path):
    from .edits import EditError, script_from_text
    try:
        return script_from_text(src, _read(path))
    except DataError:
        raise
    except (EditError, ValueError) as e:
        raise DataError(f"{path}: {e}") from None


def cmd_apply(args, out):
    from .edits import EditError, replay
    from .tree import to_sexpr
    g = _grammar(args.grammar)
    src = _tree(g, args.src)
    script = _load_script(src, args.script)
    try:
        result = replay(src, script)
    except EditError as e:
        raise DataError(f"{args.script}: {e}") from None
    out(to_sexpr(result))


def cmd_replay(args, out):
    from .edits import EditError, action_to_text, apply
    from .tree import TreeError, subtree_memory, to_sexpr, validate
    g = _grammar(args.grammar)
    src = _tree(g, args.src)
    script = _load_script(src, args.script)
    memory = subtree_memory(src)
    t = src
    out(f"step=0 tree={to_sexpr(t, include_dummies=True)}")
    for i, a in enumerate(script, start=1):
        text = action_to_text(t, a)
        try:
            t = apply(t, memory, a)
            validate(t)
        except (EditError, TreeError) as e:
            raise DataError(f"{args.script}: action {i} ({text}): {e}") from None
        out(f"step={i} action={text} valid=true tree={to_sexpr(t, include_dummies=True)}")
    out(f"result={to_sexpr(t)}")


def _parse_sizes(text: str) -> dict:
    sizes = {}
    for part in text.split(","):
        name, _, n = part.partition("=")
        if not name or not n.isdigit():
            raise UsageError(f"bad --sizes entry {part!r}; expected split=count")
        sizes[name.strip()] = int(n)
    return sizes


def cmd_gen(args, out):
    from .corpus import RULES_BY_NAME, DEFAULT_RULES, generate, save_dataset
    rules = DEFAULT_RULES
    if args.rules:
        try:
            rules = tuple(RULES_BY_NAME[r] for r in args.rules.split(","))
        except KeyError as e:
            raise UsageError(f"unknown rule {e.args[0]!r}") from None
    data = generate(args.seed, _parse_sizes(args.sizes), rules)
    save_dataset(args.out, data)
    for split, ex in data.items():
        out(f"split={split} examples={len(ex)} path={os.path.join(args.out, split + '.jsonl')}")


def _split_path(data: str, split: str) -> str:
    return os.path.join(data, f"{split}.jsonl") if os.path.isdir(data) else data


def _load_split(path: str):
    from .corpus import CorpusError, load
    try:
        return load(path)
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from None
    except CorpusError as e:
        raise DataError(f"{path}: {e}") from None


def _configs(path: Optional[str], args):
    from .model import EditorConfig
    from .training import TrainConfig
    raw = {}
    if path:
        try:
            raw = json.loads(_read(path))
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: line {e.lineno}: {e.msg}") from None
    known_e = set(EditorConfig.__dataclass_fields__)
    known_t = set(TrainConfig.__dataclass_fields__)
    unknown = set(raw) - known_e - known_t
    if unknown:
        raise DataError(f"{path}: unknown config keys {sorted(unknown)}")
    tk = {k: v for k, v in raw.items() if k in known_t}
    tk["seed"] = args.seed
    if args.epochs is not None:
        tk["epochs"] = args.epochs
    if args.beta is not None:
        tk["beta"] = args.beta
    try:
        return EditorConfig(**{k: v for k, v in raw.items() if k in known_e}), TrainConfig(**tk)
    except (TypeError, ValueError) as e:
        raise DataError(f"{path}: {e}") from None


def cmd_train(args, out):
    from .model import Editor
    from .training import build_vocab, fit, imitation_iteration, prepare
    ecfg, tcfg = _configs(args.config, args)
    train_ex = _load_split(_split_path(args.data, "train"))
    dev_path = os.path.join(args.data, "dev.jsonl") if os.path.isdir(args.data) else None
    dev_ex = _load_split(dev_path) if dev_path and os.path.exists(dev_path) else []
    if args.fraction < 1.0:
        train_ex = train_ex[: max(1, int(round(len(train_ex) * args.fraction)))]
    if not train_ex:
        raise DataError("training split is empty")
    vocab = build_vocab(train_ex)
    train, skipped = prepare(train_ex, vocab)
    dev, _ = prepare(dev_ex, vocab)
    out(f"train_examples={len(train)} skipped_unlearnable={skipped} dev_examples={len(dev)} tokens={len(vocab.tokens)}")
    editor = Editor(ecfg, vocab, seed=args.seed)

    def log(rec):
        out(" ".join(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.items()))
    fit(editor, [p.episode for p in train], [p.episode for p in dev], tcfg, on_epoch=log)
    if args.imitate:
        for it in range(tcfg.imitation_iterations):
            r = imitation_iteration(editor, train, dev, args.imitate, tcfg)
            out(f"imitation={r.strategy} iteration={it + 1} demonstrations={r.demonstrations} "
                + " ".join(f"before_{k}={v}" for k, v in r.before.as_dict().items()) + " "
                + " ".join(f"after_{k}={v}" for k, v in r.after.as_dict().items()))
    editor.save(args.out_ckpt)
    out(f"checkpoint={args.out_ckpt}")


def _editor(path):
    from .model import Editor
    from .nn import CheckpointError
    try:
        return Editor.load(path)
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from None
    except (CheckpointError, ValueError, KeyError) as e:
        raise DataError(f"{path}: {e}") from None


def _prepared(editor, path):
    from .training import prepare
    prepared, skipped = prepare(_load_split(path), editor.vocab)
    return prepared, skipped


def cmd_eval(args, out):
    from .evaluation import eval_gold, eval_oneshot
    editor = _editor(args.ckpt)
    if args.protocol == "gold":
        prepared, skipped = _prepared(editor, _split_path(args.data, "test"))
        acc = eval_gold(editor, prepared)
        out(f"protocol=gold examples={len(prepared)} skipped_unlearnable={skipped} accuracy={acc:.6f}")
        return
    prepared, skipped = _prepared(editor, _split_path(args.data, "oneshot"))
    cats = args.categories.split(",") if args.categories else None
    res = eval_oneshot(editor, prepared, args.seeds_per_category, cats)
    out(f"protocol=oneshot examples={len(prepared)} skipped_unlearnable={skipped} "
        f"macro={res.macro:.6f} micro={res.micro:.6f}")
    for c, a in res.per_category.items():
        out(f"category={c} size={res.sizes[c]} accuracy={a:.6f}")
    if args.table:
        with open(args.table, "w", encoding="utf-8") as f:
            f.write(res.table())


def cmd_neighbors(args, out):
    from .evaluation import nearest_neighbors
    from .tree import to_sexpr
    editor = _editor(args.ckpt)
    prepared, _ = _prepared(editor, _split_path(args.data, "test"))
    if not 0 <= args.query_index < len(prepared):
        raise UsageError(f"--query-index must be in [0, {len(prepared) - 1}]")
    q = prepared[args.query_index]
    out(f"query={args.query_index} category={q.example.category} src={to_sexpr(q.example.src)}")
    for rank, (i, sim) in enumerate(nearest_neighbors(editor, q, prepared, args.k, args.query_index), start=1):
        p = prepared[i]
        out(f"rank={rank} index={i} similarity={sim:.6f} category={p.example.category} src={to_sexpr(p.example.src)}")


def cmd_selfcheck(args, out):
    from .selfcheck import run
    if not run(args.seed, out):
        raise DataError("selfcheck failed")


# --------------------------------------------------------------------------- #

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="structedit", description="Grammar-constrained tree diffing, patching and neural editing.")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for all randomness (default: %(default)s)")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default: %(default)s)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    gp = sub.add_parser("grammar", help="grammar utilities")
    gsub = gp.add_subparsers(dest="action", parser_class=_Parser)
    gc = gsub.add_parser("check", help="parse and validate a grammar file")
    gc.add_argument("file")
    gc.set_defaults(func=cmd_grammar_check)

    for name, fn, helptext in (("diff", cmd_diff, "shortest edit script between two trees"),):
        d = sub.add_parser(name, help=helptext)
        d.add_argument("grammar", help="grammar file, or 'minilang'")
        d.add_argument("src")
        d.add_argument("tgt")
        d.add_argument("--mode", choices=("exact", "paper"), default="exact")
        d.set_defaults(func=fn)
    for name, fn, helptext in (("apply", cmd_apply, "apply an edit script"),
                               ("replay", cmd_replay, "apply an edit script step by step with validation")):
        a = sub.add_parser(name, help=helptext)
        a.add_argument("grammar", help="grammar file, or 'minilang'")
        a.add_argument("src")
        a.add_argument("script")
        a.set_defaults(func=fn)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--sizes", default="train=2000,dev=250,test=250,oneshot=400")
    g.add_argument("--rules", help="comma-separated rule names (default: the eight shipped rules)")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train an editor")
    t.add_argument("--data", required=True, help="corpus directory (train.jsonl, optional dev.jsonl) or a file")
    t.add_argument("--config", help="JSON file with model and training settings")
    t.add_argument("--out-ckpt", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--fraction", type=float, default=1.0, help="use the first fraction of the training split")
    t.add_argument("--imitate", choices=("dagger", "postrefine"))
    t.add_argument("--beta", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("protocol", choices=("gold", "oneshot"))
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="corpus directory or a .jsonl file")
    e.add_argument("--seeds-per-category", type=int, default=100)
    e.add_argument("--categories", help="comma-separated categories (one-shot only)")
    e.add_argument("--table", help="write a per-category table here (one-shot only)")
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("neighbors", help="nearest edits by representation similarity")
    n.add_argument("--ckpt", required=True)
    n.add_argument("--data", required=True)
    n.add_argument("--query-index", type=int, required=True)
    n.add_argument("-k", type=int, default=5)
    n.set_defaults(func=cmd_neighbors)

    s = sub.add_parser("selfcheck", help="gradient checks and oracle smoke test")
    s.set_defaults(func=cmd_selfcheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1

    def out(line):
        print(line, flush=True)
    try:
        _set_threads(args.threads)
        args.func(args, out)
    except UsageError as e:
        print(f"structedit: error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"structedit: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
