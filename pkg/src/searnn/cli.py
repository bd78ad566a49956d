"""Command line: ``searnn gen-data | train | eval | gradcheck``.

Exit codes: 0 success, 1 usage error, 2 divergence, 3 gradcheck failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import TrainConfig, load_config, parse_config
from .datasets import DatasetSplit, gen_spelling, gen_transduce
from .engine import dump_costs
from .estimator import SearnnSeq2Seq
from .exceptions import DivergenceError, SearnnError
from .gradcheck import DEFAULT_POLICIES, TOLERANCE, gradcheck
from .losses import LOSS_KINDS
from .model import Seq2Seq, Vocabulary
from .params import load_checkpoint, save_checkpoint
from .training import METRICS, METRICS_HEADER, evaluate

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sizes(text: str) -> tuple[int, int, int]:
    parts = [int(x) for x in text.split(",")]
    if len(parts) != 3 or min(parts) < 0:
        raise argparse.ArgumentTypeError("sizes must be three non-negative integers: train,valid,test")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="searnn", description="SEARNN sequence training at desk scale.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen-data", help="write a synthetic split as TSV + manifest + vocab")
    gen.add_argument("out", type=Path, help="output directory")
    gen.add_argument("--task", choices=("spelling", "transduce"), default="spelling")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--sizes", type=_sizes, default=None, help="train,valid,test pair counts")
    gen.add_argument("--p", type=float, default=0.3, help="spelling: replacement probability")
    gen.add_argument("--alphabet-size", type=int, default=17, help="spelling alphabet / transduce symbols")
    gen.add_argument("--t-max", type=int, default=10, help="maximum target length")
    gen.add_argument("--text-file", type=Path, default=None, help="spelling: clean lines to corrupt")
    gen.add_argument("--rule", default="shift:1", help="transduce: identity, shift:k or reverse")

    train = sub.add_parser("train", help="train from a key = value config file")
    train.add_argument("config", type=Path)
    train.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")

    ev = sub.add_parser("eval", help="greedy-decode a split with a checkpoint")
    ev.add_argument("checkpoint", type=Path)
    ev.add_argument("data", type=Path, help="dataset directory")
    ev.add_argument("--split", choices=("train", "valid", "test"), default="test")
    ev.add_argument("--metric", choices=METRICS, default="edit")
    ev.add_argument("--vocab", type=Path, default=None,
                    help="vocabulary file (default: CHECKPOINT.vocab, then DATA/vocab.txt)")
    ev.add_argument("--max-len", type=int, default=None, help="longest output (default: longest target)")

    gc = sub.add_parser("gradcheck", help="finite-difference check of every loss kind")
    gc.add_argument("--losses", default=",".join(LOSS_KINDS), help="comma-separated loss kinds")
    gc.add_argument("--tolerance", type=float, default=TOLERANCE)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--hidden", type=int, default=3)
    gc.add_argument("--attention", action="store_true")
    return parser


# ------------------------------------------------------------------ commands

def cmd_gen_data(args) -> int:
    if args.task == "spelling":
        split = gen_spelling(args.p, args.seed, sizes=args.sizes or (2000, 200, 500),
                             alphabet_size=args.alphabet_size, t_max=args.t_max, text_file=args.text_file)
    else:
        split = gen_transduce(args.alphabet_size, args.t_max, args.rule, args.seed,
                              sizes=args.sizes or (1000, 100, 200))
    split.save(args.out)
    print(f"wrote {len(split.train)}/{len(split.valid)}/{len(split.test)} pairs to {args.out}")
    return EXIT_OK


def load_data(cfg: TrainConfig) -> tuple[DatasetSplit, Vocabulary]:
    sizes = (cfg.n_train, cfg.n_valid, cfg.n_test)
    if cfg.data:
        directory = Path(cfg.data)
        vocab_file = directory / "vocab.txt"
        vocab = Vocabulary.load(vocab_file) if vocab_file.exists() else None
        split = DatasetSplit.load(directory, vocab)
        return split, vocab or split.build_vocabulary()
    if cfg.task == "spelling":
        split = gen_spelling(cfg.p, cfg.data_seed, sizes=sizes, alphabet_size=cfg.alphabet_size, t_max=cfg.t_max)
    else:
        split = gen_transduce(cfg.alphabet_size, cfg.t_max, cfg.rule, cfg.data_seed, sizes=sizes)
    return split, split.build_vocabulary()


def estimator_from_config(cfg: TrainConfig) -> SearnnSeq2Seq:
    return SearnnSeq2Seq(
        loss=cfg.loss, alpha=cfg.alpha, roll_in=cfg.roll_in, roll_out=cfg.roll_out,
        mix_probability=cfg.mix_probability, reference=cfg.reference, cells=cfg.cells,
        token_strategy=cfg.token_strategy, k=cfg.k, neighbor_window=cfg.neighbor_window, cost=cfg.cost,
        metric=cfg.metric, hidden_size=cfg.hidden, embedding_size=cfg.embedding, attention=cfg.attention,
        optimizer=cfg.optimizer, learning_rate=cfg.lr, batch_size=cfg.batch_size, n_rounds=cfg.rounds,
        eval_every=cfg.eval_every, keep_best=cfg.keep_best, random_state=cfg.seed)


def _xy(pairs):
    return [list(p.source) for p in pairs], [list(p.target) for p in pairs]


def run_training(cfg: TrainConfig, out=sys.stdout) -> SearnnSeq2Seq:
    """Train per ``cfg``; write metrics CSV, checkpoint and cost dump as configured."""
    split, vocab = load_data(cfg)
    if not split.train:
        raise SearnnError("training split is empty")
    est = estimator_from_config(cfg)
    X, y = _xy(split.train)
    Xv, yv = _xy(split.valid or split.train)
    Xt, yt = _xy(split.test) if split.test else (None, None)
    dump = open(cfg.cost_dump, "w", encoding="utf-8") if cfg.cost_dump else None
    try:
        on_costs = (lambda r, tensors: dump_costs(tensors, dump)) if dump else None
        est.fit(X, y, Xv, yv, vocabulary=vocab, on_costs=on_costs, X_test=Xt, y_test=yt)
    finally:
        if dump:
            dump.close()
    lines = [METRICS_HEADER] + [row.csv() for row in est.history_]
    if cfg.metrics:
        Path(cfg.metrics).write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        out.write("\n".join(lines) + "\n")
    if cfg.checkpoint:
        save_checkpoint(est.model_.params, cfg.checkpoint)
        vocab.save(f"{cfg.checkpoint}.vocab")
    return est


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    try:
        run_training(cfg)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_eval(args) -> int:
    vocab_path = args.vocab
    if vocab_path is None:
        beside = Path(f"{args.checkpoint}.vocab")
        vocab_path = beside if beside.exists() else args.data / "vocab.txt"
    vocab = Vocabulary.load(vocab_path)
    pairs = DatasetSplit.load(args.data, vocab)
    split = getattr(pairs, args.split)
    encoded = [(vocab.encode(p.source), vocab.encode(p.target)) for p in split]
    max_len = args.max_len or max((len(t) for _, t in encoded), default=1)
    model = Seq2Seq.from_state(load_checkpoint(args.checkpoint), max_steps=max_len + 1)
    if model.vocab_size != len(vocab):
        raise SearnnError(f"checkpoint has {model.vocab_size} outputs but the vocabulary has {len(vocab)}")
    print(f"{args.metric}={evaluate(model, encoded, args.metric):.6f} n={len(encoded)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    losses = [x.strip() for x in args.losses.split(",") if x.strip()]
    report = gradcheck(losses, DEFAULT_POLICIES, hidden=args.hidden, attention=args.attention,
                       seed=args.seed, tolerance=args.tolerance)
    print(report.format())
    return EXIT_OK if report.ok else EXIT_GRADCHECK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (SearnnError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
