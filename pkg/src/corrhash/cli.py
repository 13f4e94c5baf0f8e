"""Command-line driver: ``corrhash <command> [options]``.

Every command accepts ``--config FILE`` (``key = value`` lines, ``#``
comments) whose keys are the long option names with dashes replaced by
underscores; explicit flags override the file.  Exit codes: 0 success,
1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from corrhash import corpus as cp
from corrhash import verify
from corrhash.model import load_checkpoint, save_checkpoint
from corrhash.retrieval import (
    LSHHasher, RetrievalIndex, format_precision_table, hash_matrix, read_codes, write_codes,
)
from corrhash.trainer import Features, TrainConfig, evaluate, train

log = logging.getLogger("corrhash")

DEFAULT_BITS = (8, 16, 32, 64, 128)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config handling


def read_config(path) -> dict:
    """Parse ``key = value`` lines; later keys win, duplicates are allowed."""
    if not os.path.isfile(path):
        raise UsageError(f"config not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            if not key:
                raise UsageError(f"{path}:{lineno}: empty key")
            out[key.replace("-", "_")] = value
    return out


def _int_list(text):
    try:
        return tuple(int(x) for x in str(text).replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _merge(args, parser, sub):
    """Fill unset options from the config file, rejecting unknown keys."""
    if args.config is None:
        return args
    values = read_config(args.config)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config", "command")}
    for key, raw in values.items():
        if key not in actions:
            raise UsageError(f"{args.config}: unknown key {key!r} for '{args.command}'")
        if key in args._explicit:
            continue
        act = actions[key]
        if isinstance(act, argparse._AppendAction):
            val = raw.split()
        elif isinstance(act, argparse._StoreTrueAction):
            val = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                val = act.type(raw) if act.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{args.config}: bad value for {key!r}: {exc}") from None
        setattr(args, key, val)
    return args


def _train_config(args) -> TrainConfig:
    kw = {}
    for name in TrainConfig.field_names():
        val = getattr(args, name, None)
        if val is not None:
            kw[name] = val
    try:
        return TrainConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _need_file(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _outdir(args) -> Path:
    out = Path(args.output_dir)
    if out.exists() and not out.is_dir():
        raise UsageError(f"output dir is a file: {out}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _features(args):
    corpus = cp.load_corpus(_need_file(args.corpus, "corpus"),
                            _need_file(args.splits, "splits") if args.splits else None)
    return corpus, Features.from_corpus(corpus)


# ---------------------------------------------------------------------------
# commands


def cmd_build_vocab(args):
    src = _need_file(args.input, "input")
    out = _outdir(args)
    tokenized = cp.read_tokenized(src)
    vocab = cp.build_vocab((t for _, t in tokenized), args.max_terms, args.min_df)
    corpus = cp.vectorize(tokenized, vocab)
    from corrhash.tensor import RngStream

    splits = cp.random_splits(len(corpus), RngStream(args.seed).substream("split"),
                              args.validation, args.test)
    cp.write_vocab(vocab, out / "vocab.txt")
    cp.write_corpus(corpus, out / "corpus.txt")
    cp.write_splits(splits, out / "splits.txt")
    print(f"{len(vocab)} terms, {len(corpus)} documents -> {out}")
    return 0


def cmd_train(args):
    cfg = _train_config(args)
    _need_file(args.corpus, "corpus")
    _need_file(args.splits, "splits")
    out = _outdir(args)
    _, feats = _features(args)
    with open(out / "train.log", "w", encoding="utf-8") as fh:
        fh.write("iter\tloss\tval_precision\tlr\telapsed_s\n")
        result = train(cfg, feats, log_stream=fh)
    save_checkpoint(result.model, out / "model.ckpt")
    print(f"best validation precision@{cfg.eval_k} {result.best_precision:.4f} "
          f"at iteration {result.best_iter}; checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_hash(args):
    _need_file(args.checkpoint, "checkpoint")
    _need_file(args.corpus, "corpus")
    out = _outdir(args)
    model = load_checkpoint(args.checkpoint)
    corpus, feats = _features(args)
    if feats.vocab_size > model.config.vocab_size:
        raise RuntimeError(f"corpus uses {feats.vocab_size} terms but the model has "
                           f"{model.config.vocab_size}")
    if feats.vocab_size < model.config.vocab_size:
        feats = Features.from_corpus(corpus, model.config.vocab_size)
    if args.subset:
        if args.subset not in feats.splits:
            raise UsageError(f"no split named {args.subset!r}")
        ids, x, _, labels = feats.subset(args.subset)
    else:
        ids, x, labels = np.arange(feats.tfidf.shape[0]), feats.tfidf, feats.labels
    bits = hash_matrix(model, x)
    write_codes(out / "codes.txt", bits, ids, labels)
    print(f"{len(ids)} codes of {model.m} bits -> {out / 'codes.txt'}")
    return 0


def cmd_query(args):
    _need_file(args.codes, "codes")
    if args.doc_id is None:
        raise UsageError("--doc-id is required")
    out = _outdir(args)
    codes = read_codes(args.codes)
    if not codes:
        raise RuntimeError(f"{args.codes} holds no codes")
    index = RetrievalIndex.from_codes(codes)
    row = index.row_of(args.doc_id)
    if row < 0:
        raise UsageError(f"doc id {args.doc_id} is not in {args.codes}")
    query = index.code(row)
    ids = index.top_k(query, args.k_at, exclude_self=True)
    path = out / f"query_{args.doc_id}.tsv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rank\tdoc_id\thamming\tlabels\n")
        for rank, d in enumerate(ids.tolist(), 1):
            c = index.code(index.row_of(d))
            dist = int(np.bitwise_count(c.words ^ query.words).sum())
            fh.write(f"{rank}\t{d}\t{dist}\t{','.join(map(str, sorted(c.labels)))}\n")
    print(path.read_text(encoding="utf-8"), end="")
    return 0


def cmd_eval(args):
    _need_file(args.corpus, "corpus")
    _need_file(args.splits, "splits")
    for ck in args.checkpoint or ():
        _need_file(ck, "checkpoint")
    cfg = _train_config(args)
    out = _outdir(args)
    _, feats = _features(args)
    results = {}
    bits = list(args.bits or DEFAULT_BITS)
    if args.checkpoint:
        row = {}
        for ck in args.checkpoint:
            model = load_checkpoint(ck)
            row[model.m] = evaluate(model, feats, "test", "train", args.k_at)
        bits = sorted(set(bits) | set(row))
        results["model"] = row
    else:
        row = {}
        for b in bits:
            cfg_b = TrainConfig(**{**cfg.__dict__, "m": b})
            res = train(cfg_b, feats)
            save_checkpoint(res.model, out / f"model_{b}.ckpt")
            row[b] = evaluate(res.model, feats, "test", "train", args.k_at)
            log.info("%d bits: precision@%d %.4f", b, args.k_at, row[b])
        results["model"] = row
    if not args.no_lsh:
        results["lsh"] = {
            b: evaluate(None, feats, "test", "train", args.k_at,
                        bits=LSHHasher(feats.vocab_size, b, cfg.seed).bits)
            for b in bits
        }
    table = format_precision_table(results, bits)
    (out / "precision.tsv").write_text(table, encoding="utf-8")
    with open(out / "precision.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "bits", f"precision_at_{args.k_at}"])
        for method, row in results.items():
            for b in bits:
                if b in row:
                    w.writerow([method, b, f"{row[b]:.6f}"])
    print(table, end="")
    return 0


def cmd_verify(args):
    out = _outdir(args)
    report = verify.run_all(seed=args.seed, fast=args.fast)
    (out / "verify.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "verify.tsv").write_text(report.to_tsv(), encoding="utf-8")
    print(report.to_text(), end="")
    return 0 if report.passed else 1


def cmd_bench(args):
    from corrhash.synthetic import topic_corpus

    out = _outdir(args)
    if args.corpus:
        _need_file(args.splits, "splits")
        _, feats = _features(args)
    else:
        feats = Features.from_corpus(topic_corpus(args.synthetic_docs, seed=args.seed))
    base = _train_config(args)
    rows = []
    for v in args.v_grid:
        for k in args.k_grid:
            cfg = TrainConfig(**{**base.__dict__, "v": v, "k": k, "epochs": 1, "max_iters": 0})
            t0 = time.perf_counter()
            train(cfg, feats)
            rows.append((v, k, time.perf_counter() - t0))
            log.info("v=%d k=%d %.3fs/epoch", v, k, rows[-1][2])
    lines = ["v\tk\tseconds_per_epoch"] + [f"{v}\t{k}\t{s:.3f}" for v, k, s in rows]
    text = "\n".join(lines) + "\n"
    (out / "bench.tsv").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--m", type=int, help="code length in bits (default 32)")
    g.add_argument("--v", type=int, help="rank of the low-rank covariance factor (default 10)")
    g.add_argument("--k", type=int, help="mixture components in the bound (default 10)")
    g.add_argument("--lr", type=float, help="initial Adam learning rate (default 0.001)")
    g.add_argument("--decay-every", type=int, help="iterations between learning-rate decays (default 10000)")
    g.add_argument("--decay-factor", type=float, help="learning-rate decay factor (default 0.96)")
    g.add_argument("--batch-size", type=int, help="documents per mini-batch (default 100)")
    g.add_argument("--epochs", type=int, help="passes over the training split (default 30)")
    g.add_argument("--keep-prob", type=float, help="dropout keep probability (default 0.9)")
    g.add_argument("--hidden", type=_int_list, help="encoder hidden sizes, e.g. 500,500")
    g.add_argument("--eval-k", type=int, help="K of validation precision@K (default 100)")
    g.add_argument("--validate-every", type=int, help="iterations between validations; 0 = per epoch")
    g.add_argument("--max-iters", type=int, help="stop after this many iterations; 0 = no cap")


def build_parser():
    parser = argparse.ArgumentParser(prog="corrhash", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    subs = parser.add_subparsers(dest="command", metavar="command")
    subs.required = True

    def sub(name, func, help_):
        p = subs.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="key = value file; flags override it")
        p.add_argument("--seed", type=int, help="random seed (default 0)")
        p.add_argument("--output-dir", help="directory for every output file (default ./out)")
        p.set_defaults(func=func)
        return p

    p = sub("build-vocab", cmd_build_vocab, "build a vocabulary and count corpus from tokenized text")
    p.add_argument("--input", help="tokenized file: '<labels> TAB <token> <token> ...' per line")
    p.add_argument("--max-terms", type=int, help="vocabulary cap (default 10000)")
    p.add_argument("--min-df", type=int, help="drop terms in fewer documents (default 1)")
    p.add_argument("--validation", type=float, help="validation fraction (default 0.1)")
    p.add_argument("--test", type=float, help="test fraction (default 0.1)")

    p = sub("train", cmd_train, "train a hashing model")
    p.add_argument("--corpus", help="corpus file")
    p.add_argument("--splits", help="split file with train and validation subsets")
    _add_train_flags(p)

    p = sub("hash", cmd_hash, "write binary codes for a corpus")
    p.add_argument("--checkpoint", help="trained model")
    p.add_argument("--corpus", help="corpus file")
    p.add_argument("--splits", help="split file; the train subset supplies idf statistics")
    p.add_argument("--subset", help="only hash this split")

    p = sub("query", cmd_query, "list the nearest codes to one document")
    p.add_argument("--codes", help="codes file written by 'hash'")
    p.add_argument("--doc-id", type=int, help="query document id")
    p.add_argument("--k-at", type=int, help="neighbours to list (default 100)")

    p = sub("eval", cmd_eval, "precision@K table over code lengths, model vs. LSH")
    p.add_argument("--corpus", help="corpus file")
    p.add_argument("--splits", help="split file with train, validation and test subsets")
    p.add_argument("--checkpoint", action="append", help="evaluate this model (repeatable); "
                   "otherwise one model is trained per bit width")
    p.add_argument("--bits", type=_int_list, help="code lengths (default 8,16,32,64,128)")
    p.add_argument("--k-at", type=int, help="K of precision@K (default 100)")
    p.add_argument("--no-lsh", action="store_true", default=None, help="skip the LSH baseline")
    _add_train_flags(p)

    p = sub("verify", cmd_verify, "run the exact-enumeration check suite")
    p.add_argument("--fast", action="store_true", default=None, help="fewer Monte-Carlo trials")

    p = sub("bench", cmd_bench, "seconds per training epoch over a (v, k) grid")
    p.add_argument("--corpus", help="corpus file; a synthetic corpus is used if omitted")
    p.add_argument("--splits", help="split file for --corpus")
    p.add_argument("--synthetic-docs", type=int, help="synthetic corpus size (default 2000)")
    p.add_argument("--v-grid", type=_int_list, help="ranks to time (default 0,1,5,10)")
    p.add_argument("--k-grid", type=_int_list, help="mixture sizes to time (default 1,5,10)")
    _add_train_flags(p)
    return parser


COMMON_DEFAULTS = {"seed": 0, "output_dir": "out", "max_terms": cp.DEFAULT_MAX_TERMS, "min_df": 1,
                   "validation": 0.1, "test": 0.1, "k_at": 100, "fast": False, "no_lsh": False,
                   "synthetic_docs": 2000, "v_grid": (0, 1, 5, 10), "k_grid": (1, 5, 10)}


def parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    args._explicit = {k for k, v in vars(args).items() if v is not None}
    sub = parser._subparsers._group_actions[0].choices[args.command]
    _merge(args, parser, sub)
    for key, val in COMMON_DEFAULTS.items():
        if getattr(args, key, "absent") is None:
            setattr(args, key, val)
    return parser, args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        parser, args = parse(argv)
    except UsageError as exc:
        print(f"corrhash: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"corrhash {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"corrhash {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
