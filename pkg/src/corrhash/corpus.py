"""Corpus ingestion, vocabulary, TF-IDF features and splits.

Corpus file, one document per line::

    <label>[,<label>...] TAB <term_id>:<count> <term_id>:<count> ...

Term ids are strictly ascending.  Lines starting with ``#`` are comments and
blank lines are ignored.  Document ids are the 0-based positions of the
document lines.
"""

from __future__ import annotations

import io
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp

DEFAULT_MAX_TERMS = 10_000


class CorpusFormatError(ValueError):
    def __init__(self, path, line, column, message):
        self.path = path
        self.line = line
        self.column = column
        super().__init__(f"{path}:{line}:{column}: {message}")


@dataclass
class Document:
    labels: tuple
    term_ids: np.ndarray
    counts: np.ndarray

    @property
    def length(self) -> int:
        return int(self.counts.sum())


@dataclass
class TermVector:
    """One document as encoder input (TF-IDF) and decoder target (counts)."""

    doc_id: int
    term_ids: np.ndarray
    counts: np.ndarray
    weights: np.ndarray
    labels: frozenset

    def dense(self, vocab_size, what="weights"):
        out = np.zeros(vocab_size)
        out[self.term_ids] = getattr(self, what)
        return out


@dataclass
class SplitSpec:
    subsets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.subsets = {k: np.asarray(v, dtype=np.int64) for k, v in self.subsets.items()}
        self.validate()

    def validate(self, n_docs: int | None = None):
        seen: dict[int, str] = {}
        for name, ids in self.subsets.items():
            if len(np.unique(ids)) != len(ids):
                raise ValueError(f"split {name!r} lists a document twice")
            for i in ids.tolist():
                if i in seen:
                    raise ValueError(f"document {i} is in both {seen[i]!r} and {name!r}")
                if i < 0 or (n_docs is not None and i >= n_docs):
                    raise ValueError(f"split {name!r} references unknown document {i}")
                seen[i] = name

    def __getitem__(self, name):
        return self.subsets[name]

    def __contains__(self, name):
        return name in self.subsets

    def filtered(self, keep):
        """Restrict every subset to ids for which ``keep(id)`` is true."""
        return SplitSpec({k: [i for i in v.tolist() if keep(i)] for k, v in self.subsets.items()})


@dataclass
class Corpus:
    documents: list
    splits: SplitSpec | None = None

    def __len__(self):
        return len(self.documents)

    def vocab_size(self) -> int:
        top = -1
        for d in self.documents:
            if len(d.term_ids):
                top = max(top, int(d.term_ids[-1]))
        return top + 1

    def labels(self):
        return [frozenset(d.labels) for d in self.documents]

    def count_matrix(self, vocab_size: int, ids=None) -> sp.csr_matrix:
        """Raw term counts as CSR; out-of-vocabulary ids are dropped."""
        docs = self.documents if ids is None else [self.documents[i] for i in ids]
        indptr = [0]
        indices = []
        data = []
        for d in docs:
            keep = d.term_ids < vocab_size
            indices.append(d.term_ids[keep])
            data.append(d.counts[keep])
            indptr.append(indptr[-1] + int(keep.sum()))
        idx = np.concatenate(indices) if indices else np.zeros(0, np.int64)
        val = np.concatenate(data).astype(np.float64) if data else np.zeros(0)
        return sp.csr_matrix((val, idx, np.asarray(indptr)), shape=(len(docs), vocab_size))


@dataclass
class Vocabulary:
    terms: list
    df: np.ndarray

    def __post_init__(self):
        self.df = np.asarray(self.df, dtype=np.int64)
        self.index = {t: i for i, t in enumerate(self.terms)}
        if len(self.index) != len(self.terms):
            raise ValueError("duplicate term in vocabulary")

    def __len__(self):
        return len(self.terms)

    def __contains__(self, term):
        return term in self.index


# ---------------------------------------------------------------------------
# vocabulary


def build_vocab(docs: Iterable[Iterable[str]], max_terms: int = DEFAULT_MAX_TERMS,
                min_df: int = 1) -> Vocabulary:
    """Top ``max_terms`` terms by document frequency, ties broken lexicographically."""
    df: Counter = Counter()
    n = 0
    for tokens in docs:
        n += 1
        df.update(set(tokens))
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = [(t, c) for t, c in df.items() if c >= min_df]
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    kept = kept[:max_terms]
    return Vocabulary([t for t, _ in kept], [c for _, c in kept])


def write_vocab(vocab: Vocabulary, path):
    with open(path, "w", encoding="utf-8") as fh:
        for i, (t, c) in enumerate(zip(vocab.terms, vocab.df.tolist())):
            fh.write(f"{t} {i} {c}\n")


def load_vocab(path) -> Vocabulary:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise CorpusFormatError(path, lineno, 1, "expected '<term> <term_id> <df>'")
            term, tid, df = parts[0], int(parts[1]), int(parts[2])
            rows.append((tid, term, df))
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: term ids are not dense in [0, {len(rows)})")
    return Vocabulary([r[1] for r in rows], [r[2] for r in rows])


def read_tokenized(path):
    """Read ``<labels> TAB <token> <token> ...`` lines; returns (labels, tokens) pairs."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            if "\t" not in line:
                raise CorpusFormatError(path, lineno, len(line) + 1, "missing TAB after labels")
            head, body = line.split("\t", 1)
            out.append((_parse_labels(head, path, lineno), body.split()))
    return out


def vectorize(tokenized, vocab: Vocabulary) -> Corpus:
    docs = []
    for labels, tokens in tokenized:
        c = Counter(vocab.index[t] for t in tokens if t in vocab.index)
        ids = np.array(sorted(c), dtype=np.int64)
        docs.append(Document(tuple(labels), ids, np.array([c[i] for i in ids.tolist()], dtype=np.int64)))
    return Corpus(docs)


# ---------------------------------------------------------------------------
# TF-IDF


def idf(df, n_docs):
    return np.log((1.0 + n_docs) / (1.0 + np.asarray(df, dtype=np.float64))) + 1.0


def tfidf(term_ids, counts, df, n_docs, doc_id=-1, labels=()) -> TermVector:
    """Raw count times smoothed idf, L2-normalised.  Ids outside ``df`` are dropped."""
    term_ids = np.asarray(term_ids, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    keep = term_ids < len(df)
    term_ids, counts = term_ids[keep], counts[keep]
    w = counts * idf(np.asarray(df)[term_ids], n_docs)
    norm = np.linalg.norm(w)
    if norm > 0:
        w = w / norm
    return TermVector(doc_id, term_ids, counts, w, frozenset(labels))


def document_frequency(counts: sp.csr_matrix) -> np.ndarray:
    return np.bincount(counts.indices, minlength=counts.shape[1]).astype(np.int64)


def tfidf_matrix(counts: sp.csr_matrix, df, n_docs) -> sp.csr_matrix:
    """Row-wise TF-IDF of a count matrix (rows L2-normalised, empty rows stay empty)."""
    out = counts.tocsr(copy=True).astype(np.float64)
    out.data = out.data * idf(np.asarray(df)[out.indices], n_docs)
    sq = np.asarray(out.multiply(out).sum(axis=1)).ravel()
    norms = np.sqrt(sq)
    norms[norms == 0] = 1.0
    scale = np.repeat(1.0 / norms, np.diff(out.indptr))
    out.data = out.data * scale
    return out


# ---------------------------------------------------------------------------
# corpus file


def _parse_labels(head, path, lineno):
    labels = []
    col = 1
    for part in head.split(","):
        try:
            labels.append(int(part))
        except ValueError:
            raise CorpusFormatError(path, lineno, col, f"bad label {part!r}") from None
        col += len(part) + 1
    return tuple(labels)


def parse_corpus(stream, path="<stream>") -> Corpus:
    docs = []
    for lineno, raw in enumerate(stream, 1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        if "\t" not in line:
            raise CorpusFormatError(path, lineno, len(line) + 1, "missing TAB after labels")
        head, body = line.split("\t", 1)
        labels = _parse_labels(head, path, lineno)
        ids, counts = [], []
        col = len(head) + 2
        for tok in body.split(" "):
            if tok == "":
                col += 1
                continue
            tid_s, sep, cnt_s = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                tid, cnt = int(tid_s), int(cnt_s)
            except ValueError:
                raise CorpusFormatError(path, lineno, col, f"bad term entry {tok!r}") from None
            if tid < 0 or cnt < 1:
                raise CorpusFormatError(path, lineno, col, f"bad term entry {tok!r}")
            if ids and tid == ids[-1]:
                raise CorpusFormatError(path, lineno, col, f"duplicate term id {tid}")
            if ids and tid < ids[-1]:
                raise CorpusFormatError(path, lineno, col, f"term id {tid} is not ascending")
            ids.append(tid)
            counts.append(cnt)
            col += len(tok) + 1
        docs.append(Document(labels, np.array(ids, dtype=np.int64), np.array(counts, dtype=np.int64)))
    return Corpus(docs)


def load_corpus(path, split_path=None) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        corpus = parse_corpus(fh, os.fspath(path))
    if split_path is not None:
        corpus.splits = load_splits(split_path)
        corpus.splits.validate(len(corpus))
    return corpus


def format_document(doc: Document) -> str:
    head = ",".join(str(lab) for lab in doc.labels)
    body = " ".join(f"{t}:{c}" for t, c in zip(doc.term_ids.tolist(), doc.counts.tolist()))
    return f"{head}\t{body}\n"


def write_corpus(corpus: Corpus, path_or_stream):
    if isinstance(path_or_stream, (str, os.PathLike)):
        with open(path_or_stream, "w", encoding="utf-8", newline="\n") as fh:
            write_corpus(corpus, fh)
        return
    for d in corpus.documents:
        path_or_stream.write(format_document(d))


def dumps_corpus(corpus: Corpus) -> str:
    buf = io.StringIO()
    write_corpus(corpus, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# splits


def load_splits(path) -> SplitSpec:
    subsets = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            name = parts[0]
            if name in subsets:
                raise CorpusFormatError(path, lineno, 1, f"split {name!r} defined twice")
            try:
                subsets[name] = [int(p) for p in parts[1:]]
            except ValueError:
                raise CorpusFormatError(path, lineno, len(name) + 2, "bad document id") from None
    return SplitSpec(subsets)


def write_splits(splits: SplitSpec, path):
    with open(path, "w", encoding="utf-8") as fh:
        for name, ids in splits.subsets.items():
            fh.write(" ".join([name] + [str(i) for i in ids.tolist()]) + "\n")


def random_splits(n_docs, rng, validation=0.1, test=0.1) -> SplitSpec:
    perm = rng.permutation(n_docs)
    n_val = int(math.floor(validation * n_docs))
    n_test = int(math.floor(test * n_docs))
    return SplitSpec({
        "train": np.sort(perm[n_val + n_test:]),
        "validation": np.sort(perm[:n_val]),
        "test": np.sort(perm[n_val:n_val + n_test]),
    })
