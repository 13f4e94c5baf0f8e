"""Bit-packed hash codes, Hamming search and precision@K.

Bit ``i`` of an m-bit code lives in word ``i // 64`` at position ``i % 64``;
bits past m are zero.  The index is a brute-force popcount scan (see
:mod:`corrhash.kernels`).  Ties in distance are broken by ascending doc id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from corrhash import kernels
from corrhash.tensor import RngStream


def n_words(m):
    return (m + 63) // 64


def pack_bits(bits) -> np.ndarray:
    """(N, m) array of 0/1 to (N, ceil(m/64)) uint64 words."""
    bits = np.atleast_2d(np.asarray(bits)).astype(bool)
    n, m = bits.shape
    w = n_words(m)
    padded = np.zeros((n, w * 64), dtype=bool)
    padded[:, :m] = bits
    as_bytes = np.packbits(padded.reshape(n, w * 8, 8), axis=2, bitorder="little").reshape(n, w * 8)
    return np.ascontiguousarray(as_bytes).view("<u8").astype(np.uint64)


def unpack_bits(words, m) -> np.ndarray:
    words = np.atleast_2d(np.asarray(words, dtype=np.uint64))
    n = words.shape[0]
    as_bytes = words.astype("<u8").view(np.uint8).reshape(n, -1)
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :m]


@dataclass
class HashCode:
    doc_id: int
    words: np.ndarray
    m: int
    labels: frozenset = frozenset()

    @classmethod
    def from_bits(cls, doc_id, bits, labels=()):
        bits = np.asarray(bits).reshape(-1)
        return cls(int(doc_id), pack_bits(bits[None, :])[0], bits.shape[0], frozenset(labels))

    def bits(self):
        return unpack_bits(self.words[None, :], self.m)[0]

    def hex(self) -> str:
        nbytes = (self.m + 7) // 8
        return self.words.astype("<u8").tobytes()[:nbytes].hex()

    @classmethod
    def from_hex(cls, doc_id, text, m, labels=()):
        raw = bytes.fromhex(text)
        if len(raw) != (m + 7) // 8:
            raise ValueError(f"code {text!r} does not hold {m} bits")
        buf = raw + bytes(n_words(m) * 8 - len(raw))
        words = np.frombuffer(buf, dtype="<u8").astype(np.uint64)
        if m % 8 and raw[-1] >> (m % 8):
            raise ValueError(f"code {text!r} has bits set past position {m}")
        return cls(int(doc_id), words, m, frozenset(labels))


def hamming(a: HashCode, b: HashCode) -> int:
    if a.m != b.m:
        raise ValueError(f"code length mismatch: {a.m} vs {b.m}")
    return int(np.bitwise_count(np.bitwise_xor(a.words, b.words)).sum())


class RetrievalIndex:
    """Immutable array of packed codes sorted by doc id."""

    def __init__(self, codes, doc_ids, labels, m):
        codes = np.atleast_2d(np.asarray(codes, dtype=np.uint64))
        doc_ids = np.asarray(doc_ids, dtype=np.int64)
        if len(np.unique(doc_ids)) != len(doc_ids):
            raise ValueError("duplicate doc ids in index")
        order = np.argsort(doc_ids, kind="stable")
        self.codes = np.ascontiguousarray(codes[order])
        self.doc_ids = doc_ids[order]
        self.labels = [frozenset(labels[i]) for i in order]
        self.m = m
        self._row = {int(d): i for i, d in enumerate(self.doc_ids)}

    @classmethod
    def from_codes(cls, codes: list):
        if not codes:
            raise ValueError("cannot index an empty code list")
        m = codes[0].m
        if any(c.m != m for c in codes):
            raise ValueError("codes in an index must share one length")
        return cls(np.stack([c.words for c in codes]), [c.doc_id for c in codes],
                   [c.labels for c in codes], m)

    @classmethod
    def from_bits(cls, bits, doc_ids, labels):
        bits = np.atleast_2d(bits)
        return cls(pack_bits(bits), doc_ids, labels, bits.shape[1])

    def __len__(self):
        return len(self.doc_ids)

    def row_of(self, doc_id) -> int:
        return self._row.get(int(doc_id), -1)

    def code(self, row) -> HashCode:
        return HashCode(int(self.doc_ids[row]), self.codes[row], self.m, self.labels[row])

    def top_k(self, query: HashCode, k: int = 100, exclude_self: bool = True):
        """Doc ids of the k nearest codes by (distance, doc id)."""
        if len(self) == 0:
            raise ValueError("empty index")
        if query.m != self.m:
            raise ValueError(f"code length mismatch: {query.m} vs {self.m}")
        excl = self.row_of(query.doc_id) if exclude_self else -1
        rows, _ = kernels.topk_hamming(self.codes, np.ascontiguousarray(query.words), k, excl)
        return self.doc_ids[rows]

    def search(self, query_codes, query_ids, k=100, exclude_self=True):
        """Batched top-k; returns (Q, min(k, N)) row indices into the index, -1 padded."""
        queries = np.ascontiguousarray(np.atleast_2d(query_codes), dtype=np.uint64)
        if queries.shape[1] != self.codes.shape[1]:
            raise ValueError("query codes have a different word count than the index")
        if exclude_self:
            excl = np.array([self.row_of(q) for q in query_ids], dtype=np.int64)
        else:
            excl = np.full(len(queries), -1, dtype=np.int64)
        rows, _, counts = kernels.topk_hamming_batch(self.codes, queries, k, excl)
        return rows, counts


def _relevant(query_labels, labels):
    return len(query_labels & labels) > 0


def precision_at_k(query_codes, query_ids, query_labels, index: RetrievalIndex, k=100,
                   exclude_self=True, per_query=False):
    """Mean fraction of the top-k retrieved docs that share a label with the query.

    The denominator is the number actually retrieved, i.e. min(k, index size
    minus self).
    """
    if len(query_ids) == 0:
        raise ValueError("empty query set")
    rows, counts = index.search(query_codes, query_ids, k, exclude_self)
    qlabels = [frozenset(q) for q in query_labels]
    single = all(len(q) == 1 for q in qlabels) and all(len(x) == 1 for x in index.labels)
    prec = np.zeros(len(query_ids))
    if single:
        idx_lab = np.array([next(iter(x)) for x in index.labels])
        q_lab = np.array([next(iter(q)) for q in qlabels])
        for i in range(len(query_ids)):
            got = rows[i, : counts[i]]
            if counts[i]:
                prec[i] = np.mean(idx_lab[got] == q_lab[i])
    else:
        for i in range(len(query_ids)):
            got = rows[i, : counts[i]]
            if counts[i]:
                prec[i] = sum(_relevant(qlabels[i], index.labels[r]) for r in got.tolist()) / counts[i]
    return prec if per_query else float(prec.mean())


# ---------------------------------------------------------------------------
# model and LSH hashing


def hash_document(model, x, doc_id=-1, labels=()) -> HashCode:
    bits = model.hash_bits(x)[0]
    return HashCode.from_bits(doc_id, bits, labels)


def hash_matrix(model, X, batch=1000):
    """Bits for every row of X, in batches; (N, m) uint8."""
    out = []
    for start in range(0, X.shape[0], batch):
        out.append(model.hash_bits(X[start:start + batch]))
    return np.concatenate(out) if out else np.zeros((0, model.m), np.uint8)


class LSHHasher:
    """Random-hyperplane codes of the TF-IDF vector."""

    def __init__(self, vocab_size, m, seed):
        self.m = m
        self.planes = RngStream(seed).substream("lsh").normal((vocab_size, m))

    def bits(self, X):
        proj = X @ self.planes
        return (np.asarray(proj) > 0).astype(np.uint8)


def lsh_hash(x, m, seed, doc_id=-1, labels=()) -> HashCode:
    x = np.asarray(x.todense() if hasattr(x, "todense") else x, dtype=np.float64).reshape(1, -1)
    bits = LSHHasher(x.shape[1], m, seed).bits(x)[0]
    return HashCode.from_bits(doc_id, bits, labels)


# ---------------------------------------------------------------------------
# codes file


def write_codes(path, bits, doc_ids, labels):
    bits = np.atleast_2d(bits)
    m = bits.shape[1]
    words = pack_bits(bits)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# m={m}\n")
        for w, d, lab in zip(words, doc_ids, labels):
            code = HashCode(int(d), w, m)
            fh.write(f"{int(d)} {code.hex()} {','.join(str(x) for x in sorted(lab))}\n")


def read_codes(path) -> list:
    m = None
    codes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# m="):
                    m = int(line[4:])
                continue
            if m is None:
                raise ValueError(f"{path}:{lineno}: codes file lacks a '# m=<bits>' header")
            parts = line.split()
            if len(parts) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected '<doc_id> <hex> <labels>'")
            labels = [int(x) for x in parts[2].split(",")] if len(parts) == 3 else []
            codes.append(HashCode.from_hex(int(parts[0]), parts[1], m, labels))
    return codes


def format_precision_table(results: dict, bits: list) -> str:
    """Tab-separated table, one row per method and one column per code length."""
    lines = ["method\t" + "\t".join(f"{b} bits" for b in bits)]
    for method, row in results.items():
        cells = [f"{row[b]:.4f}" if b in row else "n.a." for b in bits]
        lines.append(method + "\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"
