"""Adam training loop with step decay, dropout and validation-based selection."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from corrhash import objective
from corrhash.corpus import Corpus, document_frequency, tfidf_matrix
from corrhash.model import HashingModel, ModelConfig, dumps_checkpoint, loads_checkpoint
from corrhash.retrieval import RetrievalIndex, hash_matrix, pack_bits, precision_at_k
from corrhash.tensor import ParamStore, RngStream

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    m: int = 32
    v: int = 10
    k: int = 10
    lr: float = 1e-3
    decay_every: int = 10_000
    decay_factor: float = 0.96
    batch_size: int = 100
    epochs: int = 30
    keep_prob: float = 0.9
    hidden: tuple = (500, 500)
    eval_k: int = 100
    validate_every: int = 0   # iterations; 0 = once per epoch
    max_iters: int = 0        # 0 = no cap
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.m < 1 or self.v < 0 or self.k < 1:
            raise ValueError(f"need m >= 1, v >= 0, k >= 1 (got m={self.m}, v={self.v}, k={self.k})")
        for name in ("lr", "decay_factor", "keep_prob"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.decay_every < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("decay_every, batch_size and epochs must be >= 1")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Learning rate for 0-based iteration ``step``."""
    return cfg.lr * cfg.decay_factor ** (step // cfg.decay_every)


def adam_step(store: ParamStore, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of every parameter; zeroes the gradients."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = store.grads[name]
        m1, m2 = store.m1[name], store.m2[name]
        m1 *= beta1
        m1 += (1.0 - beta1) * g
        m2 *= beta2
        np.multiply(g, g, out=g)
        g *= 1.0 - beta2
        m2 += g
        # g is reused as scratch for the step denominator
        np.divide(m2, c2, out=g)
        np.sqrt(g, out=g)
        g += eps
        np.divide(m1, g, out=g)
        g *= lr / c1
        p -= g
        g.fill(0.0)


@dataclass
class Features:
    """Count and TF-IDF matrices for a corpus; idf statistics come from ``train``."""

    counts: object
    tfidf: object
    labels: list
    splits: dict

    @classmethod
    def from_corpus(cls, corpus: Corpus, vocab_size: int | None = None, splits=None):
        vocab_size = vocab_size or corpus.vocab_size()
        counts = corpus.count_matrix(vocab_size)
        splits = splits or (corpus.splits.subsets if corpus.splits is not None else None)
        if splits is None:
            splits = {"train": np.arange(len(corpus))}
        train = np.asarray(splits["train"])
        df = document_frequency(counts[train])
        return cls(counts, tfidf_matrix(counts, df, len(train)), corpus.labels(),
                   {k: np.asarray(v) for k, v in splits.items()})

    @property
    def vocab_size(self):
        return self.counts.shape[1]

    def subset(self, name):
        ids = self.splits[name]
        return ids, self.tfidf[ids], self.counts[ids], [self.labels[i] for i in ids]


def evaluate(model, feats: Features, queries="test", database="train", k=100, bits=None):
    """precision@k of ``queries`` documents retrieving from ``database`` documents."""
    db_ids, db_x, _, db_labels = feats.subset(database)
    q_ids, q_x, _, q_labels = feats.subset(queries)
    db_bits = hash_matrix(model, db_x) if bits is None else bits(db_x)
    q_bits = hash_matrix(model, q_x) if bits is None else bits(q_x)
    index = RetrievalIndex.from_bits(db_bits, db_ids, db_labels)
    return precision_at_k(pack_bits(q_bits), q_ids, q_labels, index, k)


@dataclass
class TrainResult:
    model: HashingModel
    checkpoint: bytes
    best_precision: float
    best_iter: int
    log_rows: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    def log_text(self) -> str:
        return "".join(
            f"{r['iter']}\t{r['loss']:.6f}\t{r['val_precision']:.6f}\t{r['lr']:.8g}\t{r['elapsed_s']:.3f}\n"
            for r in self.log_rows
        )


def train(cfg: TrainConfig, feats: Features, log_stream=None, on_validate=None) -> TrainResult:
    """Minimise the negative bound on ``feats.splits['train']``.

    Validation precision (validation docs querying the training docs) picks
    the returned checkpoint; without a validation split the last state wins.
    """
    root = RngStream(cfg.seed)
    model = HashingModel(
        ModelConfig(feats.vocab_size, cfg.m, cfg.v, cfg.hidden, cfg.keep_prob), root.substream("init")
    )
    shuffle_rng = root.substream("shuffle")
    noise_rng = root.substream("noise")
    dropout_rng = root.substream("dropout")
    train_ids = feats.splits["train"]
    has_val = "validation" in feats.splits and len(feats.splits["validation"]) > 0
    n = len(train_ids)
    per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    every = cfg.validate_every or per_epoch
    result = TrainResult(model, dumps_checkpoint(model), -1.0, 0)
    start = time.perf_counter()
    step = 0
    window = []

    def validate():
        prec = evaluate(model, feats, "validation", "train", cfg.eval_k) if has_val else float("nan")
        row = {
            "iter": step, "loss": float(np.mean(window)) if window else float("nan"),
            "val_precision": prec, "lr": lr_at(max(step - 1, 0), cfg),
            "elapsed_s": time.perf_counter() - start,
        }
        result.log_rows.append(row)
        if log_stream is not None:
            log_stream.write(result.log_text().splitlines(keepends=True)[-1])
            log_stream.flush()
        log.info("iter %d loss %.4f val_precision %.4f", step, row["loss"], prec)
        if not has_val or prec > result.best_precision:
            result.best_precision = prec if has_val else result.best_precision
            result.best_iter = step
            result.checkpoint = dumps_checkpoint(model)
        if on_validate is not None:
            on_validate(row)
        window.clear()

    done = False
    for _epoch in range(cfg.epochs):
        order = train_ids[shuffle_rng.permutation(n)]
        for b0 in range(0, n, cfg.batch_size):
            batch = order[b0:b0 + cfg.batch_size]
            ev = objective.loss_lk(model, feats.tfidf[batch], feats.counts[batch], cfg.k, noise_rng,
                                   dropout_rng=dropout_rng)
            if not np.isfinite(ev.loss):
                raise TrainingError(
                    f"non-finite loss {ev.loss} at iteration {step} (batch docs {batch[:5].tolist()}...)"
                )
            objective.backward(model, ev)
            if not model.store.all_finite():
                raise TrainingError(f"non-finite gradient at iteration {step}")
            adam_step(model.store, lr_at(step, cfg))
            step += 1
            window.append(ev.loss)
            result.losses.append(ev.loss)
            if step % every == 0:
                validate()
            if cfg.max_iters and step >= cfg.max_iters:
                done = True
                break
        if done:
            break
    if window or not result.log_rows:
        validate()
    result.model = loads_checkpoint(result.checkpoint)
    return result
