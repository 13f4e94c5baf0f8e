"""Labelled synthetic corpora for smoke tests and benchmarks."""

import numpy as np

from corrhash.corpus import Corpus, Document, random_splits
from corrhash.tensor import RngStream


def topic_corpus(n_docs=1000, n_topics=5, vocab_size=500, doc_len=60, topic_weight=0.7,
                 concentration=0.05, seed=0, validation=0.1, test=0.1) -> Corpus:
    """Documents drawn from one of ``n_topics`` sparse word distributions.

    Each document mixes its topic's distribution (weight ``topic_weight``)
    with a shared background distribution; its label is the topic index.
    """
    rng = RngStream(seed).substream("topic-corpus")
    gen = rng.generator
    topics = gen.dirichlet(np.full(vocab_size, concentration), size=n_topics)
    background = gen.dirichlet(np.ones(vocab_size))
    labels = gen.integers(0, n_topics, n_docs)
    docs = []
    for lab in labels.tolist():
        p = topic_weight * topics[lab] + (1.0 - topic_weight) * background
        length = max(1, int(gen.poisson(doc_len)))
        c = gen.multinomial(length, p)
        ids = np.flatnonzero(c)
        docs.append(Document((int(lab),), ids.astype(np.int64), c[ids].astype(np.int64)))
    corpus = Corpus(docs)
    corpus.splits = random_splits(n_docs, rng.substream("split"), validation, test)
    return corpus
