"""Encoder network and softmax decoder, with hand-written backward passes.

The encoder maps a TF-IDF row to the posterior parameters (μ, D^{1/2}, U):
ReLU MLP trunk, then three linear heads.  The log-diagonal head output ``a``
gives D = exp(a) and D^{1/2} = exp(a / 2).  The decoder is the log-linear
softmax over the vocabulary, logits = s E + b.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from corrhash.tensor import DTYPE, ParamStore, RngStream, logsumexp

MAGIC = b"CHSH"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    m: int
    v: int = 10
    hidden: tuple = (500, 500)
    keep_prob: float = 0.9

    def __post_init__(self):
        if self.m < 1 or self.v < 0 or self.vocab_size < 1:
            raise ValueError(f"invalid model shape m={self.m} v={self.v} |V|={self.vocab_size}")
        if self.v > self.m:
            raise ValueError(f"rank v={self.v} exceeds code length m={self.m}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must be in (0, 1]")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("need at least one hidden layer")


@dataclass
class Posterior:
    """Batched posterior parameters; ``log_diag`` is the raw head output."""

    mu: np.ndarray          # (B, m)
    log_diag: np.ndarray    # (B, m), D = exp(log_diag)
    factors: np.ndarray     # (B, m, v)

    @property
    def sqrt_diag(self):
        return np.exp(0.5 * self.log_diag)

    @property
    def diag(self):
        return np.exp(self.log_diag)

    def __len__(self):
        return self.mu.shape[0]

    def row(self, i) -> "Posterior":
        return Posterior(self.mu[i:i + 1], self.log_diag[i:i + 1], self.factors[i:i + 1])

    def sigma(self, i=0):
        u = self.factors[i]
        return np.diag(self.diag[i]) + u @ u.T


def _as_rows(x, vocab_size):
    if sp.issparse(x):
        x = x.tocsr()
    else:
        x = np.atleast_2d(np.asarray(x, dtype=DTYPE))
    if x.shape[1] != vocab_size:
        raise ValueError(f"input has {x.shape[1]} features, model vocabulary is {vocab_size}")
    return x


class HashingModel:
    def __init__(self, config: ModelConfig, rng: RngStream | None = None):
        self.config = config
        self.store = ParamStore()
        rng = rng or RngStream(0)
        sizes = (config.vocab_size,) + tuple(config.hidden)
        for i in range(len(config.hidden)):
            self.store.add(f"enc.W{i}", _glorot(rng, sizes[i], sizes[i + 1]))
            self.store.add(f"enc.b{i}", np.zeros(sizes[i + 1]))
        h = sizes[-1]
        m, v = config.m, config.v
        self.store.add("mu.W", _glorot(rng, h, m))
        self.store.add("mu.b", np.zeros(m))
        self.store.add("logd.W", _glorot(rng, h, m))
        self.store.add("logd.b", np.zeros(m))
        if v > 0:
            self.store.add("U.W", _glorot(rng, h, m * v))
            self.store.add("U.b", np.zeros(m * v))
        self.store.add("dec.E", np.zeros((m, config.vocab_size)))
        self.store.add("dec.b", np.zeros(config.vocab_size))

    @property
    def m(self):
        return self.config.m

    @property
    def v(self):
        return self.config.v

    # -- encoder ---------------------------------------------------------

    def encode(self, x, dropout_rng: RngStream | None = None):
        """Forward pass; returns ``(Posterior, cache)``.

        Dropout is active iff ``dropout_rng`` is given (inverted scaling).
        """
        x = _as_rows(x, self.config.vocab_size)
        p = self.store
        keep = self.config.keep_prob
        acts = [x]
        masks = []
        h = x
        for i in range(len(self.config.hidden)):
            z = h @ p[f"enc.W{i}"] + p[f"enc.b{i}"]
            h = np.maximum(z, 0.0)
            if dropout_rng is not None and keep < 1.0:
                mask = (dropout_rng.uniform(h.shape) < keep) / keep
                h = h * mask
            else:
                mask = None
            masks.append(mask)
            acts.append(h)
        b = h.shape[0]
        mu = h @ p["mu.W"] + p["mu.b"]
        log_diag = h @ p["logd.W"] + p["logd.b"]
        if self.v > 0:
            factors = (h @ p["U.W"] + p["U.b"]).reshape(b, self.m, self.v)
        else:
            factors = np.zeros((b, self.m, 0))
        cache = {"acts": acts, "masks": masks}
        return Posterior(mu, log_diag, factors), cache

    def encode_backward(self, cache, d_mu, d_log_diag, d_factors):
        """Accumulate encoder parameter gradients from head-output gradients."""
        if cache is None:
            raise RuntimeError("encode_backward called without a recorded forward pass")
        p = self.store
        acts, masks = cache["acts"], cache["masks"]
        h = acts[-1]
        p.accumulate("mu.W", h.T @ d_mu)
        p.accumulate("mu.b", d_mu.sum(0))
        p.accumulate("logd.W", h.T @ d_log_diag)
        p.accumulate("logd.b", d_log_diag.sum(0))
        dh = d_mu @ p["mu.W"].T + d_log_diag @ p["logd.W"].T
        if self.v > 0:
            du = d_factors.reshape(h.shape[0], -1)
            p.accumulate("U.W", h.T @ du)
            p.accumulate("U.b", du.sum(0))
            dh = dh + du @ p["U.W"].T
        for i in reversed(range(len(self.config.hidden))):
            out = acts[i + 1]
            if masks[i] is not None:
                dh = dh * masks[i]
            dz = dh * (out > 0)
            prev = acts[i]
            gw = prev.T @ dz
            p.accumulate(f"enc.W{i}", np.asarray(gw))
            p.accumulate(f"enc.b{i}", dz.sum(0))
            if i > 0:
                dh = dz @ p[f"enc.W{i}"].T

    # -- decoder ---------------------------------------------------------

    def decode_loglik(self, s, counts):
        """Σ_t n_t log softmax_t(s E + b) per row; returns ``(values, cache)``."""
        s = np.atleast_2d(np.asarray(s, dtype=DTYPE))
        counts = _as_rows(counts, self.config.vocab_size)
        logits = s @ self.store["dec.E"] + self.store["dec.b"]
        lse = logsumexp(logits, axis=1)
        if sp.issparse(counts):
            dot = np.asarray(counts.multiply(logits).sum(axis=1)).ravel()
            total = np.asarray(counts.sum(axis=1)).ravel()
        else:
            dot = (counts * logits).sum(1)
            total = counts.sum(1)
        values = dot - total * lse
        cache = {"s": s, "counts": counts, "logits": logits, "lse": lse, "total": total}
        return values, cache

    def decode_backward(self, cache, d_values):
        """Accumulate decoder gradients; returns d/ds (B, m)."""
        if cache is None:
            raise RuntimeError("decode_backward called without a recorded forward pass")
        probs = np.exp(cache["logits"] - cache["lse"][:, None])
        d_logits = -(cache["total"] * d_values)[:, None] * probs
        counts = cache["counts"]
        if sp.issparse(counts):
            d_logits = d_logits + np.asarray(counts.multiply(d_values[:, None]).todense())
        else:
            d_logits = d_logits + counts * d_values[:, None]
        self.store.accumulate("dec.E", cache["s"].T @ d_logits)
        self.store.accumulate("dec.b", d_logits.sum(0))
        return d_logits @ self.store["dec.E"].T

    def log_prior(self, s=None):
        """Uniform Bernoulli(1/2) prior: -m log 2 for every code."""
        return -self.m * np.log(2.0)

    # -- inference -------------------------------------------------------

    def hash_bits(self, x):
        """Deterministic codes: bit i is 1 iff μ_i > 0 (dropout off)."""
        post, _ = self.encode(x)
        return (post.mu > 0).astype(np.uint8)


def _glorot(rng: RngStream, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform((fan_in, fan_out)) * 2.0 - 1.0) * limit


# ---------------------------------------------------------------------------
# checkpoint

def _checksum(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def dumps_checkpoint(model: HashingModel) -> bytes:
    cfg = model.config
    header = MAGIC + struct.pack(
        f"<IIIII{len(cfg.hidden)}I", FORMAT_VERSION, cfg.m, cfg.v, cfg.vocab_size,
        len(cfg.hidden), *cfg.hidden,
    )
    header += struct.pack("<d", cfg.keep_prob)
    body = b"".join(np.ascontiguousarray(model.store[n], dtype="<f8").tobytes() for n in model.store)
    payload = header + body
    return payload + struct.pack("<Q", _checksum(payload))


def save_checkpoint(model: HashingModel, path):
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(model))


def loads_checkpoint(data: bytes) -> HashingModel:
    if len(data) < 4 + 20 + 8 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    payload, (stored,) = data[:-8], struct.unpack("<Q", data[-8:])
    if _checksum(payload) != stored:
        raise CheckpointError("checkpoint checksum mismatch")
    version, m, v, vocab, nh = struct.unpack_from("<IIIII", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 4 + 20
    hidden = struct.unpack_from(f"<{nh}I", data, off)
    off += 4 * nh
    (keep,) = struct.unpack_from("<d", data, off)
    off += 8
    model = HashingModel(ModelConfig(vocab, m, v, tuple(hidden), keep))
    for name in model.store:
        arr = model.store[name]
        n = arr.size * 8
        if off + n > len(payload):
            raise CheckpointError("checkpoint is truncated")
        arr[...] = np.frombuffer(payload, dtype="<f8", count=arr.size, offset=off).reshape(arr.shape)
        off += n
    if off != len(payload):
        raise CheckpointError("trailing bytes in checkpoint")
    return model


def load_checkpoint(path) -> HashingModel:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
