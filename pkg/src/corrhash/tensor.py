"""Dense numerics, seeded randomness and parameter storage.

Everything is float64.  Gradients for the model are hand-derived in
:mod:`corrhash.model` and :mod:`corrhash.objective`; this module only holds
the shared primitives and the :class:`ParamStore` they accumulate into.
"""

from __future__ import annotations

import zlib
from collections import OrderedDict

import numpy as np

DTYPE = np.float64


def gemm(a, b):
    """Dense matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"gemm shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(z):
    """Logistic function that neither overflows nor returns NaN."""
    z = np.asarray(z, dtype=DTYPE)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z):
    """log(1 + e^z), stable for large |z|."""
    return np.logaddexp(0.0, z)


def log_sigmoid(z):
    return -softplus(-np.asarray(z, dtype=DTYPE))


def logsumexp(a, axis=None, keepdims=False):
    a = np.asarray(a, dtype=DTYPE)
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out


class RngStream:
    """Seeded random stream with labelled, independent substreams.

    Substreams are keyed on ``(seed, crc32(label))`` through numpy's
    ``SeedSequence`` so that ``substream("dropout")`` is the same generator on
    every run and platform regardless of what the parent has drawn.
    """

    def __init__(self, seed: int, _key: tuple = ()):
        self.seed = int(seed)
        self._key = tuple(_key)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def substream(self, label: str) -> "RngStream":
        return RngStream(self.seed, self._key + (zlib.crc32(label.encode("utf-8")),))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, shape):
        return self._gen.standard_normal(shape, dtype=DTYPE)

    def uniform(self, shape):
        return self._gen.random(shape, dtype=DTYPE)

    def integers(self, high, shape=None):
        return self._gen.integers(0, high, size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)


def sample_gaussian(rng: RngStream, n: int):
    return rng.normal(n)


def sample_uniform(rng: RngStream, n: int):
    return rng.uniform(n)


class ParamStore:
    """Named parameters with paired gradient and Adam moment slots."""

    def __init__(self):
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.grads: dict[str, np.ndarray] = {}
        self.m1: dict[str, np.ndarray] = {}
        self.m2: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.ascontiguousarray(value, dtype=DTYPE)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m1[name] = np.zeros_like(value)
        self.m2[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def accumulate(self, name, grad):
        g = self.grads[name]
        if g.shape != np.shape(grad):
            raise ValueError(f"gradient for {name!r} has shape {np.shape(grad)}, expected {g.shape}")
        g += grad

    def all_finite(self):
        return all(np.isfinite(p).all() for p in self.params.values()) and all(
            np.isfinite(g).all() for g in self.grads.values()
        )

    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))
