"""Reparameterised sampling and the k-component training bound.

Per document the estimator is::

    L_k ≈ [log p(x|s) + log p(s) + E(s)] - [log h_k(s~) + E(s~)]

with E(s) = -0.5 s^T Σ s - μ^T s, Σ = D + U U^T, ``s`` a binarised sample of
r ~ N(μ, Σ) and ``s~`` a sample from the mixture h_k built from k further
Gaussian draws.  log Z never appears.  The hard threshold is replaced by
``(σ(r) - u + 1) / 2`` on the backward pass (straight-through), so
∂s/∂r = σ'(r) / 2.  With ``smooth=True`` the same surrogate is also used on
the forward pass, which makes the estimator a differentiable function of the
parameters for finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from corrhash.model import HashingModel, Posterior
from corrhash.tensor import RngStream, sigmoid, softplus

PosteriorParams = Posterior


@dataclass
class Noise:
    """All randomness of one bound evaluation for a batch of B documents.

    Index 0 along the sample axis is the first-term draw; 1..k are the
    mixture columns.
    """

    eps1: np.ndarray   # (B, k+1, m)
    eps2: np.ndarray   # (B, k+1, v)
    u: np.ndarray      # (B, m)
    u_mix: np.ndarray  # (B, m)
    comp: np.ndarray   # (B,) in [0, k)

    @property
    def k(self):
        return self.eps1.shape[1] - 1


def draw_noise(batch, m, v, k, rng: RngStream) -> Noise:
    if k < 1:
        raise ValueError("mixture size k must be >= 1")
    return Noise(
        eps1=rng.normal((batch, k + 1, m)),
        eps2=rng.normal((batch, k + 1, v)),
        u=rng.uniform((batch, m)),
        u_mix=rng.uniform((batch, m)),
        comp=rng.integers(k, batch),
    )


def reparam(post: Posterior, eps1, eps2):
    """r = μ + D^{1/2} ε1 + U ε2 for every sample; (B, n, m)."""
    r = post.mu[:, None, :] + post.sqrt_diag[:, None, :] * eps1
    if post.factors.shape[2]:
        r = r + np.einsum("bmv,bnv->bnm", post.factors, eps2)
    return r


def _threshold(r, u, smooth):
    p = sigmoid(r)
    if smooth:
        return 0.5 * (p - u + 1.0)
    return (p > u).astype(np.float64)


def _quad(s, diag, factors):
    """s^T (D + U U^T) s and U^T s, batched."""
    proj = np.einsum("bmv,bm->bv", factors, s)
    return (diag * s * s).sum(1) + (proj * proj).sum(1), proj


def _log_h(st, R):
    """log h_k(st) with columns R (B, k, m); also the component responsibilities."""
    ll = np.einsum("bkm,bm->bk", R, st) - softplus(R).sum(2)
    top = ll.max(1, keepdims=True)
    w = np.exp(ll - top)
    tot = w.sum(1, keepdims=True)
    return (top + np.log(tot / R.shape[1]))[:, 0], w / tot


# ---------------------------------------------------------------------------
# single-document operations


def sample_r(post: Posterior, rng: RngStream):
    """One Gaussian draw per row; returns ``(r, eps1, eps2)``."""
    b, m = post.mu.shape
    eps1 = rng.normal((b, 1, m))
    eps2 = rng.normal((b, 1, post.factors.shape[2]))
    return reparam(post, eps1, eps2)[:, 0], eps1[:, 0], eps2[:, 0]


def binarize_st(r, rng: RngStream):
    """s_i = 1 iff σ(r_i) > u_i; returns ``(s, u)``."""
    r = np.asarray(r, dtype=np.float64)
    u = rng.uniform(r.shape)
    return _threshold(r, u, False), u


def st_grad(r):
    """Straight-through derivative ∂s/∂r = σ'(r) / 2."""
    p = sigmoid(r)
    return 0.5 * p * (1.0 - p)


@dataclass
class MixtureSample:
    R: np.ndarray       # (m, k), columns r^(1..k)
    component: int      # chosen column, 0-based
    s: np.ndarray       # (m,)
    u: np.ndarray       # (m,)


def sample_mixture(post: Posterior, k: int, rng: RngStream) -> MixtureSample:
    """Draw from h_k for the first row of ``post``."""
    if k < 1:
        raise ValueError("mixture size k must be >= 1")
    m, v = post.mu.shape[1], post.factors.shape[2]
    eps1 = rng.normal((1, k, m))
    eps2 = rng.normal((1, k, v))
    R = reparam(post.row(0), eps1, eps2)[0]
    c = int(rng.integers(k))
    s, u = binarize_st(R[c], rng)
    return MixtureSample(R.T.copy(), c, s, u)


def log_h_k(s, R) -> float:
    """log of (1/k) Σ_j Π_i Bern(s_i; σ(R[i, j])) for R of shape (m, k)."""
    s = np.asarray(s, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    val, _ = _log_h(s[None, :], R.T[None, :, :])
    return float(val[0])


# ---------------------------------------------------------------------------
# the bound


@dataclass
class BoundResult:
    values: np.ndarray      # per-document L_k estimates (B,)
    terms: dict             # per-document components, see bound_forward
    cache: dict

    @property
    def loss(self) -> float:
        return float(-self.values.mean())


def bound_forward(model: HashingModel, post: Posterior, counts, r0, R, u, u_mix, comp,
                  smooth=False) -> BoundResult:
    """Evaluate the estimator given explicit samples.

    ``r0`` (B, m) feeds the first term, ``R`` (B, k, m) the mixture and
    ``comp`` selects the column binarised against ``u_mix``.
    """
    b = r0.shape[0]
    diag, factors, mu = post.diag, post.factors, post.mu
    s = _threshold(r0, u, smooth)
    loglik, dec_cache = model.decode_loglik(s, counts)
    prior = np.full(b, model.log_prior())
    quad_s, proj_s = _quad(s, diag, factors)
    lin_s = (mu * s).sum(1)
    first = loglik + prior - 0.5 * quad_s - lin_s

    rc = R[np.arange(b), comp]
    st = _threshold(rc, u_mix, smooth)
    log_h, resp = _log_h(st, R)
    quad_t, proj_t = _quad(st, diag, factors)
    lin_t = (mu * st).sum(1)
    second = log_h - 0.5 * quad_t - lin_t

    terms = {
        "loglik": loglik, "log_prior": prior,
        "neg_energy_s": 0.5 * quad_s + lin_s,
        "log_h": log_h, "neg_energy_mix": 0.5 * quad_t + lin_t,
        "first": first, "second": second,
    }
    cache = dict(post=post, r0=r0, R=R, comp=comp, s=s, st=st, rc=rc, proj_s=proj_s,
                 proj_t=proj_t, resp=resp, dec=dec_cache)
    return BoundResult(first - second, terms, cache)


def bound_backward(model: HashingModel, result: BoundResult, d_values):
    """Backward through the estimator.

    Accumulates decoder gradients into the model and returns
    ``(d_mu, d_diag, d_factors, d_r0, d_R)`` for the posterior and samples.
    """
    c = result.cache
    post = c["post"]
    g = np.asarray(d_values, dtype=np.float64)
    diag, factors, mu = post.diag, post.factors, post.mu
    s, st = c["s"], c["st"]
    b = s.shape[0]

    ds = model.decode_backward(c["dec"], g)
    sigma_s = diag * s + np.einsum("bmv,bv->bm", factors, c["proj_s"])
    ds -= g[:, None] * (sigma_s + mu)
    d_mu = -g[:, None] * s
    d_diag = -0.5 * g[:, None] * s * s
    d_factors = -g[:, None, None] * np.einsum("bm,bv->bmv", s, c["proj_s"])

    R, resp = c["R"], c["resp"]
    sigma_t = diag * st + np.einsum("bmv,bv->bm", factors, c["proj_t"])
    dst = -g[:, None] * np.einsum("bk,bkm->bm", resp, R) + g[:, None] * (sigma_t + mu)
    d_mu += g[:, None] * st
    d_diag += 0.5 * g[:, None] * st * st
    d_factors += g[:, None, None] * np.einsum("bm,bv->bmv", st, c["proj_t"])
    d_R = -g[:, None, None] * resp[:, :, None] * (st[:, None, :] - sigmoid(R))

    d_r0 = ds * st_grad(c["r0"])
    d_R[np.arange(b), c["comp"]] += dst * st_grad(c["rc"])
    return d_mu, d_diag, d_factors, d_r0, d_R


def reparam_backward(post: Posterior, noise: Noise, d_mu, d_diag, d_factors, d_r):
    """Fold sample gradients ``d_r`` (B, k+1, m) back into head-output gradients."""
    d_mu = d_mu + d_r.sum(1)
    d_sqrt = (d_r * noise.eps1).sum(1)
    if post.factors.shape[2]:
        d_factors = d_factors + np.einsum("bnm,bnv->bmv", d_r, noise.eps2)
    # D = exp(a), D^{1/2} = exp(a/2)
    d_log_diag = d_diag * post.diag + 0.5 * d_sqrt * post.sqrt_diag
    return d_mu, d_log_diag, d_factors


@dataclass
class LossEval:
    loss: float
    bound: BoundResult
    post: Posterior
    noise: Noise
    enc_cache: dict


def loss_lk(model: HashingModel, x, counts, k: int, rng: RngStream, *, dropout_rng=None,
            smooth=False, noise: Noise | None = None) -> LossEval:
    """Mean negative bound over the rows of ``x``; call :func:`backward` next."""
    post, enc_cache = model.encode(x, dropout_rng)
    b = post.mu.shape[0]
    if noise is None:
        noise = draw_noise(b, model.m, model.v, k, rng)
    r = reparam(post, noise.eps1, noise.eps2)
    res = bound_forward(model, post, counts, r[:, 0], r[:, 1:], noise.u, noise.u_mix,
                        noise.comp, smooth=smooth)
    return LossEval(res.loss, res, post, noise, enc_cache)


def backward(model: HashingModel, ev: LossEval):
    """Accumulate gradients of ``ev.loss`` into ``model.store``."""
    b = ev.post.mu.shape[0]
    d_values = np.full(b, -1.0 / b)
    d_mu, d_diag, d_factors, d_r0, d_R = bound_backward(model, ev.bound, d_values)
    d_r = np.concatenate([d_r0[:, None, :], d_R], axis=1)
    d_mu, d_log_diag, d_factors = reparam_backward(ev.post, ev.noise, d_mu, d_diag, d_factors, d_r)
    model.encode_backward(ev.enc_cache, d_mu, d_log_diag, d_factors)
