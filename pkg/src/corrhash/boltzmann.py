"""Boltzmann-machine distribution over {0,1}^m.

``b(s) ∝ exp(0.5 s^T Σ s + μ^T s)`` with Σ = D + U U^T in production.  Exact
enumeration, the Gaussian augmentation identity and exact auxiliary sampling
live here; they are used by the verification suite at small m.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from corrhash import kernels
from corrhash.tensor import DTYPE, RngStream, logsumexp, softplus

MAX_ENUM_BITS = 20


@dataclass
class BoltzmannParams:
    """Linear term ``mu``, diagonal ``diag`` of D and low-rank factor ``factors``.

    ``dense_sigma`` replaces D + U U^T when set; only the verification paths
    construct it (see :meth:`from_dense`).
    """

    mu: np.ndarray
    diag: np.ndarray
    factors: np.ndarray
    dense_sigma: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=DTYPE).reshape(-1)
        self.diag = np.asarray(self.diag, dtype=DTYPE).reshape(-1)
        m = self.mu.shape[0]
        self.factors = np.asarray(self.factors, dtype=DTYPE).reshape(m, -1)
        if self.diag.shape != (m,):
            raise ValueError(f"diag has shape {self.diag.shape}, expected ({m},)")
        if self.dense_sigma is None:
            if not np.all(np.isfinite(self.diag)) or np.any(self.diag < 0):
                raise ValueError("diag entries must be finite and non-negative")
            if self.factors.shape[1] > m:
                raise ValueError(f"rank {self.factors.shape[1]} exceeds m={m}")
        else:
            s = np.asarray(self.dense_sigma, dtype=DTYPE)
            if s.shape != (m, m):
                raise ValueError(f"sigma has shape {s.shape}, expected ({m}, {m})")
            if not np.allclose(s, s.T, atol=1e-12):
                raise ValueError("sigma must be symmetric")
            self.dense_sigma = s

    @classmethod
    def from_dense(cls, mu, sigma):
        mu = np.asarray(mu, dtype=DTYPE).reshape(-1)
        sigma = np.asarray(sigma, dtype=DTYPE)
        return cls(mu, np.diag(sigma).copy(), np.zeros((mu.shape[0], 0)), dense_sigma=sigma)

    @classmethod
    def from_posterior(cls, mu, sqrt_diag, factors):
        return cls(mu, np.asarray(sqrt_diag) ** 2, factors)

    @property
    def m(self) -> int:
        return self.mu.shape[0]

    def sigma(self) -> np.ndarray:
        if self.dense_sigma is not None:
            return self.dense_sigma
        return np.diag(self.diag) + self.factors @ self.factors.T


@dataclass
class EnumTable:
    """Unnormalised log-mass of all 2^m states and log Z.

    State ``i`` has bits ``s_j = (i >> j) & 1``.
    """

    m: int
    log_mass: np.ndarray
    log_z: float

    @property
    def log_pmf(self) -> np.ndarray:
        return self.log_mass - self.log_z

    @property
    def pmf(self) -> np.ndarray:
        return np.exp(self.log_pmf)

    def states(self) -> np.ndarray:
        return state_matrix(self.m)

    def mean(self) -> np.ndarray:
        """E_b[s] for each bit."""
        return self.pmf @ self.states()


def state_matrix(m: int) -> np.ndarray:
    idx = np.arange(1 << m, dtype=np.int64)
    return ((idx[:, None] >> np.arange(m)[None, :]) & 1).astype(DTYPE)


def _check_bits(s, m):
    s = np.asarray(s, dtype=DTYPE)
    if s.shape[-1] != m:
        raise ValueError(f"bit-vector length {s.shape[-1]} does not match m={m}")
    return s


def energy(s, p: BoltzmannParams) -> float:
    """-0.5 s^T Σ s - μ^T s, using D and U directly (no m x m matrix)."""
    s = _check_bits(s, p.m)
    if p.dense_sigma is not None:
        quad = s @ p.dense_sigma @ s
    else:
        proj = p.factors.T @ s
        quad = p.diag @ (s * s) + proj @ proj
    return float(-0.5 * quad - p.mu @ s)


def enumerate_states(p: BoltzmannParams) -> EnumTable:
    if p.m > MAX_ENUM_BITS:
        raise ValueError(f"m={p.m} is too large for exact enumeration (max {MAX_ENUM_BITS})")
    sigma = np.ascontiguousarray(p.sigma())
    log_mass = kernels.enumerate_log_mass(np.ascontiguousarray(p.mu), sigma)
    return EnumTable(p.m, log_mass, float(logsumexp(log_mass)))


def cond_r_given_s(p: BoltzmannParams, s):
    """Mean and covariance of the Gaussian q(r | s) = N(Σ s + μ, Σ)."""
    s = _check_bits(s, p.m)
    if p.dense_sigma is not None:
        mean = p.dense_sigma @ s + p.mu
    else:
        mean = p.diag * s + p.factors @ (p.factors.T @ s) + p.mu
    return mean, p.sigma()


def gaussian_logpdf(r, mean, cov) -> float:
    r = np.asarray(r, dtype=DTYPE)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is numerically singular") from exc
    z = np.linalg.solve(chol, r - mean)
    m = r.shape[0]
    return float(-0.5 * z @ z - np.log(np.diag(chol)).sum() - 0.5 * m * np.log(2 * np.pi))


def augmentation_residual(p: BoltzmannParams, s, r, *, linear_sign=1.0) -> float:
    """Pointwise residual of the Gaussian augmentation identity.

    ``log N(r; μ, Σ) + r^T s - [log N(r; Σ s + μ, Σ) + μ^T s + 0.5 s^T Σ s]``
    is identically zero for Σ ≻ 0.  ``linear_sign`` exists only so the
    harness can be mutation-tested.
    """
    s = _check_bits(s, p.m)
    r = np.asarray(r, dtype=DTYPE)
    sigma = p.sigma()
    lhs = gaussian_logpdf(r, p.mu, sigma) + r @ s
    mean, _ = cond_r_given_s(p, s)
    rhs = gaussian_logpdf(r, mean, sigma) + linear_sign * (p.mu @ s) + 0.5 * s @ sigma @ s
    return float(lhs - rhs)


def sample_s_exact(table: EnumTable, rng: RngStream, n: int | None = None):
    """Categorical draw(s) over all 2^m states; returns (m,) or (n, m) bits."""
    cdf = np.cumsum(table.pmf)
    cdf[-1] = 1.0
    u = rng.uniform(1 if n is None else n)
    idx = np.searchsorted(cdf, u, side="right")
    idx = np.minimum(idx, cdf.shape[0] - 1)
    bits = ((idx[:, None] >> np.arange(table.m)[None, :]) & 1).astype(DTYPE)
    return bits[0] if n is None else bits


def sample_r_exact(p: BoltzmannParams, table: EnumTable, rng: RngStream, n: int | None = None,
                   return_s: bool = False):
    """Exact draws from p(r) = Σ_s b(s) N(r; Σ s + μ, Σ)."""
    count = 1 if n is None else n
    s = sample_s_exact(table, rng, count)
    sigma = p.sigma()
    chol = _psd_factor(sigma)
    eps = rng.normal((count, p.m))
    r = s @ sigma + p.mu + eps @ chol.T
    if n is None:
        r, s = r[0], s[0]
    return (r, s) if return_s else r


def _psd_factor(sigma):
    """L with L L^T = sigma; tolerates singular (e.g. all-zero) sigma."""
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(sigma)
        return v * np.sqrt(np.clip(w, 0.0, None))


def grid_marginal(p: BoltzmannParams, table: EnumTable, points: int = 801, width: float = 9.0):
    """Integrate p(s|r) p(r) over a dense r-grid for every s (m <= 2).

    Returns the integrated pmf in enumeration order.
    """
    if p.m > 2:
        raise ValueError("grid integration is limited to m <= 2")
    sigma = p.sigma()
    sd = np.sqrt(np.diag(sigma))
    states = table.states()
    centers = states @ sigma + p.mu
    lo = centers.min(axis=0) - width * sd
    hi = centers.max(axis=0) + width * sd
    axes = [np.linspace(lo[i], hi[i], points) for i in range(p.m)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p.m)
    chol = np.linalg.cholesky(sigma)
    z = np.linalg.solve(chol, (mesh - p.mu).T).T
    log_n = -0.5 * (z * z).sum(1) - np.log(np.diag(chol)).sum() - 0.5 * p.m * np.log(2 * np.pi)
    log_pr = softplus(mesh).sum(1) + log_n - table.log_z
    out = np.empty(states.shape[0])
    for i, s in enumerate(states):
        # log p(s|r) = Σ s r - softplus(r)
        log_ps = mesh @ s - softplus(mesh).sum(1)
        vals = np.exp(log_ps + log_pr).reshape([points] * p.m)
        for ax in reversed(range(p.m)):
            vals = np.trapezoid(vals, axes[ax], axis=ax)
        out[i] = vals
    return out


def gauss_approx_diagnostic(p: BoltzmannParams, n: int, rng: RngStream) -> dict:
    """How well N(μ, Σ) stands in for the exact auxiliary distribution p(r).

    Importance weights of Gaussian draws against p(r) are ∝ Π (e^{r_i} + 1);
    the report carries their effective sample size and the mean shift of
    exact draws away from μ (exactly Σ E_b[s]).
    """
    if n <= 0:
        raise ValueError("sample count must be positive")
    table = enumerate_states(p)
    sigma = p.sigma()
    chol = np.linalg.cholesky(sigma)
    r = p.mu + rng.normal((n, p.m)) @ chol.T
    logw = softplus(r).sum(1)
    w = np.exp(logw - logw.max())
    ess = float(w.sum() ** 2 / (w * w).sum())
    exact = sample_r_exact(p, table, rng, n)
    return {
        "n": n,
        "ess": ess,
        "ess_fraction": ess / n,
        "mean_shift": exact.mean(0) - r.mean(0),
        "mean_shift_exact": sigma @ table.mean(),
    }


def bernoulli_logpmf(s, logits):
    """Σ_i log Bern(s_i; σ(logits_i)) along the last axis."""
    return (np.asarray(s) * logits - softplus(logits)).sum(-1)
