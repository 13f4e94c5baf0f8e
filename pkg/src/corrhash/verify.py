"""Exact-enumeration checks of the augmentation identity and the k-bound.

Each ``check_*`` returns a :class:`CheckResult`; :func:`run_all` collects
them into a :class:`VerifyReport`.  Monte-Carlo checks use a 3 standard
error tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from corrhash import boltzmann as bm
from corrhash import kernels, objective
from corrhash.model import HashingModel, ModelConfig, Posterior
from corrhash.tensor import RngStream, softplus

Z_TOL = 3.0


@dataclass
class CheckResult:
    name: str
    statistic: float
    threshold: float
    passed: bool
    trials: int
    stderr: float = float("nan")
    seed: int | None = None
    seconds: float = 0.0
    details: dict = field(default_factory=dict)


@dataclass
class VerifyReport:
    checks: dict = field(default_factory=dict)

    def add(self, result: CheckResult):
        if result.name in self.checks:
            raise KeyError(f"check {result.name!r} reported twice")
        self.checks[result.name] = result

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def to_text(self):
        lines = []
        for c in self.checks.values():
            mark = "PASS" if c.passed else "FAIL"
            lines.append(
                f"[{mark}] {c.name}: statistic={c.statistic:.3e} threshold={c.threshold:.3e} "
                f"trials={c.trials} se={c.stderr:.3e} seed={c.seed} ({c.seconds:.1f}s)"
            )
            for k, v in c.details.items():
                lines.append(f"       {k}: {v}")
        return "\n".join(lines) + "\n"

    def to_tsv(self):
        rows = ["check\tstatistic\tthreshold\tpassed\ttrials\tstderr\tseed\tseconds"]
        for c in self.checks.values():
            rows.append(
                f"{c.name}\t{c.statistic:.6e}\t{c.threshold:.6e}\t{int(c.passed)}\t{c.trials}\t"
                f"{c.stderr:.6e}\t{c.seed}\t{c.seconds:.3f}"
            )
        return "\n".join(rows) + "\n"


def random_spd(rng: RngStream, m, ridge=0.1, scale=1.0):
    a = rng.normal((m, m)) * scale
    return a @ a.T / m + ridge * np.eye(m)


def random_lowrank_params(rng: RngStream, m, v, mu_scale=1.0, factor_scale=0.7):
    mu = rng.normal(m) * mu_scale
    diag = np.exp(rng.normal(m) * 0.3 - 0.5)
    u = rng.normal((m, v)) * factor_scale
    return bm.BoltzmannParams(mu, diag, u)


# ---------------------------------------------------------------------------
# augmentation identity


def check_theorem1(trials=1000, max_m=6, seed=0, linear_sign=1.0, grid_cases=4,
                   residual_tol=1e-8, grid_tol=1e-3) -> CheckResult:
    t0 = time.perf_counter()
    rng = RngStream(seed).substream("theorem1")
    worst = 0.0
    for _ in range(trials):
        m = int(rng.integers(max_m)) + 1
        p = bm.BoltzmannParams.from_dense(rng.normal(m) * 2.0, random_spd(rng, m))
        s = (rng.uniform(m) < 0.5).astype(float)
        r = rng.normal(m) * 3.0
        worst = max(worst, abs(bm.augmentation_residual(p, s, r, linear_sign=linear_sign)))
    grid_worst = 0.0
    for case in range(grid_cases):
        m = 1 + case % 2
        p = bm.BoltzmannParams.from_dense(rng.normal(m), random_spd(rng, m, ridge=0.2, scale=0.8))
        table = bm.enumerate_states(p)
        integ = bm.grid_marginal(p, table)
        grid_worst = max(grid_worst, float(np.max(np.abs(integ - table.pmf) / table.pmf)))
    ok = worst < residual_tol and grid_worst < grid_tol
    return CheckResult(
        "theorem1_augmentation", worst, residual_tol, ok, trials, seed=seed,
        seconds=time.perf_counter() - t0,
        details={"grid_max_rel_err": grid_worst, "grid_threshold": grid_tol, "grid_cases": grid_cases},
    )


# ---------------------------------------------------------------------------
# k-bound monotonicity


def _decoder_table(rng: RngStream, m, vocab=20, doc_len=25):
    """log p(x|s) + log p(s) for every state of a random softmax decoder."""
    e = rng.normal((m, vocab))
    b = rng.normal(vocab) * 0.5
    counts = np.bincount(rng.integers(vocab, doc_len), minlength=vocab).astype(float)
    states = bm.state_matrix(m)
    logits = states @ e + b
    top = logits.max(1, keepdims=True)
    lse = (np.log(np.exp(logits - top).sum(1, keepdims=True)) + top)[:, 0]
    return logits @ counts - counts.sum() * lse - m * np.log(2.0)


def mixture_kl(p, table, r_samples, k_set):
    """Per-trial exact KL(h_k || q) and E_h[log h_k + E] for nested prefixes.

    ``r_samples`` is (T, max(k), m).  Returns dicts keyed by k of (T,) arrays.
    """
    states = table.states()
    energy = -table.log_mass  # E(s) = -(0.5 s^T Σ s + μ^T s)
    kl, second = {}, {}
    for k in k_set:
        log_h = kernels.mixture_logpmf(states, np.ascontiguousarray(r_samples[:, :k, :]))
        h = np.exp(log_h)
        kl[k] = (h * (log_h - table.log_pmf[None, :])).sum(1)
        second[k] = (h * (log_h + energy[None, :])).sum(1)
    return kl, second


def check_theorem2(m=4, k_set=(1, 2, 4, 8), trials=100_000, seed=0, params=None,
                   chunk=20_000) -> CheckResult:
    """E[KL(h_k || q)] non-increasing in k and every L_k below the exact ELBO.

    r-samples are exact draws of the auxiliary distribution and the k-prefixes
    share them (common random numbers).  L_k is computed without log Z, L with
    it.
    """
    t0 = time.perf_counter()
    k_set = tuple(sorted(k_set))
    rng = RngStream(seed).substream("theorem2")
    if params is None:
        params = random_lowrank_params(rng.substream("params"), m, min(2, m))
    table = bm.enumerate_states(params)
    f = _decoder_table(rng.substream("decoder"), params.m)
    q = table.pmf
    elbo = float(q @ (f - table.log_pmf))
    first = float(q @ (f - table.log_mass))  # E_q[log p(x,s) + E(s)], no log Z

    kmax = k_set[-1]
    kl = {k: [] for k in k_set}
    sec = {k: [] for k in k_set}
    draw = rng.substream("r")
    left = trials
    while left > 0:
        n = min(chunk, left)
        r = bm.sample_r_exact(params, table, draw, n * kmax).reshape(n, kmax, params.m)
        a, b = mixture_kl(params, table, r, k_set)
        for k in k_set:
            kl[k].append(a[k])
            sec[k].append(b[k])
        left -= n
    kl = {k: np.concatenate(v) for k, v in kl.items()}
    sec = {k: np.concatenate(v) for k, v in sec.items()}

    def se(x):
        return float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0

    worst_z = 0.0
    steps = {}
    for ka, kb in zip(k_set, k_set[1:]):
        d = kl[ka] - kl[kb]
        s = se(d)
        z = -d.mean() / s if s > 0 else (0.0 if d.mean() >= 0 else np.inf)
        worst_z = max(worst_z, z)
        steps[f"{ka}->{kb}"] = (float(d.mean()), s)
    bounds = {}
    bound_ok = True
    for k in k_set:
        lk = first - sec[k]
        bounds[k] = (float(lk.mean()), se(lk))
        if lk.mean() > elbo + Z_TOL * se(lk):
            bound_ok = False
    mean_kl = {k: float(v.mean()) for k, v in kl.items()}
    gap_shrinks = mean_kl[k_set[-1]] < mean_kl[k_set[0]] if k_set[-1] > k_set[0] else True
    ok = worst_z < Z_TOL and bound_ok and gap_shrinks
    return CheckResult(
        "theorem2_monotone_bound", worst_z, Z_TOL, ok, trials,
        stderr=se(kl[k_set[0]]), seed=seed, seconds=time.perf_counter() - t0,
        details={
            "mean_kl": mean_kl, "kl_steps(mean,se)": steps, "elbo_exact": elbo,
            "L_k(mean,se)": bounds, "L_k_below_elbo": bound_ok, "gap_shrinks": gap_shrinks,
        },
    )


# ---------------------------------------------------------------------------
# log Z cancellation


def toy_model(seed=0, vocab=20, m=4, v=2, hidden=(8,), weight_scale=0.25):
    rng = RngStream(seed).substream("toy-model")
    model = HashingModel(ModelConfig(vocab, m, v, hidden, 1.0), rng.substream("init"))
    for name in model.store:
        model.store[name][...] += weight_scale * rng.normal(model.store[name].shape)
    return model


def toy_document(seed=0, vocab=20, length=25):
    rng = RngStream(seed).substream("toy-doc")
    counts = np.bincount(rng.integers(vocab, length), minlength=vocab).astype(float)
    norm = np.linalg.norm(counts)
    return counts[None, :] / (norm if norm > 0 else 1.0), counts[None, :]


def _replicate(post: Posterior, n):
    return Posterior(np.repeat(post.mu, n, 0), np.repeat(post.log_diag, n, 0),
                     np.repeat(post.factors, n, 0))


def bound_estimates(model, post: Posterior, counts, k, trials, rng: RngStream, chunk=5000):
    """Per-trial values of the log-Z-free estimator with exact r-samples."""
    p = bm.BoltzmannParams(post.mu[0], post.diag[0], post.factors[0])
    table = bm.enumerate_states(p)
    out = []
    left = trials
    while left > 0:
        n = min(chunk, left)
        r0 = bm.sample_r_exact(p, table, rng, n)
        R = bm.sample_r_exact(p, table, rng, n * k).reshape(n, k, p.m)
        u = rng.uniform((n, p.m))
        u_mix = rng.uniform((n, p.m))
        comp = rng.integers(k, n)
        res = objective.bound_forward(model, _replicate(post, n), sp.csr_matrix(np.repeat(counts, n, 0)),
                                      r0, R, u, u_mix, comp)
        out.append(res.values)
        left -= n
    return np.concatenate(out)


def reference_bound(model, post: Posterior, counts, k, trials, rng: RngStream):
    """Exact ELBO (with log Z) minus a Monte-Carlo E[KL(h_k || q)]."""
    p = bm.BoltzmannParams(post.mu[0], post.diag[0], post.factors[0])
    table = bm.enumerate_states(p)
    states = table.states()
    loglik, _ = model.decode_loglik(states, np.repeat(counts, len(states), 0))
    f = loglik + model.log_prior()
    q = table.pmf
    elbo = float(q @ (f - table.log_pmf))
    r = bm.sample_r_exact(p, table, rng, trials * k).reshape(trials, k, p.m)
    kl, _ = mixture_kl(p, table, r, (k,))
    return elbo - kl[k], elbo, table.log_z


def check_cancellation(m=4, k=4, trials=10_000, seed=0, model=None, counts=None, post=None,
                       ref_trials=None) -> CheckResult:
    """Mean of the log-Z-free estimator vs. the bound computed with explicit log Z."""
    t0 = time.perf_counter()
    rng = RngStream(seed).substream("cancellation")
    model = model or toy_model(seed, m=m)
    if counts is None:
        x, counts = toy_document(seed, model.config.vocab_size)
    else:
        counts = np.atleast_2d(counts)
        norm = np.linalg.norm(counts)
        x = counts / (norm if norm > 0 else 1.0)
    if post is None:
        post, _ = model.encode(x)
    est = bound_estimates(model, post, counts, k, trials, rng.substream("estimator"))
    ref, elbo, log_z = reference_bound(model, post, counts, k, ref_trials or trials,
                                       rng.substream("reference"))
    se_est = est.std(ddof=1) / np.sqrt(len(est))
    se_ref = ref.std(ddof=1) / np.sqrt(len(ref))
    se = float(np.hypot(se_est, se_ref))
    diff = float(est.mean() - ref.mean())
    z = abs(diff) / se if se > 0 else (0.0 if diff == 0 else np.inf)
    return CheckResult(
        "logz_cancellation", z, Z_TOL, bool(z < Z_TOL), trials, stderr=se, seed=seed,
        seconds=time.perf_counter() - t0,
        details={"estimator_mean": float(est.mean()), "reference_mean": float(ref.mean()),
                 "elbo_exact": elbo, "log_z": log_z, "k": k},
    )


# ---------------------------------------------------------------------------
# gradients


def gradient_errors(model, x, counts, k, noise, step=1e-5, dropout_seed=None, mutate=None,
                    abs_floor=1e-7):
    """Per-tensor relative error of the analytic gradient vs central differences.

    The smooth surrogate (threshold replaced by (σ(r) - u + 1)/2) is used at both
    binarisation sites so the loss is differentiable in every parameter.
    """
    def drop():
        return None if dropout_seed is None else RngStream(dropout_seed).substream("dropout")

    def loss():
        return objective.loss_lk(model, x, counts, k, None, dropout_rng=drop(), smooth=True,
                                 noise=noise).loss

    model.store.zero_grad()
    ev = objective.loss_lk(model, x, counts, k, None, dropout_rng=drop(), smooth=True, noise=noise)
    objective.backward(model, ev)
    if mutate is not None:
        mutate(model.store.grads)
    errors = {}
    for name in model.store:
        flat = model.store[name].reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = loss()
            flat[i] = old - step
            down = loss()
            flat[i] = old
            fd[i] = (up - down) / (2 * step)
        an = model.store.grads[name].reshape(-1)
        # Relative error, falling back to absolute when both gradients vanish.
        denom = max(np.linalg.norm(fd), np.linalg.norm(an))
        errors[name] = float(np.linalg.norm(fd - an) / (denom if denom > abs_floor else 1.0))
    model.store.zero_grad()
    return errors


def check_gradients(seed=0, vocab=30, m=6, v=2, k=2, batch=4, zero_noise=False, mutate=None,
                    tol=1e-4) -> CheckResult:
    t0 = time.perf_counter()
    rng = RngStream(seed).substream("gradients")
    model = HashingModel(ModelConfig(vocab, m, v, (10, 8), 0.8), rng.substream("init"))
    for name in model.store:
        model.store[name][...] += 0.3 * rng.normal(model.store[name].shape)
    counts = rng.integers(3, (batch, vocab)).astype(float)
    counts[:, 0] += 1  # no empty documents
    x = counts / np.linalg.norm(counts, axis=1, keepdims=True)
    noise = objective.draw_noise(batch, m, v, k, rng.substream("noise"))
    if zero_noise:
        noise.eps1[...] = 0.0
        noise.eps2[...] = 0.0
        noise.u[...] = 0.5
        noise.u_mix[...] = 0.5
    errors = gradient_errors(model, sp.csr_matrix(x), sp.csr_matrix(counts), k, noise,
                             dropout_seed=seed, mutate=mutate)
    worst = max(errors.values())
    return CheckResult(
        "gradients_smooth_surrogate", worst, tol, worst < tol, model.store.num_parameters(),
        seed=seed, seconds=time.perf_counter() - t0, details={"per_tensor": errors},
    )


def run_all(seed=0, fast=False) -> VerifyReport:
    report = VerifyReport()
    report.add(check_theorem1(trials=200 if fast else 1000, seed=seed))
    report.add(check_theorem2(trials=10_000 if fast else 100_000, seed=seed))
    report.add(check_cancellation(trials=2_000 if fast else 10_000, seed=seed))
    report.add(check_gradients(seed=seed))
    return report
