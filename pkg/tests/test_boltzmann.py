import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corrhash import boltzmann as bm
from corrhash.tensor import RngStream

# 1 + 2e + e^3, from a stand-alone enumeration script
Z_COUPLED_PAIR = 26.522100580105757


def dense(mu, sigma):
    return bm.BoltzmannParams.from_dense(np.asarray(mu, float), np.asarray(sigma, float))


def lowrank(mu, diag, factors):
    return bm.BoltzmannParams(np.asarray(mu, float), np.asarray(diag, float), np.asarray(factors, float))


def random_params(seed, m, v=2):
    g = np.random.default_rng(seed)
    return lowrank(g.normal(size=m), np.exp(g.normal(size=m) * 0.3), g.normal(size=(m, min(v, m))) * 0.7)


class TestParams:
    def test_rank_above_m_rejected(self):
        with pytest.raises(ValueError):
            lowrank(np.zeros(2), np.ones(2), np.zeros((2, 3)))

    def test_negative_diag_rejected(self):
        with pytest.raises(ValueError):
            lowrank(np.zeros(2), [1.0, -1.0], np.zeros((2, 0)))

    def test_asymmetric_dense_rejected(self):
        with pytest.raises(ValueError):
            dense([0, 0], [[1, 0.5], [0, 1]])

    def test_sigma_is_d_plus_uut(self):
        p = random_params(0, 4)
        np.testing.assert_allclose(p.sigma(), np.diag(p.diag) + p.factors @ p.factors.T)


class TestEnergy:
    def test_zero_state(self):
        assert bm.energy(np.zeros(3), random_params(1, 3)) == 0.0

    def test_scalar(self):
        assert bm.energy([1.0], dense([1.0], [[2.0]])) == -2.0

    def test_identity_pair(self):
        assert bm.energy([1.0, 1.0], lowrank([0, 0], [1, 1], np.zeros((2, 0)))) == -1.0

    def test_lowrank_matches_dense(self, np_rng):
        p = random_params(2, 6, 3)
        q = dense(p.mu, p.sigma())
        for s in bm.state_matrix(6)[::7]:
            assert bm.energy(s, p) == pytest.approx(bm.energy(s, q), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bm.energy(np.zeros(2), random_params(0, 3))


class TestEnumerate:
    def test_single_bit_no_coupling(self, backend):
        t = bm.enumerate_states(dense([0.0], [[0.0]]))
        assert np.exp(t.log_z) == pytest.approx(2.0)
        np.testing.assert_allclose(t.pmf, [0.5, 0.5])

    def test_factorised_pair(self, backend):
        t = bm.enumerate_states(dense([np.log(2.0), 0.0], np.zeros((2, 2))))
        assert np.exp(t.log_z) == pytest.approx(6.0, rel=1e-14)

    def test_coupled_pair(self, backend):
        p = lowrank([0, 0], [1, 1], [[1.0], [1.0]])
        t = bm.enumerate_states(p)
        assert np.exp(t.log_z) == pytest.approx(Z_COUPLED_PAIR, rel=1e-13)

    def test_too_large(self):
        with pytest.raises(ValueError, match="too large"):
            bm.enumerate_states(lowrank(np.zeros(21), np.ones(21), np.zeros((21, 0))))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 8))
    def test_pmf_normalised_and_matches_energy(self, seed, m):
        p = random_params(seed, m)
        t = bm.enumerate_states(p)
        assert abs(t.pmf.sum() - 1.0) < 1e-12
        e = np.array([bm.energy(s, p) for s in t.states()])
        np.testing.assert_allclose(t.log_mass, -e, atol=1e-10)

    def test_backends_agree(self):
        from corrhash import kernels

        p = random_params(5, 12, 4)
        outs = [mod.enumerate_log_mass(p.mu, np.ascontiguousarray(p.sigma()))
                for mod in kernels.available_backends().values()]
        for o in outs[1:]:
            np.testing.assert_allclose(o, outs[0], atol=1e-10)


class TestConditional:
    def test_zero_state_gives_mu(self):
        p = random_params(3, 4)
        mean, _ = bm.cond_r_given_s(p, np.zeros(4))
        np.testing.assert_array_equal(mean, p.mu)

    def test_identity_all_ones(self):
        mean, cov = bm.cond_r_given_s(lowrank(np.zeros(3), np.ones(3), np.zeros((3, 0))), np.ones(3))
        np.testing.assert_array_equal(mean, np.ones(3))
        np.testing.assert_array_equal(cov, np.eye(3))

    def test_matches_dense_product(self, np_rng):
        p = random_params(4, 6, 3)
        s = (np_rng.random(6) < 0.5).astype(float)
        mean, _ = bm.cond_r_given_s(p, s)
        assert np.max(np.abs(mean - (p.sigma() @ s + p.mu))) < 1e-12


class TestAugmentation:
    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 6))
    def test_identity_holds_pointwise(self, seed, m):
        g = np.random.default_rng(seed)
        a = g.normal(size=(m, m))
        p = dense(g.normal(size=m) * 2, a @ a.T / m + 0.1 * np.eye(m))
        s = (g.random(m) < 0.5).astype(float)
        r = g.normal(size=m) * 3
        assert abs(bm.augmentation_residual(p, s, r)) < 1e-8

    def test_zero_state_at_mean(self):
        p = random_params(7, 5)
        assert abs(bm.augmentation_residual(p, np.zeros(5), p.mu)) < 1e-12

    def test_scalar_hand_case(self):
        assert bm.augmentation_residual(dense([0.0], [[1.0]]), [1.0], [0.0]) == pytest.approx(0.0, abs=1e-15)

    def test_wrong_sign_breaks_identity(self):
        p = dense([1.5], [[1.0]])
        assert abs(bm.augmentation_residual(p, [1.0], [0.3], linear_sign=-1.0)) > 1.0

    def test_singular_sigma_is_an_error(self):
        with pytest.raises(ValueError, match="singular"):
            bm.augmentation_residual(dense([0, 0], np.zeros((2, 2))), [1.0, 0.0], [0.0, 0.0])

    @pytest.mark.parametrize("m", [1, 2])
    def test_grid_integration_reproduces_pmf(self, m, np_rng):
        a = np_rng.normal(size=(m, m)) * 0.8
        p = dense(np_rng.normal(size=m), a @ a.T / m + 0.2 * np.eye(m))
        t = bm.enumerate_states(p)
        np.testing.assert_allclose(bm.grid_marginal(p, t), t.pmf, rtol=1e-3)


class TestExactSampling:
    def test_uniform_frequencies(self):
        t = bm.enumerate_states(dense(np.zeros(3), np.zeros((3, 3))))
        s = bm.sample_s_exact(t, RngStream(0), 100_000)
        idx = (s @ (1 << np.arange(3))).astype(int)
        freq = np.bincount(idx, minlength=8) / len(idx)
        sd = np.sqrt(0.125 * 0.875 / len(idx))
        assert np.all(np.abs(freq - 0.125) < 3 * sd)

    def test_saturated_all_ones(self):
        t = bm.enumerate_states(dense(np.full(4, 20.0), np.zeros((4, 4))))
        assert np.all(bm.sample_s_exact(t, RngStream(0), 1000) == 1.0)

    def test_coupled_pair_total_variation(self):
        t = bm.enumerate_states(dense([0, 0], [[2, 1], [1, 2]]))
        s = bm.sample_s_exact(t, RngStream(1), 100_000)
        freq = np.bincount((s @ [1, 2]).astype(int), minlength=4) / len(s)
        assert 0.5 * np.abs(freq - t.pmf).sum() < 0.01

    def test_single_draw_shape(self):
        t = bm.enumerate_states(random_params(0, 3))
        assert bm.sample_s_exact(t, RngStream(0)).shape == (3,)

    def test_r_mean_small_variance(self):
        p = dense(np.zeros(3), 1e-3 * np.eye(3))
        t = bm.enumerate_states(p)
        r = bm.sample_r_exact(p, t, RngStream(2), 200_000)
        expect = p.sigma() @ t.mean() + p.mu
        np.testing.assert_allclose(r.mean(0), expect, atol=4 * np.sqrt(1e-3 / 200_000) + 1e-5)

    def test_r_saturated_negative(self):
        p = dense([-20.0], [[1.0]])
        r = bm.sample_r_exact(p, bm.enumerate_states(p), RngStream(3), 100_000)
        assert abs(r.mean() + 20.0) < 0.02 and abs(r.var() - 1.0) < 0.02

    def test_r_mean_law_of_total_expectation(self):
        p = random_params(8, 4)
        t = bm.enumerate_states(p)
        r = bm.sample_r_exact(p, t, RngStream(4), 200_000)
        se = r.std(0) / np.sqrt(len(r))
        assert np.all(np.abs(r.mean(0) - (p.sigma() @ t.mean() + p.mu)) < 4 * se)

    def test_r_covariance_law_of_total_variance(self):
        p = dense([0.3, -0.4], [[1.0, 0.5], [0.5, 0.8]])
        t = bm.enumerate_states(p)
        r = bm.sample_r_exact(p, t, RngStream(5), 1_000_000)
        states = t.states()
        cov_s = (states * t.pmf[:, None]).T @ states - np.outer(t.mean(), t.mean())
        sig = p.sigma()
        expect = sig + sig @ cov_s @ sig
        np.testing.assert_allclose(np.cov(r.T), expect, rtol=0.05)

    def test_r_with_zero_covariance_is_deterministic_given_s(self):
        p = dense([0.5, -0.5], np.zeros((2, 2)))
        r, s = bm.sample_r_exact(p, bm.enumerate_states(p), RngStream(6), 100, return_s=True)
        np.testing.assert_array_equal(r, np.broadcast_to(p.mu, r.shape))


class TestGaussApprox:
    def test_tight_posterior_high_ess(self):
        p = dense(np.full(3, -8.0), 1e-4 * np.eye(3))
        d = bm.gauss_approx_diagnostic(p, 20_000, RngStream(0))
        assert d["ess_fraction"] > 0.99

    def test_unit_scalar_shift_positive(self):
        p = dense([0.0], [[1.0]])
        d = bm.gauss_approx_diagnostic(p, 100_000, RngStream(1))
        assert d["mean_shift_exact"][0] > 0
        assert d["mean_shift"][0] > 0
        assert d["mean_shift"][0] == pytest.approx(d["mean_shift_exact"][0], abs=0.03)

    def test_empty_sample_is_an_error(self):
        with pytest.raises(ValueError):
            bm.gauss_approx_diagnostic(dense([0.0], [[1.0]]), 0, RngStream(0))
