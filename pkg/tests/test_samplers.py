"""Variate generators: truncated normal, GIG, cone-truncated MVN, adaptive MH."""

import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy import special, stats

from perftraj import bernstein
from perftraj.samplers import (AdaptiveMhState, adaptive_mh_step, gig_sample,
                               truncated_mvn_cone, truncated_normal)


class TestTruncatedNormal:
    def test_half_normal_mean(self):
        rng = np.random.default_rng(1)
        x = truncated_normal(np.zeros(10**6), 1.0, 0.0, np.inf, rng)
        assert np.all(x >= 0.0)
        npt.assert_allclose(x.mean(), math.sqrt(2.0 / math.pi), atol=3e-3)

    def test_untruncated_matches_normal_moments(self):
        rng = np.random.default_rng(2)
        x = truncated_normal(np.full(10**6, 1.5), 4.0, -np.inf, np.inf, rng)
        npt.assert_allclose(x.mean(), 1.5, atol=0.01)
        npt.assert_allclose(x.std(), 2.0, rtol=0.01)

    def test_far_tail(self):
        """Truncation eight standard deviations out stays finite and matches
        the Mills-ratio mean."""
        rng = np.random.default_rng(3)
        x = truncated_normal(np.zeros(10**5), 1.0, 8.0, np.inf, rng)
        assert np.all(x >= 8.0)
        assert np.all(np.isfinite(x))
        mills = stats.norm.pdf(8.0) / stats.norm.sf(8.0)
        npt.assert_allclose(x.mean(), mills, rtol=0.02)

    def test_far_left_tail(self):
        rng = np.random.default_rng(4)
        x = truncated_normal(np.zeros(10**4), 1.0, -np.inf, -10.0, rng)
        assert np.all(x <= -10.0)

    def test_narrow_tail_interval(self):
        rng = np.random.default_rng(5)
        x = truncated_normal(np.zeros(10**4), 1.0, 6.0, 6.01, rng)
        assert np.all((x >= 6.0) & (x <= 6.01))

    def test_bounds_always_respected(self):
        rng = np.random.default_rng(6)
        lo = rng.normal(size=2000) * 5
        hi = lo + rng.exponential(size=2000)
        x = truncated_normal(rng.normal(size=2000), rng.gamma(2, 1, 2000),
                             lo, hi, rng)
        assert np.all((x >= lo) & (x <= hi))

    def test_seeded_reproducibility(self):
        a = truncated_normal(np.zeros(100), 1.0, 0.0, np.inf,
                             np.random.default_rng(42))
        b = truncated_normal(np.zeros(100), 1.0, 0.0, np.inf,
                             np.random.default_rng(42))
        npt.assert_array_equal(a, b)

    def test_empty_interval_rejected(self):
        with pytest.raises(ValueError):
            truncated_normal(0.0, 1.0, 1.0, 1.0, np.random.default_rng(0))

    def test_nonpositive_variance_rejected(self):
        with pytest.raises(ValueError):
            truncated_normal(0.0, 0.0, 0.0, 1.0, np.random.default_rng(0))


def gig_mean(lam, chi, psi):
    w = math.sqrt(chi * psi)
    return math.sqrt(chi / psi) * special.kv(lam + 1, w) / special.kv(lam, w)


class TestGig:
    def test_gamma_boundary(self):
        # chi = 0, lam = a > 0 reduces to Gamma(a, rate b) with psi = 2b
        rng = np.random.default_rng(7)
        a, b = 2.5, 1.5
        x = gig_sample(np.full(10**6, a), 0.0, 2.0 * b, rng)
        npt.assert_allclose(x.mean(), a / b, rtol=0.01)
        npt.assert_allclose(x.var(), a / b**2, rtol=0.02)

    def test_inverse_gamma_boundary(self):
        rng = np.random.default_rng(8)
        a, b = 3.0, 2.0
        x = gig_sample(np.full(10**6, -a), 2.0 * b, 0.0, rng)
        npt.assert_allclose(x.mean(), b / (a - 1.0), rtol=0.01)

    def test_bessel_ratio_mean(self):
        rng = np.random.default_rng(9)
        x = gig_sample(np.full(10**6, 1.0), 2.0, 2.0, rng)
        npt.assert_allclose(x.mean(), gig_mean(1.0, 2.0, 2.0), rtol=0.01)

    @pytest.mark.parametrize("lam,chi,psi", [
        (1.0, 2.0, 2.0), (-0.5, 1.0, 3.0), (2.5, 0.5, 0.5),
        (0.1, 0.01, 0.01), (-3.0, 5.0, 0.8), (5.0, 1.0, 4.0),
        (0.3, 1e-4, 0.1), (-12.0, 0.001, 2.0), (0.0, 0.04, 0.04),
    ])
    def test_density_goodness_of_fit(self, lam, chi, psi):
        """Histogram matches the normalized density (via scipy's pdf as an
        independent oracle) at chi-squared p > 0.001."""
        rng = np.random.default_rng(abs(hash((lam, chi, psi))) % 2**32)
        n = 10**5
        x = gig_sample(np.full(n, lam), chi, psi, rng)
        b = math.sqrt(chi * psi)
        scale = math.sqrt(chi / psi)
        qs = np.linspace(0.02, 0.98, 25)
        inner = np.concatenate(([0.001], qs, [0.999]))
        edges = stats.geninvgauss.ppf(inner, lam, b, scale=scale)
        counts, _ = np.histogram(x, bins=edges)
        probs = np.diff(inner)
        expected = probs * n
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert stats.chi2.sf(chi2, len(probs) - 1) > 0.001

    def test_positive_support(self):
        rng = np.random.default_rng(10)
        x = gig_sample(np.full(1000, -2.0), 0.3, 1.7, rng)
        assert np.all(x > 0.0)

    @pytest.mark.parametrize("lam,chi,psi", [
        (1.0, 0.0, 0.0), (-1.0, 0.0, 2.0), (0.0, 0.0, 1.0), (1.0, 1.0, -0.5),
    ])
    def test_invalid_domain(self, lam, chi, psi):
        with pytest.raises(ValueError):
            gig_sample(lam, chi, psi, np.random.default_rng(0))


class TestTruncatedMvnCone:
    def run_scans(self, mean, precision, free, cons, start, n, seed, thin=1):
        rng = np.random.default_rng(seed)
        x = np.array(start, dtype=float)
        out = np.empty((n, len(start)))
        for k in range(n):
            for _ in range(thin):
                x = truncated_mvn_cone(mean, precision, free, cons, rng, x)
            out[k] = x
        return out

    def test_no_constraints_matches_gaussian(self):
        cov = np.array([[2.0, 0.6], [0.6, 1.0]])
        prec = np.linalg.inv(cov)
        mean = np.array([1.0, -0.5])
        draws = self.run_scans(mean, prec, 2, [], mean, 10**5, seed=3)
        npt.assert_allclose(draws.mean(axis=0), mean, atol=0.03)
        npt.assert_allclose(np.cov(draws.T), cov, atol=0.05)

    def test_one_dimensional_half_normal(self):
        cons = [(np.array([[-2.0]]), 1)]
        draws = self.run_scans(np.zeros(1), np.eye(1), 0, cons,
                               np.array([-0.5]), 10**5, seed=4)
        assert np.all(draws <= 0.0)
        npt.assert_allclose(draws.mean(), -math.sqrt(2 / math.pi), atol=0.01)

    def test_order_three_cone_vs_rejection_oracle(self):
        D3 = bernstein.convexity_matrix(3)
        cons = [(D3, 1)]
        start = np.array([-1.0, -1.0])
        draws = self.run_scans(np.zeros(2), np.eye(2), 0, cons, start,
                               4 * 10**4, seed=5, thin=4)
        assert np.all(D3 @ draws.T >= -1e-12)
        rng = np.random.default_rng(6)
        ref = rng.normal(size=(10**6, 2))
        ref = ref[np.all(D3 @ ref.T >= 0.0, axis=0)]
        npt.assert_allclose(draws.mean(axis=0), ref.mean(axis=0), atol=0.02)
        npt.assert_allclose(draws.std(axis=0), ref.std(axis=0), rtol=0.02)

    def test_free_block_with_cone_tail(self):
        D2 = bernstein.convexity_matrix(2)
        cons = [(D2, 1)]
        prec = np.linalg.inv(np.array([[1.0, 0.3], [0.3, 1.0]]))
        draws = self.run_scans(np.zeros(2), prec, 1, cons,
                               np.array([0.0, -1.0]), 2 * 10**4, seed=7, thin=2)
        assert np.all(draws[:, 1] <= 0.0)
        assert draws[:, 0].max() > 0.0  # free coordinate unconstrained

    def test_infeasible_current_rejected(self):
        cons = [(bernstein.convexity_matrix(2), 1)]
        with pytest.raises(ValueError):
            truncated_mvn_cone(np.zeros(1), np.eye(1), 0, cons,
                               np.random.default_rng(0), np.array([1.0]))


class TestAdaptiveMh:
    def test_standard_normal_acceptance_rate(self):
        state = AdaptiveMhState(dim=1)
        rng = np.random.default_rng(11)
        x = 0.0
        for _ in range(10**5):
            x, state = adaptive_mh_step(state, x, lambda v: -0.5 * v * v, rng)
        assert 0.25 <= state.acceptance_rate <= 0.35

    def test_constant_target_always_accepts(self):
        state = AdaptiveMhState(dim=1)
        rng = np.random.default_rng(12)
        x = 0.0
        for _ in range(500):
            x, state = adaptive_mh_step(state, x, lambda v: 1.0, rng)
        assert state.n_accepted == state.n_proposed

    def test_aswam_tracks_target_correlation(self):
        rho = 0.9
        cov = np.array([[1.0, rho], [rho, 1.0]])
        prec = np.linalg.inv(cov)

        def log_target(v):
            return -0.5 * float(v @ prec @ v)

        state = AdaptiveMhState(dim=2, switch_iter=1000)
        rng = np.random.default_rng(13)
        x = np.zeros(2)
        for _ in range(2 * 10**4):
            x, state = adaptive_mh_step(state, x, log_target, rng)
        c = state.run_cov
        emp_rho = c[0, 1] / math.sqrt(c[0, 0] * c[1, 1])
        assert abs(emp_rho - rho) < 0.1
        assert state.multivariate_phase

    def test_nan_target_rejected_and_counted(self):
        state = AdaptiveMhState(dim=1)
        rng = np.random.default_rng(14)
        x, state = adaptive_mh_step(state, 0.0, lambda v: np.nan if v != 0.0 else 0.0, rng)
        assert x == 0.0
        assert state.n_nan == 1

    def test_freeze_stops_adaptation(self):
        state = AdaptiveMhState(dim=2, switch_iter=10)
        rng = np.random.default_rng(15)
        x = np.zeros(2)
        for _ in range(50):
            x, state = adaptive_mh_step(state, x, lambda v: -0.5 * v @ v, rng)
        state.freeze()
        scale = state.log_scale.copy()
        mv_scale = state.mv_log_scale
        cov = state.run_cov.copy()
        mean = state.run_mean.copy()
        for _ in range(50):
            x, state = adaptive_mh_step(state, x, lambda v: -0.5 * v @ v, rng)
        npt.assert_array_equal(state.log_scale, scale)
        assert state.mv_log_scale == mv_scale
        npt.assert_array_equal(state.run_cov, cov)
        npt.assert_array_equal(state.run_mean, mean)

    def test_seeded_reproducibility(self):
        def run(seed):
            state = AdaptiveMhState(dim=1)
            rng = np.random.default_rng(seed)
            xs = []
            x = 0.0
            for _ in range(200):
                x, state = adaptive_mh_step(state, x, lambda v: -0.5 * v * v, rng)
                xs.append(x)
            return np.array(xs)

        npt.assert_array_equal(run(99), run(99))
