"""Domain model: trajectories, mean response, and the error construction."""

import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy import stats

from perftraj.model import (Dataset, ParamState, Performance, PriorConfig,
                            mean_response, population_trajectory, sample_error,
                            skew_coefficient, trend_trajectory)


def one_athlete_dataset():
    y = np.array([40.0, 41.0, 39.5, 40.5])
    season = np.array([1, 1, 2, 2])
    z = np.array([0.25, 0.5, 0.0, 0.5])
    age = 20.0 + (season - 1 + z)
    return Dataset.from_athlete_rows([(y, age, season, z)], athlete_ids=["a"])


def blank_state(dataset, config, **overrides):
    """All-zero coefficient state with unit latents; for hand oracles."""
    G, M = config.G, dataset.M
    state = ParamState(
        delta=np.zeros(config.d + 1), zeta=np.zeros(dataset.p),
        alpha=0.0, nu1=20.0, nu2=20.0, nu_mu=20.0, nu_eta=20.0,
        sigma2_i=np.ones(M), sigma2_a=1.0, sigma2_m=1.0,
        sigma2_mu=1.0, sigma2_eta=1.0,
        lambda0=1.0, lambda1=1.0, tau0=1.0, tau1=1.0,
        lambda2=np.ones(M), tau2=np.ones(M), c2=np.ones(G), d2=np.ones(G),
        sigma2_beta=np.ones(G), beta=np.zeros(G),
        beta_i=np.zeros((M, G)),
        beta_is=np.zeros((dataset.total_seasons, G)),
        F=np.zeros(dataset.total_seasons + M),
        omega=np.ones(dataset.n_total), phi=np.ones(dataset.n_total),
        kappa=np.zeros(dataset.n_total),
        omega_mu=np.ones(M), omega_eta=np.ones(dataset.total_seasons),
    )
    for key, val in overrides.items():
        setattr(state, key, val)
    return state


class TestPopulationTrajectory:
    def test_quadratic_at_centre(self):
        assert population_trajectory([40.0, 0.0, 0.1], 26.0, 26.0) == 40.0

    def test_quadratic_off_centre(self):
        assert population_trajectory([40.0, 0.0, 0.1], 26.0, 16.0) == 50.0

    def test_degree_zero(self):
        assert population_trajectory([7.5], 23.0, 31.0) == 7.5

    def test_vectorized(self):
        ages = np.array([16.0, 26.0])
        npt.assert_allclose(
            population_trajectory([40.0, 0.0, 0.1], 26.0, ages), [50.0, 40.0])


class TestTrendTrajectory:
    def test_midpoint(self):
        assert trend_trajectory([1.0, 3.0], 1.0, 0.5) == 2.0

    def test_knot_identity(self):
        assert trend_trajectory([1.0, 3.0], 1.0, 1.0) == 3.0
        assert trend_trajectory([1.0, 3.0], 1.0, 0.0) == 1.0

    def test_second_season_interpolation(self):
        assert trend_trajectory([0.0, 2.0, -1.0], 1.0, 1.25) == 1.25

    def test_outside_span(self):
        with pytest.raises(ValueError):
            trend_trajectory([1.0, 3.0], 1.0, 1.5)
        with pytest.raises(ValueError):
            trend_trajectory([1.0, 3.0], 1.0, -0.1)

    def test_season_length_scaling(self):
        assert trend_trajectory([0.0, 4.0], 2.0, 1.0) == 2.0


class TestMeanResponse:
    def test_constant_population_only(self):
        ds = one_athlete_dataset()
        cfg = PriorConfig.for_dataset(ds, d=0)
        state = blank_state(ds, cfg, delta=np.array([7.0]))
        obs = ds.performance(0, 0)
        assert mean_response(state, obs, cfg, ds.knot_ptr, ds.seas_ptr) == 7.0

    def test_skew_term(self):
        ds = one_athlete_dataset()
        cfg = PriorConfig.for_dataset(ds, d=0)
        state = blank_state(ds, cfg, delta=np.array([0.0]), alpha=3.0)
        state.kappa[0] = 1.0
        obs = ds.performance(0, 0)
        npt.assert_allclose(
            mean_response(state, obs, cfg, ds.knot_ptr, ds.seas_ptr),
            3.0 / math.sqrt(10.0), rtol=1e-14)

    def test_seasonal_coefficient(self):
        ds = one_athlete_dataset()
        cfg = PriorConfig.for_dataset(ds, d=0, max_order=2)
        state = blank_state(ds, cfg, delta=np.array([0.0]))
        state.beta_is[0, 0] = 1.0
        obs = ds.performance(0, 1)  # z = 0.5, season 1
        assert mean_response(state, obs, cfg, ds.knot_ptr, ds.seas_ptr) == 0.5

    def test_linearity_in_each_block(self):
        ds = one_athlete_dataset()
        cfg = PriorConfig.for_dataset(ds, d=2)
        rng = np.random.default_rng(0)
        obs = ds.performance(0, 0)

        def resp(**kw):
            return mean_response(blank_state(ds, cfg, **kw), obs, cfg,
                                 ds.knot_ptr, ds.seas_ptr)

        for field, shape in (("delta", 3), ("F", ds.total_seasons + 1),
                             ("kappa", ds.n_total)):
            a = rng.normal(size=shape)
            b = rng.normal(size=shape)
            if field == "kappa":
                a, b = np.abs(a), np.abs(b)
            state_kw = {field: a + b}
            lhs = resp(**state_kw) - resp()
            rhs = (resp(**{field: a}) - resp()) + (resp(**{field: b}) - resp())
            npt.assert_allclose(lhs, rhs, atol=1e-12)

    def test_seasonal_term_vanishes_at_boundaries(self):
        """At a season boundary the fitted response equals the population
        plus trend parts exactly, whatever the coefficients."""
        y = np.array([1.0, 1.0])
        season = np.array([1, 2])
        z = np.array([0.0, 0.0])
        ds = Dataset.from_athlete_rows([(y, 20.0 + season - 1 + z, season, z)])
        cfg = PriorConfig.for_dataset(ds, d=0)
        rng = np.random.default_rng(1)
        state = blank_state(ds, cfg, delta=np.array([3.0]))
        state.beta_is = rng.normal(size=state.beta_is.shape)
        state.F = rng.normal(size=state.F.shape)
        for k in range(2):
            obs = ds.performance(0, k)
            expect = 3.0 + trend_trajectory(state.F, 1.0, obs.calendar_time)
            npt.assert_allclose(
                mean_response(state, obs, cfg, ds.knot_ptr, ds.seas_ptr),
                expect, rtol=1e-14)


class TestSampleError:
    def test_normal_limit_variance(self):
        rng = np.random.default_rng(2)
        x = sample_error(0.0, 1e7, 10.0, 2.5, rng, size=10**6)
        npt.assert_allclose(x.var(), 2.5, rtol=0.01)
        npt.assert_allclose(stats.skew(x), 0.0, atol=0.02)

    def test_positive_skew(self):
        rng = np.random.default_rng(3)
        x = sample_error(3.0, 30.0, 7.0, 1.0, rng, size=10**6)
        assert stats.skew(x) > 0.1

    def test_sign_mirror(self):
        rng = np.random.default_rng(4)
        a = sample_error(-2.0, 10.0, 10.0, 1.0, rng, size=10**5)
        b = -sample_error(2.0, 10.0, 10.0, 1.0, rng, size=10**5)
        ks = stats.ks_2samp(a, b)
        assert ks.pvalue > 0.001

    def test_invalid_parameters(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            sample_error(1.0, -1.0, 5.0, 1.0, rng)
        with pytest.raises(ValueError):
            sample_error(1.0, 5.0, 5.0, 0.0, rng)

    def test_skew_coefficient(self):
        npt.assert_allclose(skew_coefficient(3.0), 3.0 / math.sqrt(10.0))
        assert skew_coefficient(0.0) == 0.0


class TestDatasetInvariants:
    def test_season_time_consistency_enforced(self):
        with pytest.raises(ValueError):
            Dataset(athlete_ids=["a"], y=np.ones(1), age=np.array([20.0]),
                    t=np.array([0.9]), z=np.array([0.5]),
                    season=np.array([1]), obs_off=np.array([0, 1]),
                    X=np.zeros((1, 0)), confounder_names=[])

    def test_age_must_increase_with_time(self):
        y = np.ones(2)
        season = np.array([1, 1])
        z = np.array([0.1, 0.6])
        age = np.array([21.0, 20.5])
        with pytest.raises(ValueError):
            Dataset.from_athlete_rows([(y, age, season, z)])

    def test_duplicate_times_allowed(self):
        y = np.ones(2)
        season = np.array([1, 1])
        z = np.array([0.5, 0.5])
        age = np.array([20.5, 20.5])
        ds = Dataset.from_athlete_rows([(y, age, season, z)])
        assert ds.n_total == 2

    def test_fraction_range_enforced(self):
        with pytest.raises(ValueError):
            Dataset.from_athlete_rows([
                (np.ones(1), np.array([20.0]), np.array([1]), np.array([1.0]))])

    def test_seasons_start_at_one(self):
        with pytest.raises(ValueError):
            Dataset.from_athlete_rows([
                (np.ones(1), np.array([20.0]), np.array([2]), np.array([0.5]))])

    def test_layout_offsets(self):
        ds = one_athlete_dataset()
        assert ds.M == 1
        assert ds.total_seasons == 2
        npt.assert_array_equal(ds.seas_ptr, [0, 2])
        npt.assert_array_equal(ds.knot_ptr, [0, 3])
        npt.assert_array_equal(ds.srow_off, [0, 2, 4])
        npt.assert_allclose(ds.entry_age, [20.0])

    def test_empty_middle_season(self):
        y = np.ones(2)
        season = np.array([1, 3])
        z = np.array([0.5, 0.5])
        age = 20.0 + (season - 1 + z)
        ds = Dataset.from_athlete_rows([(y, age, season, z)])
        assert ds.seasons_per_athlete[0] == 3
        npt.assert_array_equal(ds.srow_off, [0, 1, 1, 2])
