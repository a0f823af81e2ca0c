"""Design-matrix assembly and layout invariants."""

import numpy as np
import numpy.testing as npt
import pytest

from perftraj import bernstein
from perftraj.design import build_design
from perftraj.model import Dataset, PriorConfig


def make_dataset(zs, seasons, entry=20.0):
    zs = np.asarray(zs, dtype=float)
    seasons = np.asarray(seasons, dtype=int)
    age = entry + (seasons - 1 + zs)
    return Dataset.from_athlete_rows([(np.zeros(len(zs)), age, seasons, zs)])


class TestBuildDesign:
    def test_midpoint_interpolation_row(self):
        ds = make_dataset([0.5], [1])
        cache = build_design(ds, PriorConfig.for_dataset(ds))
        npt.assert_allclose(cache.Z_dense(0), [[0.5, 0.5]])

    def test_boundary_row(self):
        ds = make_dataset([0.0], [1])
        cache = build_design(ds, PriorConfig.for_dataset(ds))
        npt.assert_allclose(cache.Z_dense(0), [[1.0, 0.0]])
        npt.assert_array_equal(cache.C[0], np.zeros(cache.G))

    def test_basis_block_hand_values(self):
        ds = make_dataset([0.25], [1])
        cache = build_design(ds, PriorConfig.for_dataset(ds, max_order=3))
        npt.assert_allclose(cache.C[0], [0.375, 0.421875, 0.140625], rtol=1e-14)

    def test_column_ordering_matches_flat_index_map(self):
        ds = make_dataset([0.37, 0.81], [1, 2])
        cfg = PriorConfig.for_dataset(ds, max_order=5)
        cache = build_design(ds, cfg)
        ns, vs = bernstein.coefficient_orders(5)
        for r in range(ds.n_total):
            for k, (n, v) in enumerate(zip(ns, vs)):
                assert cache.C[r, k] == bernstein.eval_basis(n, v, ds.z[r])

    def test_interpolation_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        zs = rng.uniform(0, 1, size=20)
        seasons = np.sort(rng.integers(1, 4, size=20))
        seasons[0] = 1
        ds = make_dataset(zs, seasons)
        cache = build_design(ds, PriorConfig.for_dataset(ds))
        Z = cache.Z_dense(0)
        npt.assert_allclose(Z.sum(axis=1), 1.0)
        assert np.all((Z != 0).sum(axis=1) <= 2)

    def test_sparse_blocked_design(self):
        ds = make_dataset([0.2, 0.7], [1, 2])
        cfg = PriorConfig.for_dataset(ds, max_order=3)
        cache = build_design(ds, cfg)
        Cd = cache.C_dense(0)
        assert Cd.shape == (2, 2 * 3)
        npt.assert_array_equal(Cd[0, 3:], 0.0)
        npt.assert_array_equal(Cd[1, :3], 0.0)
        npt.assert_allclose(Cd[0, :3], cache.C[0])

    def test_random_walk_matrix_structure(self):
        ds = make_dataset([0.2, 0.7, 0.4], [1, 2, 3])
        cache = build_design(ds, PriorConfig.for_dataset(ds))
        Phi = cache.random_walk_matrix(0)
        assert Phi.shape == (4, 4)
        npt.assert_array_equal(np.diag(Phi), np.ones(4))
        npt.assert_array_equal(np.diag(Phi, -1), -np.ones(3))
        assert Phi[0, 1] == 0.0

    def test_row_index_arrays(self):
        ds = Dataset.from_athlete_rows([
            (np.zeros(2), 20.0 + np.array([0.3, 1.5]), np.array([1, 2]),
             np.array([0.3, 0.5])),
            (np.zeros(1), np.array([22.2]), np.array([1]), np.array([0.2])),
        ])
        cache = build_design(ds, PriorConfig.for_dataset(ds))
        npt.assert_array_equal(cache.row_athlete, [0, 0, 1])
        npt.assert_array_equal(cache.row_season_global, [0, 1, 2])
        npt.assert_array_equal(cache.row_knot_lo, [0, 1, 3])
        npt.assert_array_equal(cache.season_athlete, [0, 0, 1])
        npt.assert_array_equal(cache.incr_lo, [0, 1, 3])
        npt.assert_array_equal(cache.incr_hi, [1, 2, 4])

    def test_polynomial_design_centred(self):
        ds = make_dataset([0.5, 0.5], [1, 2], entry=24.0)
        cfg = PriorConfig.for_dataset(ds, d=2)
        cache = build_design(ds, cfg)
        centred = ds.age - cfg.a_bar
        npt.assert_allclose(cache.A[:, 0], 1.0)
        npt.assert_allclose(cache.A[:, 1], centred)
        npt.assert_allclose(cache.A[:, 2], centred**2)
