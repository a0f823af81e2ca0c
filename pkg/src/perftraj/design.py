"""Design-matrix assembly for the Gibbs sweep.

All per-observation quantities live in flat row-major arrays sorted by
(athlete, season, time); the cache also carries the offset arrays that
delimit athlete and season blocks, so the kernels never touch ragged
structures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bernstein
from .model import Dataset, PriorConfig

__all__ = ["DesignCache", "build_design"]


@dataclass
class DesignCache:
    """Precomputed design matrices and layout offsets for one dataset."""

    dataset: Dataset
    config: PriorConfig
    A: np.ndarray  # (n, d+1) centred-age polynomial design
    X: np.ndarray  # (n, p) confounders
    C: np.ndarray  # (n, G) RBP basis values at each row's season fraction
    z: np.ndarray  # (n,) season fractions
    row_athlete: np.ndarray  # (n,) athlete index per row
    row_season_global: np.ndarray  # (n,) flat (athlete, season) slot per row
    row_knot_lo: np.ndarray  # (n,) flat index of the row's lower season knot
    season_athlete: np.ndarray  # (total_seasons,) athlete per flat season slot
    incr_lo: np.ndarray  # (total_seasons,) knot index below each increment
    incr_hi: np.ndarray  # (total_seasons,) knot index above each increment

    @property
    def y(self) -> np.ndarray:
        return self.dataset.y

    @property
    def obs_off(self) -> np.ndarray:
        return self.dataset.obs_off

    @property
    def seas_ptr(self) -> np.ndarray:
        return self.dataset.seas_ptr

    @property
    def srow_off(self) -> np.ndarray:
        return self.dataset.srow_off

    @property
    def knot_ptr(self) -> np.ndarray:
        return self.dataset.knot_ptr

    @property
    def S(self) -> np.ndarray:
        return self.dataset.seasons_per_athlete

    @property
    def G(self) -> int:
        return self.C.shape[1]

    @property
    def n_free(self) -> int:
        """Unconstrained coordinate count of the population block
        (polynomial coefficients plus confounder effects)."""
        return self.A.shape[1] + self.X.shape[1]


    # Dense per-athlete matrices; small-scale oracle and test helpers.
    def Z_dense(self, athlete: int) -> np.ndarray:
        """(n_i, S_i + 1) interpolation-weight matrix."""
        lo, hi = self.obs_off[athlete], self.obs_off[athlete + 1]
        K = int(self.S[athlete]) + 1
        Z = np.zeros((hi - lo, K))
        for r in range(lo, hi):
            s = int(self.dataset.season[r]) - 1
            Z[r - lo, s] = 1.0 - self.z[r]
            Z[r - lo, s + 1] = self.z[r]
        return Z

    def C_dense(self, athlete: int) -> np.ndarray:
        """(n_i, S_i * G) season-blocked RBP design matrix."""
        lo, hi = self.obs_off[athlete], self.obs_off[athlete + 1]
        G = self.G
        out = np.zeros((hi - lo, int(self.S[athlete]) * G))
        for r in range(lo, hi):
            s = int(self.dataset.season[r]) - 1
            out[r - lo, s * G : (s + 1) * G] = self.C[r]
        return out

    def random_walk_matrix(self, athlete: int) -> np.ndarray:
        """(K, K) unit lower-bidiagonal difference matrix (K = S_i + 1)."""
        K = int(self.S[athlete]) + 1
        Phi = np.eye(K)
        idx = np.arange(1, K)
        Phi[idx, idx - 1] = -1.0
        return Phi


def build_design(dataset: Dataset, config: PriorConfig) -> DesignCache:
    """Assemble design matrices; validates season fractions and layout."""
    if np.any((dataset.z < 0.0) | (dataset.z >= 1.0)):
        raise ValueError("season fraction outside [0, 1)")
    n = dataset.n_total
    centred = dataset.age - config.a_bar
    A = np.vander(centred, N=config.d + 1, increasing=True)
    C = np.empty((n, config.G))
    for r in range(n):
        C[r] = bernstein.basis_row(config.max_order, dataset.z[r])

    row_athlete = np.repeat(np.arange(dataset.M), dataset.performances_per_athlete)
    row_season_global = dataset.seas_ptr[row_athlete] + dataset.season - 1
    row_knot_lo = dataset.knot_ptr[row_athlete] + dataset.season - 1

    season_athlete = np.repeat(np.arange(dataset.M), dataset.seasons_per_athlete)
    local_season = np.arange(dataset.total_seasons) - dataset.seas_ptr[season_athlete]
    incr_hi = dataset.knot_ptr[season_athlete] + local_season + 1

    return DesignCache(
        dataset=dataset,
        config=config,
        A=np.ascontiguousarray(A, dtype=np.float64),
        X=np.ascontiguousarray(dataset.X, dtype=np.float64),
        C=np.ascontiguousarray(C, dtype=np.float64),
        z=np.ascontiguousarray(dataset.z, dtype=np.float64),
        row_athlete=row_athlete.astype(np.int64),
        row_season_global=row_season_global.astype(np.int64),
        row_knot_lo=row_knot_lo.astype(np.int64),
        season_athlete=season_athlete.astype(np.int64),
        incr_lo=(incr_hi - 1).astype(np.int64),
        incr_hi=incr_hi.astype(np.int64),
    )
