"""Posterior summaries, simulation-study metrics, and MCMC diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import bernstein
from .model import Dataset, ParamState, PriorConfig, population_trajectory, trend_trajectory

__all__ = [
    "PosteriorDraws",
    "within_season_variability",
    "average_effect_size",
    "trajectory_band",
    "rmise",
    "armse",
    "spearman",
    "psrf",
    "ess",
]

TRAJECTORY_KINDS = ("g", "f_i", "h*", "h*_i", "h*_is", "mu_trend", "mu_fitted")


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in states of one or more chains.

    ``arrays[name]`` has shape (chains, draws, *field_shape); chains have
    equal draw counts.  The originating dataset and prior config are kept
    so summaries can rebuild designs and grids.
    """

    arrays: dict
    dataset: Dataset
    config: PriorConfig
    meta: dict

    @classmethod
    def from_states(cls, chain_lists, dataset, config, meta) -> "PosteriorDraws":
        counts = {len(c) for c in chain_lists}
        if len(counts) > 1:
            raise ValueError("chains recorded unequal draw counts")
        arrays = {}
        for name in ParamState.ARRAY_FIELDS:
            arrays[name] = np.stack([
                np.stack([getattr(s, name) for s in chain]) if chain
                else np.zeros((0,) + _field_shape(name, dataset, config))
                for chain in chain_lists
            ])
        for name in ParamState.SCALAR_FIELDS:
            arrays[name] = np.array([
                [getattr(s, name) for s in chain] for chain in chain_lists
            ], dtype=np.float64)
        return cls(arrays=arrays, dataset=dataset, config=config, meta=dict(meta))

    @property
    def n_chains(self) -> int:
        return self.arrays["alpha"].shape[0]

    @property
    def n_draws(self) -> int:
        return self.arrays["alpha"].shape[1]

    def state_at(self, chain: int, draw: int) -> ParamState:
        kwargs = {}
        for name in ParamState.ARRAY_FIELDS:
            kwargs[name] = self.arrays[name][chain, draw].copy()
        for name in ParamState.SCALAR_FIELDS:
            kwargs[name] = float(self.arrays[name][chain, draw])
        return ParamState(**kwargs)

    def states(self):
        for c in range(self.n_chains):
            for t in range(self.n_draws):
                yield self.state_at(c, t)

    def pooled(self, name: str) -> np.ndarray:
        """Draws of a field with chains pooled: (chains*draws, *shape)."""
        arr = self.arrays[name]
        return arr.reshape((-1,) + arr.shape[2:])

    def trace(self, name: str, index=None) -> np.ndarray:
        """(chains, draws) scalar traces of a parameter entry."""
        arr = self.arrays[name]
        if index is not None:
            arr = arr[(slice(None), slice(None)) + tuple(np.atleast_1d(index))]
        if arr.ndim != 2:
            raise ValueError(f"{name} is not scalar; pass an index")
        return arr

    def scalar_parameters(self):
        """Yield (group_name, label, (chains, draws) trace) for every
        scalar component of every recorded parameter."""
        for name in ParamState.SCALAR_FIELDS:
            yield name, name, self.arrays[name]
        for name in ParamState.ARRAY_FIELDS:
            arr = self.arrays[name]
            flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
            for j in range(flat.shape[2]):
                yield name, f"{name}[{j}]", flat[:, :, j]


def _field_shape(name, dataset, config):
    G, M = config.G, dataset.M
    shapes = {
        "delta": (config.d + 1,), "zeta": (dataset.p,),
        "sigma2_i": (M,), "lambda2": (M,), "tau2": (M,),
        "c2": (G,), "d2": (G,), "sigma2_beta": (G,), "beta": (G,),
        "beta_i": (M, G), "beta_is": (dataset.total_seasons, G),
        "F": (dataset.total_seasons + M,),
        "omega": (dataset.n_total,), "phi": (dataset.n_total,),
        "kappa": (dataset.n_total,),
        "omega_mu": (M,), "omega_eta": (dataset.total_seasons,),
    }
    return shapes[name]


# ---------------------------------------------------------------------------
# univariate variability summaries

def within_season_variability(state: ParamState, athlete: int,
                              max_order: int) -> float:
    """Prior-expected integrated squared season-to-season deviation:
    lambda_i^2 * sum c2_{n,v} B_{n,n,v,v}."""
    weights = bernstein.squared_norm_weights(max_order)
    return float(state.lambda2[athlete] * np.sum(state.c2 * weights))


def average_effect_size(state: ParamState, athlete: int,
                        max_order: int) -> float:
    """Prior-expected integrated squared athlete-to-population deviation:
    tau_i^2 * sum d2_{n,v} B_{n,n,v,v}."""
    weights = bernstein.squared_norm_weights(max_order)
    return float(state.tau2[athlete] * np.sum(state.d2 * weights))


# ---------------------------------------------------------------------------
# trajectory curves and bands

def _curves(draws: PosteriorDraws, which: str, grid: np.ndarray,
            athlete=None, season=None) -> np.ndarray:
    """(total_draws, len(grid)) curve evaluations per pooled draw."""
    cfg = draws.config
    ds = draws.dataset
    grid = np.asarray(grid, dtype=np.float64)
    if which == "g":
        deltas = draws.pooled("delta")
        return np.stack([population_trajectory(d, cfg.a_bar, grid)
                         for d in deltas])
    if which in ("h*", "h*_i", "h*_is"):
        if which == "h*":
            coefs = draws.pooled("beta")
        elif which == "h*_i":
            coefs = draws.pooled("beta_i")[:, athlete, :]
        else:
            slot = int(ds.seas_ptr[athlete]) + season - 1
            coefs = draws.pooled("beta_is")[:, slot, :]
        basis = np.stack([bernstein.basis_row(cfg.max_order, zj) for zj in grid])
        return coefs @ basis.T
    if which in ("f_i", "mu_trend", "mu_fitted"):
        k0 = int(ds.knot_ptr[athlete])
        K = int(ds.seasons_per_athlete[athlete]) + 1
        Fs = draws.pooled("F")[:, k0 : k0 + K]
        trend = np.stack([
            trend_trajectory(F, cfg.season_length, grid) for F in Fs])
        if which == "f_i":
            return trend
        ages = ds.entry_age[athlete] + grid
        deltas = draws.pooled("delta")
        pop = np.stack([population_trajectory(d, cfg.a_bar, ages)
                        for d in deltas])
        if which == "mu_trend":
            return pop + trend
        season_idx = np.minimum(
            np.floor(grid / cfg.season_length).astype(int), K - 2)
        zfrac = grid / cfg.season_length - season_idx
        basis = np.stack([bernstein.basis_row(cfg.max_order, zj)
                          for zj in zfrac])
        slots = ds.seas_ptr[athlete] + season_idx
        beta_is = draws.pooled("beta_is")
        seasonal = np.einsum("dgk,gk->dg", beta_is[:, slots, :], basis)
        return pop + trend + seasonal
    raise ValueError(f"unknown trajectory kind {which!r}")


def trajectory_band(draws: PosteriorDraws, which: str, grid,
                    athlete=None, season=None):
    """Pointwise posterior (median, 2.5%, 97.5%) curves over the grid."""
    if draws.n_draws == 0:
        raise ValueError("no recorded draws")
    curves = _curves(draws, which, np.asarray(grid, dtype=np.float64),
                     athlete=athlete, season=season)
    qs = np.quantile(curves, [0.5, 0.025, 0.975], axis=0)
    return qs[0], qs[1], qs[2]


def posterior_mean_curve(draws: PosteriorDraws, which: str, grid,
                         athlete=None, season=None) -> np.ndarray:
    curves = _curves(draws, which, np.asarray(grid, dtype=np.float64),
                     athlete=athlete, season=season)
    return curves.mean(axis=0)


# ---------------------------------------------------------------------------
# simulation-study metrics

def rmise(estimate, truth, grid) -> float:
    """Integrated squared error of a curve estimate on a common grid,
    by the trapezoid rule (the metric carries no square root)."""
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if estimate.shape != truth.shape or estimate.shape != grid.shape:
        raise ValueError("estimate, truth and grid must share a common grid")
    return float(np.trapezoid((estimate - truth) ** 2, grid))


def armse(estimates, truths) -> float:
    """Average squared error over all season-start knots."""
    estimates = np.asarray(estimates, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if estimates.shape != truths.shape:
        raise ValueError("estimate/truth index sets do not match")
    return float(np.mean((estimates - truths) ** 2))


def spearman(xs, ys) -> float:
    """Rank correlation with average ranks for ties."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise ValueError("need two equal-length vectors of length >= 2")
    if np.ptp(xs) == 0.0 or np.ptp(ys) == 0.0:
        raise ValueError("rank correlation undefined for a constant vector")
    rx = rankdata(xs)
    ry = rankdata(ys)
    return float(np.corrcoef(rx, ry)[0, 1])


# ---------------------------------------------------------------------------
# convergence diagnostics

def psrf(traces) -> float:
    """Gelman-Rubin potential scale reduction factor over >= 2 equal-length
    chains."""
    traces = np.asarray(traces, dtype=np.float64)
    if traces.ndim != 2 or traces.shape[0] < 2:
        raise ValueError("psrf needs >= 2 chains of equal length")
    m, n = traces.shape
    if n < 2:
        raise ValueError("chains too short")
    means = traces.mean(axis=1)
    B = n * np.var(means, ddof=1)
    W = float(np.mean(np.var(traces, axis=1, ddof=1)))
    if W == 0.0:
        return 1.0
    v_hat = (n - 1) / n * W + (1.0 + 1.0 / m) * B / n
    return float(np.sqrt(v_hat / W))


def ess(trace) -> float:
    """Effective sample size n / (1 + 2 sum rho_k) with Geyer's
    initial-positive-sequence truncation; clamped to the trace length."""
    trace = np.asarray(trace, dtype=np.float64)
    n = len(trace)
    if n < 10:
        raise ValueError("trace too short for an ESS estimate")
    centred = trace - trace.mean()
    var0 = float(centred @ centred) / n
    if var0 == 0.0:
        return float(n)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centred, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    # Geyer: sum consecutive-lag pairs while the pair sums stay positive.
    iact = -1.0
    for j in range(0, n // 2):
        pair = rho[2 * j] + (rho[2 * j + 1] if 2 * j + 1 < n else 0.0)
        if pair <= 0.0:
            break
        iact += 2.0 * pair
    iact = max(iact, 1e-12)
    return float(min(n / iact, n))
