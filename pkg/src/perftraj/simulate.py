"""Synthetic data generation and the simulation-study driver.

Athletes get a Poisson-mixture season count, uniform event times within
seasons, a random-walk career trend, and within-season curves built from
a fixed population parabola plus athlete- and season-level parabolic
bumps whose turning points and amplitudes are drawn per athlete/season.
Errors are skewed and heavy tailed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import Dataset, PriorConfig, sample_error
from .summaries import armse, posterior_mean_curve, rmise, spearman

__all__ = ["SimDesign", "SimTruth", "generate_dataset", "run_study",
           "StudyRecord", "truth_curves"]


@dataclass(frozen=True)
class SimDesign:
    """Factor settings of one simulation cell."""

    M: int = 500
    p1: float = 0.2
    poisson_means: tuple = (4.0, 8.0)
    performances_range: tuple = (3, 11)
    entry_age_range: tuple = (18.0, 22.0)
    sigma2_a: float = 0.5
    sigma2_b: float = 0.25
    alpha: float = 3.0
    nu1: float = 30.0
    nu2: float = 7.0
    eta_init_var: float = 4.0
    eta_incr_var: float = 0.09
    sigma2_error: float = 0.25
    replications: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p1 <= 1.0:
            raise ValueError("p1 must lie in [0, 1]")
        for name in ("eta_init_var", "eta_incr_var", "sigma2_error"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.sigma2_a < 0.0 or self.sigma2_b < 0.0:
            raise ValueError("trajectory amplitude variances must be >= 0")


def population_age_curve(age):
    """True population curve of the study: 40 + 0.1 (age - 26)^2."""
    age = np.asarray(age, dtype=np.float64)
    return 40.0 + 0.1 * (age - 26.0) ** 2


def population_within_season_curve(z):
    """True population within-season curve 4 (z - 1/2)^2 - 1, minimum -1
    at mid-season."""
    z = np.asarray(z, dtype=np.float64)
    return 4.0 * (z - 0.5) ** 2 - 1.0


def parabolic_bump(z, turning_point: float):
    """Unit-amplitude offset with value 1 at the turning point and the
    piecewise quadratic decay used by the study's individual and seasonal
    deviations; 0 at z = 0 but generally nonzero at z = 1."""
    z = np.asarray(z, dtype=np.float64)
    p = turning_point
    left = 1.0 - (z - p) ** 2 / p**2
    right = 1.0 - (z - p) ** 2 / (1.0 - p**2)
    return np.where(z <= p, left, right)


@dataclass
class SimTruth:
    """Every latent quantity behind one generated dataset."""

    design: SimDesign
    entry_age: np.ndarray  # (M,)
    seasons: np.ndarray  # (M,)
    eta: list  # per athlete, length S_i + 1
    a_i: np.ndarray  # (M,)
    p_i: np.ndarray  # (M,)
    b_is: list  # per athlete, length S_i
    r_is: list  # per athlete, length S_i
    endpoint_offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        # Individual-bump values at the season endpoints; the z = 1 value
        # is generally nonzero, unlike the fitted model's trajectories.
        ends = np.empty((len(self.a_i), 2))
        for i, (a, p) in enumerate(zip(self.a_i, self.p_i)):
            ends[i, 0] = a * float(parabolic_bump(0.0, p))
            ends[i, 1] = a * float(parabolic_bump(1.0, p))
        self.endpoint_offsets = ends

    def h_individual(self, i: int, z):
        return population_within_season_curve(z) \
            + self.a_i[i] * parabolic_bump(z, self.p_i[i])

    def h_seasonal(self, i: int, s: int, z):
        """Season s is 1-based."""
        return self.h_individual(i, z) \
            + self.b_is[i][s - 1] * parabolic_bump(z, self.r_is[i][s - 1])

    def eta_flat(self) -> np.ndarray:
        return np.concatenate(self.eta)

    def mean_abs_seasonal_amplitude(self) -> np.ndarray:
        return np.array([np.mean(np.abs(b)) for b in self.b_is])


def generate_dataset(design: SimDesign, rng) -> tuple[Dataset, SimTruth]:
    """Generate one dataset plus its ground-truth record."""
    lo_n, hi_n = design.performances_range
    rows = []
    entry_ages = np.empty(design.M)
    seasons = np.empty(design.M, dtype=np.int64)
    etas, b_lists, r_lists = [], [], []
    a_vec = np.empty(design.M)
    p_vec = np.empty(design.M)
    for i in range(design.M):
        S = 0
        while S < 1:
            mean = design.poisson_means[0] if rng.uniform() < design.p1 \
                else design.poisson_means[1]
            S = int(rng.poisson(mean))
        seasons[i] = S
        entry_ages[i] = rng.uniform(*design.entry_age_range)
        eta = np.empty(S + 1)
        eta[0] = rng.normal(0.0, np.sqrt(design.eta_init_var))
        eta[1:] = eta[0] + np.cumsum(
            rng.normal(0.0, np.sqrt(design.eta_incr_var), size=S))
        etas.append(eta)
        a_vec[i] = rng.normal(0.0, np.sqrt(design.sigma2_a))
        p_vec[i] = rng.uniform(0.5, 0.7)
        b_is = rng.normal(0.0, np.sqrt(design.sigma2_b), size=S)
        r_is = rng.uniform(0.5, 0.7, size=S)
        b_lists.append(b_is)
        r_lists.append(r_is)

        ys, ages, ss, zs = [], [], [], []
        for s in range(1, S + 1):
            n_s = int(rng.integers(lo_n, hi_n + 1))
            z = np.sort(rng.uniform(0.0, 1.0, size=n_s))
            t = (s - 1) + z
            age = entry_ages[i] + t
            trend = eta[s - 1] * (1.0 - z) + eta[s] * z
            h = (population_within_season_curve(z)
                 + a_vec[i] * parabolic_bump(z, p_vec[i])
                 + b_is[s - 1] * parabolic_bump(z, r_is[s - 1]))
            eps = sample_error(design.alpha, design.nu1, design.nu2,
                               design.sigma2_error, rng, size=n_s)
            ys.append(population_age_curve(age) + trend + h + eps)
            ages.append(age)
            ss.append(np.full(n_s, s, dtype=np.int64))
            zs.append(z)
        rows.append((np.concatenate(ys), np.concatenate(ages),
                     np.concatenate(ss), np.concatenate(zs)))

    dataset = Dataset.from_athlete_rows(
        rows, athlete_ids=[f"sim{i:05d}" for i in range(design.M)])
    truth = SimTruth(design=design, entry_age=entry_ages, seasons=seasons,
                     eta=etas, a_i=a_vec, p_i=p_vec, b_is=b_lists,
                     r_is=r_lists)
    return dataset, truth


def truth_curves(truth: SimTruth, dataset: Dataset, age_grid, z_grid) -> dict:
    """Evaluate every ground-truth quantity the study scores against."""
    M = len(truth.a_i)
    h_i = np.stack([truth.h_individual(i, z_grid) for i in range(M)])
    h_is = np.vstack([
        np.stack([truth.h_seasonal(i, s, z_grid)
                  for s in range(1, truth.seasons[i] + 1)])
        for i in range(M)
    ])
    return {
        "g": population_age_curve(age_grid),
        "h": population_within_season_curve(z_grid),
        "h_i": h_i,
        "h_is": h_is,
        "eta": truth.eta_flat(),
        "tau2_median": np.abs(truth.a_i),
        "lambda2_median": truth.mean_abs_seasonal_amplitude(),
    }


def fitted_curves(draws, age_grid, z_grid) -> dict:
    """Posterior-mean curves and posterior-median shrinkage scales from a
    fitted chain, on the same layout as ``truth_curves``."""
    ds = draws.dataset
    cfg = draws.config
    from . import bernstein

    basis = np.stack([bernstein.basis_row(cfg.max_order, z) for z in z_grid])
    beta_i_mean = draws.pooled("beta_i").mean(axis=0)
    beta_is_mean = draws.pooled("beta_is").mean(axis=0)
    return {
        "g": posterior_mean_curve(draws, "g", age_grid),
        "h": posterior_mean_curve(draws, "h*", z_grid),
        "h_i": beta_i_mean @ basis.T,
        "h_is": beta_is_mean @ basis.T,
        "eta": draws.pooled("F").mean(axis=0),
        "tau2_median": np.median(draws.pooled("tau2"), axis=0),
        "lambda2_median": np.median(draws.pooled("lambda2"), axis=0),
    }


@dataclass
class StudyRecord:
    """Metrics of one (cell, replication) fit."""

    design: SimDesign
    replication: int
    rmise_g: float = np.nan
    rmise_h: float = np.nan
    rmise_h_i: float = np.nan
    rmise_h_is: float = np.nan
    amrse_eta: float = np.nan
    spearman_tau_a: float = np.nan
    spearman_lambda_b: float = np.nan
    error: str = ""

    def as_row(self) -> dict:
        return {
            "M": self.design.M,
            "p1": self.design.p1,
            "sigma2_a": self.design.sigma2_a,
            "sigma2_b": self.design.sigma2_b,
            "replication": self.replication,
            "rmise_g": self.rmise_g,
            "rmise_h": self.rmise_h,
            "rmise_h_i": self.rmise_h_i,
            "rmise_h_is": self.rmise_h_is,
            "amrse_eta": self.amrse_eta,
            "spearman_tau_a": self.spearman_tau_a,
            "spearman_lambda_b": self.spearman_lambda_b,
            "error": self.error,
        }


def _metrics(fitted: dict, truth: dict, age_grid, z_grid,
             record: StudyRecord):
    record.rmise_g = rmise(fitted["g"], truth["g"], age_grid)
    record.rmise_h = rmise(fitted["h"], truth["h"], z_grid)
    record.rmise_h_i = float(np.mean([
        rmise(fitted["h_i"][i], truth["h_i"][i], z_grid)
        for i in range(truth["h_i"].shape[0])
    ]))
    record.rmise_h_is = float(np.mean([
        rmise(fitted["h_is"][j], truth["h_is"][j], z_grid)
        for j in range(truth["h_is"].shape[0])
    ]))
    record.amrse_eta = armse(fitted["eta"], truth["eta"])
    record.spearman_tau_a = spearman(fitted["tau2_median"],
                                     truth["tau2_median"])
    record.spearman_lambda_b = spearman(fitted["lambda2_median"],
                                        truth["lambda2_median"])


def default_fitter(dataset, chain_cfg, prior_overrides=None, **_context):
    """Fit the hierarchical model; the standard study fit function."""
    from .engine import run_chain

    config = PriorConfig.for_dataset(dataset, **(prior_overrides or {}))
    return run_chain(dataset, config, chain_cfg)


def run_study(designs, replications, chain_cfg, fitter=None,
              prior_overrides=None, n_grid=201) -> list:
    """Fit every (cell, replication) and score it; fit failures are
    recorded in the cell's record and the study continues.

    ``fitter(dataset, chain_cfg, prior_overrides)`` may return either
    PosteriorDraws or a precomputed curves dict (the truth-plug-in oracle
    does the latter)."""
    fitter = fitter or default_fitter
    records = []
    for design in np.atleast_1d(designs):
        master = np.random.SeedSequence(design.seed)
        children = master.spawn(replications)
        for rep in range(replications):
            gen_seq, fit_seq = children[rep].spawn(2)
            rng = np.random.default_rng(gen_seq)
            dataset, truth = generate_dataset(design, rng)
            age_grid = np.linspace(dataset.age.min(), dataset.age.max(), n_grid)
            z_grid = np.linspace(0.0, 1.0, n_grid)
            record = StudyRecord(design=design, replication=rep)
            rec_cfg = replace(chain_cfg,
                              seed=int(fit_seq.generate_state(1)[0]))
            try:
                result = fitter(dataset, rec_cfg, prior_overrides=prior_overrides,
                                truth=truth, age_grid=age_grid, z_grid=z_grid)
                if isinstance(result, dict):
                    fitted = result
                else:
                    fitted = fitted_curves(result, age_grid, z_grid)
                _metrics(fitted, truth_curves(truth, dataset, age_grid, z_grid),
                         age_grid, z_grid, record)
            except Exception as exc:  # noqa: BLE001 - study must continue
                record.error = f"{type(exc).__name__}: {exc}"
            records.append(record)
    return records
