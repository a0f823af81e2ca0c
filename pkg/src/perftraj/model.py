"""Domain data model and trajectory evaluation.

The response for athlete i at age a, calendar time t = (s - 1 + z) * delta
(t = 0 at the start of the athlete's first season) decomposes as

    y = g(a) + f_i(t) + h*_{i,s}(z) + x . zeta + error

with g a degree-d polynomial in centred age, f_i piecewise linear with
knots at season starts, and h*_{i,s} an RBP sum that vanishes at both
season endpoints.  Errors are skewed and heavy tailed via a normal
scale mixture with a half-normal skew component.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import bernstein

__all__ = [
    "Performance",
    "Dataset",
    "PriorConfig",
    "ParamState",
    "population_trajectory",
    "trend_trajectory",
    "mean_response",
    "sample_error",
    "skew_coefficient",
]


def skew_coefficient(alpha: float) -> float:
    """Weight alpha / sqrt(1 + alpha^2) of the half-normal skew component."""
    return alpha / np.sqrt(1.0 + alpha * alpha)


@dataclass
class Performance:
    """One observed performance."""

    athlete_id: str
    value: float
    age: float
    calendar_time: float
    season_index: int
    season_fraction: float
    confounders: np.ndarray
    athlete_index: int = -1
    obs_index: int = -1


@dataclass
class Dataset:
    """Observations for M athletes in a flat layout.

    Rows are sorted by (athlete, season, time).  ``obs_off`` has length
    M + 1 and delimits each athlete's rows; ``seas_ptr`` (length M + 1)
    cumulates season counts, and ``srow_off`` (length total_seasons + 1)
    delimits each (athlete, season) row block.  Empty mid-career seasons
    are allowed and simply have empty row blocks.
    """

    athlete_ids: list
    y: np.ndarray
    age: np.ndarray
    t: np.ndarray
    z: np.ndarray
    season: np.ndarray  # 1-based season index per row
    obs_off: np.ndarray
    X: np.ndarray  # (n_total, p)
    confounder_names: list
    season_length: float = 1.0

    seas_ptr: np.ndarray = field(init=False)
    srow_off: np.ndarray = field(init=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.age = np.asarray(self.age, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        self.season = np.asarray(self.season, dtype=np.int64)
        self.obs_off = np.asarray(self.obs_off, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X.reshape(len(self.y), -1)
        self._build_layout()
        self.validate()

    def _build_layout(self):
        M = self.M
        S = np.zeros(M, dtype=np.int64)
        for i in range(M):
            lo, hi = self.obs_off[i], self.obs_off[i + 1]
            S[i] = int(self.season[lo:hi].max()) if hi > lo else 0
        self._S = S
        self.seas_ptr = np.concatenate(([0], np.cumsum(S)))
        srow = np.zeros(self.seas_ptr[-1] + 1, dtype=np.int64)
        for i in range(M):
            lo, hi = self.obs_off[i], self.obs_off[i + 1]
            counts = np.bincount(self.season[lo:hi], minlength=S[i] + 1)[1:]
            base = self.seas_ptr[i]
            srow[base + 1 : base + S[i] + 1] = lo + np.cumsum(counts)
            srow[base] = lo
        self.srow_off = srow

    @property
    def M(self) -> int:
        return len(self.obs_off) - 1

    @property
    def n_total(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def seasons_per_athlete(self) -> np.ndarray:
        return self._S

    @property
    def performances_per_athlete(self) -> np.ndarray:
        return np.diff(self.obs_off)

    @property
    def total_seasons(self) -> int:
        return int(self.seas_ptr[-1])

    @property
    def knot_ptr(self) -> np.ndarray:
        """Offsets of each athlete's season-start knot block (length
        S_i + 1 per athlete) in the flat knot vector."""
        return self.seas_ptr + np.arange(self.M + 1)

    @property
    def entry_age(self) -> np.ndarray:
        """Age of each athlete at t = 0 (start of their first season)."""
        lo = self.obs_off[:-1]
        return self.age[lo] - self.t[lo]

    def validate(self):
        if self.M < 1:
            raise ValueError("dataset must contain at least one athlete")
        for arr, name in ((self.y, "y"), (self.age, "age"), (self.t, "t"),
                          (self.z, "z"), (self.X, "confounders")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        if np.any(np.diff(self.obs_off) < 1):
            raise ValueError("every athlete needs at least one performance")
        if np.any(self._S < 1):
            raise ValueError("every athlete needs at least one season")
        if np.any((self.z < 0.0) | (self.z >= 1.0)):
            raise ValueError("season fractions must lie in [0, 1)")
        expected_t = (self.season - 1 + self.z) * self.season_length
        if np.any(np.abs(expected_t - self.t) > 1e-9):
            raise ValueError("season/time mismatch: t != (s - 1 + z) * delta")
        for i in range(self.M):
            lo, hi = self.obs_off[i], self.obs_off[i + 1]
            if int(self.season[lo:hi].min()) != 1:
                raise ValueError("season indices must start at 1")
            if hi - lo < 2:
                continue
            dt = np.diff(self.t[lo:hi])
            da = np.diff(self.age[lo:hi])
            if np.any(dt < -1e-12):
                raise ValueError("rows must be time-sorted within athlete")
            if np.any(da < -1e-9) or np.any((dt > 1e-9) & (da <= 0.0)):
                raise ValueError("age must increase with t within an athlete")

    def performance(self, athlete: int, k: int) -> Performance:
        row = int(self.obs_off[athlete]) + k
        if not self.obs_off[athlete] <= row < self.obs_off[athlete + 1]:
            raise IndexError("performance index out of range")
        return Performance(
            athlete_id=self.athlete_ids[athlete],
            value=float(self.y[row]),
            age=float(self.age[row]),
            calendar_time=float(self.t[row]),
            season_index=int(self.season[row]),
            season_fraction=float(self.z[row]),
            confounders=self.X[row].copy(),
            athlete_index=athlete,
            obs_index=row,
        )

    @classmethod
    def from_athlete_rows(cls, rows_per_athlete, athlete_ids=None,
                          confounder_names=None, season_length=1.0):
        """Build from a list of per-athlete (y, age, season, z) record
        arrays; convenience for tests and the simulator."""
        ys, ages, seasons, zs, Xs = [], [], [], [], []
        off = [0]
        for rec in rows_per_athlete:
            y, age, season, z = rec[:4]
            x = rec[4] if len(rec) > 4 else np.zeros((len(y), 0))
            order = np.lexsort((np.asarray(z), np.asarray(season)))
            ys.append(np.asarray(y, dtype=float)[order])
            ages.append(np.asarray(age, dtype=float)[order])
            seasons.append(np.asarray(season, dtype=int)[order])
            zs.append(np.asarray(z, dtype=float)[order])
            Xs.append(np.asarray(x, dtype=float).reshape(len(y), -1)[order])
            off.append(off[-1] + len(y))
        if athlete_ids is None:
            athlete_ids = [str(i) for i in range(len(rows_per_athlete))]
        season_arr = np.concatenate(seasons) if seasons else np.zeros(0, int)
        z_arr = np.concatenate(zs) if zs else np.zeros(0)
        return cls(
            athlete_ids=list(athlete_ids),
            y=np.concatenate(ys),
            age=np.concatenate(ages),
            t=(season_arr - 1 + z_arr) * season_length,
            z=z_arr,
            season=season_arr,
            obs_off=np.array(off),
            X=np.vstack(Xs),
            confounder_names=list(confounder_names or []),
            season_length=season_length,
        )


@dataclass(frozen=True)
class PriorConfig:
    """Fixed hyperparameters of the hierarchical model.

    Defaults follow the standard specification: vague inverse-gamma
    (0.001, 0.001) hyperpriors on the variance-family parameters, Exp(1)
    on the shrinkage shapes, Ga(2, 0.1) on degrees of freedom, N(0, 3^2)
    on the skewness, IG(5, 5) on the per-coefficient scales, and a flat
    prior on (delta, zeta) (delta_prec = 0).  A positive ``delta_prec``
    turns the flat prior into N(0, 1/delta_prec) per coordinate, which
    the prior-coherence tests require.
    """

    a_bar: float
    d: int = 4
    max_order: int = 4
    direction: int = -1
    season_length: float = 1.0
    nu_shape: float = 2.0
    nu_rate: float = 0.1
    alpha_sd: float = 3.0
    cd_shape: float = 5.0
    cd_rate: float = 5.0
    sigma2_beta_shape: float = 5.0
    sigma2_beta_rate: float = 5.0
    lambda0_rate: float = 1.0
    tau0_rate: float = 1.0
    lambda1_shape: float = 0.001
    lambda1_rate: float = 0.001
    tau1_shape: float = 0.001
    tau1_rate: float = 0.001
    sigma2_a_shape: float = 0.001
    sigma2_a_rate: float = 0.001
    sigma2_m_shape: float = 0.001
    sigma2_m_rate: float = 0.001
    sigma2_mu_shape: float = 0.001
    sigma2_mu_rate: float = 0.001
    sigma2_eta_shape: float = 0.001
    sigma2_eta_rate: float = 0.001
    delta_prec: float = 0.0

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("polynomial degree must be >= 0")
        if self.max_order < 2:
            raise ValueError("max_order must be >= 2")
        if self.direction not in (-1, 1):
            raise ValueError("direction must be -1 or +1")

    @property
    def G(self) -> int:
        return bernstein.num_coefficients(self.max_order)

    @classmethod
    def for_dataset(cls, dataset: Dataset, **overrides) -> "PriorConfig":
        """Freeze the mean observed age into the config."""
        overrides.setdefault("season_length", dataset.season_length)
        return cls(a_bar=float(np.mean(dataset.age)), **overrides)

    def with_overrides(self, **overrides) -> "PriorConfig":
        return replace(self, **overrides)


@dataclass
class ParamState:
    """Full MCMC state: model parameters and latent scale variables.

    Array layout is tied to a Dataset: ``beta_is`` and ``omega_eta`` are
    indexed by the flat (athlete, season) slots of ``seas_ptr``; ``F``
    holds each athlete's S_i + 1 season-start values contiguously at
    ``knot_ptr``.
    """

    delta: np.ndarray
    zeta: np.ndarray
    alpha: float
    nu1: float
    nu2: float
    nu_mu: float
    nu_eta: float
    sigma2_i: np.ndarray
    sigma2_a: float
    sigma2_m: float
    sigma2_mu: float
    sigma2_eta: float
    lambda0: float
    lambda1: float
    tau0: float
    tau1: float
    lambda2: np.ndarray
    tau2: np.ndarray
    c2: np.ndarray
    d2: np.ndarray
    sigma2_beta: np.ndarray
    beta: np.ndarray
    beta_i: np.ndarray
    beta_is: np.ndarray
    F: np.ndarray
    omega: np.ndarray
    phi: np.ndarray
    kappa: np.ndarray
    omega_mu: np.ndarray
    omega_eta: np.ndarray

    ARRAY_FIELDS = (
        "delta", "zeta", "sigma2_i", "lambda2", "tau2", "c2", "d2",
        "sigma2_beta", "beta", "beta_i", "beta_is", "F", "omega", "phi",
        "kappa", "omega_mu", "omega_eta",
    )
    SCALAR_FIELDS = (
        "alpha", "nu1", "nu2", "nu_mu", "nu_eta", "sigma2_a", "sigma2_m",
        "sigma2_mu", "sigma2_eta", "lambda0", "lambda1", "tau0", "tau1",
    )

    def copy(self) -> "ParamState":
        kwargs = {name: getattr(self, name).copy() for name in self.ARRAY_FIELDS}
        kwargs.update({name: getattr(self, name) for name in self.SCALAR_FIELDS})
        return ParamState(**kwargs)

    def beta_set(self) -> bernstein.RbpCoefficientSet:
        max_order = int((1 + np.sqrt(1 + 8 * len(self.beta))) / 2)
        return bernstein.RbpCoefficientSet(max_order, self.beta.copy())

    def validate(self, config: PriorConfig):
        for name in ("sigma2_i", "lambda2", "tau2", "c2", "d2", "sigma2_beta",
                     "omega", "phi", "omega_mu", "omega_eta"):
            if np.any(getattr(self, name) <= 0.0):
                raise ValueError(f"{name} must be strictly positive")
        for name in ("sigma2_a", "sigma2_m", "sigma2_mu", "sigma2_eta",
                     "lambda0", "lambda1", "tau0", "tau1", "nu1", "nu2",
                     "nu_mu", "nu_eta"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if np.any(self.kappa < 0.0):
            raise ValueError("kappa must be nonnegative")
        if not bernstein.satisfies_shape(
            bernstein.RbpCoefficientSet(config.max_order, self.beta),
            config.direction,
        ):
            raise ValueError("population beta violates the shape constraint")


def population_trajectory(delta, a_bar: float, age):
    """Polynomial population curve sum_k delta_k (age - a_bar)^k."""
    delta = np.asarray(delta, dtype=np.float64)
    x = np.asarray(age, dtype=np.float64) - a_bar
    out = np.zeros_like(x, dtype=np.float64)
    for coef in delta[::-1]:
        out = out * x + coef
    return float(out) if out.ndim == 0 else out


def trend_trajectory(F, season_length: float, t):
    """Piecewise-linear career trend with knots F at season starts.

    F has length S + 1; t must lie in [0, S * season_length].  At a
    season boundary the value is exactly the knot value.
    """
    F = np.asarray(F, dtype=np.float64)
    S = len(F) - 1
    t_arr = np.asarray(t, dtype=np.float64)
    u = t_arr / season_length
    if np.any((u < 0.0) | (u > S)):
        raise ValueError(f"time {t} outside the career span [0, {S * season_length}]")
    k = np.minimum(np.floor(u).astype(np.int64), S - 1)
    z = u - k
    out = F[k] * (1.0 - z) + F[k + 1] * z
    return float(out) if out.ndim == 0 else out


def mean_response(state: ParamState, obs: Performance, config: PriorConfig,
                  knot_ptr=None, seas_ptr=None) -> float:
    """Conditional mean of a performance given all latents:
    g(a) + f_i(t) + h*_{i,s}(z) + x . zeta + skew_coefficient(alpha) * kappa.

    ``knot_ptr``/``seas_ptr`` locate the athlete's blocks in the flat
    state arrays; they default to an athlete whose blocks start at 0.
    """
    i = obs.athlete_index
    k0 = int(knot_ptr[i]) if knot_ptr is not None else 0
    s0 = int(seas_ptr[i]) if seas_ptr is not None else 0
    n_knots = (int(knot_ptr[i + 1] - knot_ptr[i]) if knot_ptr is not None
               else len(state.F))
    g = population_trajectory(state.delta, config.a_bar, obs.age)
    f = trend_trajectory(state.F[k0 : k0 + n_knots], config.season_length,
                         obs.calendar_time)
    brow = bernstein.basis_row(config.max_order, obs.season_fraction)
    h = float(brow @ state.beta_is[s0 + obs.season_index - 1])
    xz = float(obs.confounders @ state.zeta) if len(state.zeta) else 0.0
    kap = state.kappa[obs.obs_index] if obs.obs_index >= 0 else 0.0
    return float(g + f + h + xz + skew_coefficient(state.alpha) * kap)


def sample_error(alpha: float, nu1: float, nu2: float, sigma2: float, rng,
                 size=None):
    """Draw observation errors eps* + skew_coefficient(alpha) * kappa with
    eps* ~ N(0, omega sigma2), kappa ~ half-N(0, phi sigma2) and
    omega ~ IG(nu1/2, nu1/2), phi ~ IG(nu2/2, nu2/2), all independent."""
    if nu1 <= 0 or nu2 <= 0 or sigma2 <= 0:
        raise ValueError("nu1, nu2 and sigma2 must be positive")
    omega = (nu1 / 2.0) / rng.gamma(nu1 / 2.0, 1.0, size=size)
    phi = (nu2 / 2.0) / rng.gamma(nu2 / 2.0, 1.0, size=size)
    eps_star = rng.normal(size=size) * np.sqrt(omega * sigma2)
    kappa = np.abs(rng.normal(size=size)) * np.sqrt(phi * sigma2)
    return eps_star + skew_coefficient(alpha) * kappa
