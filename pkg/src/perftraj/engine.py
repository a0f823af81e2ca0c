"""The blocked, interweaved, adaptive Metropolis-within-Gibbs sampler.

Per iteration the sweep updates, in order: the per-athlete coefficient
blocks, the skew latents kappa, the population block (delta, zeta, beta)
with the season-start values marginalized out and then redrawn plus the
coefficient interweave, the observation-scale family, the global-local
shrinkage family with its working-parameter rescalings, the population
coefficient scales, the trend scales, and the tail family (degrees of
freedom, their latent mixing scales, and the skewness).

Closed-form conditional parameters live in small ``*_params`` helpers so
the moment-matching tests target exactly what the updates draw from.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bernstein, kernels
from .design import DesignCache, build_design
from .model import Dataset, ParamState, PriorConfig, skew_coefficient
from .samplers import AdaptiveMhState, adaptive_mh_step, gig_sample, truncated_mvn_cone, truncated_normal
from .summaries import PosteriorDraws

logger = logging.getLogger(__name__)

__all__ = [
    "ChainConfig",
    "ChainInvariantError",
    "NumericalError",
    "init_state",
    "make_mh_states",
    "gibbs_sweep",
    "run_chain",
    "sample_state_from_prior",
    "simulate_responses",
    "update_athlete_block",
    "update_athlete_blocks",
    "update_kappa",
    "update_population_block",
    "update_scale_family",
    "update_observation_scales",
    "update_coefficient_scales",
    "update_trend_scales",
    "update_shrinkage_family",
    "update_tail_family",
]


class NumericalError(RuntimeError):
    """A linear solve failed even after jitter escalation."""


class ChainInvariantError(RuntimeError):
    """A recorded draw violated a hard model invariant; carries the
    offending state for post-mortem."""

    def __init__(self, message, state=None, iteration=None):
        super().__init__(message)
        self.state = state
        self.iteration = iteration


@dataclass
class ChainConfig:
    """Chain-run protocol settings."""

    iterations: int = 50000
    burn_in: int = 30000
    thin: int = 20
    chains: int = 2
    seed: int = 0
    adapt: bool = True
    switch_iter: int = 1000
    cone_scans: int = 4
    n_jobs: int = 1
    log_every: int = 0

    def __post_init__(self):
        if not 0 <= self.burn_in <= self.iterations:
            raise ValueError("need 0 <= burn_in <= iterations")
        if self.thin < 1:
            raise ValueError("thinning must be >= 1")
        if self.chains < 1:
            raise ValueError("need at least one chain")


# ---------------------------------------------------------------------------
# linear predictor pieces

def predictor_fixed(state: ParamState, cache: DesignCache) -> np.ndarray:
    out = cache.A @ state.delta
    if state.zeta.size:
        out = out + cache.X @ state.zeta
    return out


def predictor_trend(state: ParamState, cache: DesignCache) -> np.ndarray:
    lo = cache.row_knot_lo
    return (1.0 - cache.z) * state.F[lo] + cache.z * state.F[lo + 1]


def predictor_seasonal(state: ParamState, cache: DesignCache) -> np.ndarray:
    return np.einsum("ij,ij->i", cache.C, state.beta_is[cache.row_season_global])


def residual_without_skew(state: ParamState, cache: DesignCache) -> np.ndarray:
    return (cache.y - predictor_fixed(state, cache)
            - predictor_trend(state, cache) - predictor_seasonal(state, cache))


def full_residual(state: ParamState, cache: DesignCache) -> np.ndarray:
    return residual_without_skew(state, cache) \
        - skew_coefficient(state.alpha) * state.kappa


def _ig_draw(rng, shape, rate):
    """Inverse-gamma draws with density rate^shape/Gamma(shape) x^(-shape-1)
    exp(-rate/x)."""
    return rate / rng.gamma(shape, 1.0)


def _solve_spd(Q: np.ndarray, b: np.ndarray) -> np.ndarray:
    scale = max(float(np.trace(Q)) / max(Q.shape[0], 1), 1e-300)
    for jit in kernels.JITTER_STEPS:
        try:
            L = np.linalg.cholesky(Q + jit * scale * np.eye(Q.shape[0]))
            return np.linalg.solve(L.T, np.linalg.solve(L, b))
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("SPD solve failed despite jitter escalation")


# ---------------------------------------------------------------------------
# block updates

def update_athlete_block(state, cache, athlete, rng):
    """Joint draw of (beta_i, F_i) then each beta_is for one athlete."""
    _athlete_range(state, cache, athlete, athlete + 1, rng)
    return state


def update_athlete_blocks(state, cache, rng):
    _athlete_range(state, cache, 0, cache.dataset.M, rng)
    return state


def _athlete_range(state, cache, lo, hi, rng):
    ok = kernels.athlete_sweep(
        rng, lo, hi,
        cache.y, cache.A, cache.X, cache.C, cache.z,
        cache.obs_off, cache.seas_ptr, cache.srow_off, cache.knot_ptr, cache.S,
        state.delta, state.zeta, state.alpha, state.kappa, state.omega,
        state.sigma2_i, state.sigma2_mu, state.sigma2_eta,
        state.omega_mu, state.omega_eta,
        state.lambda2, state.tau2, state.c2, state.d2, state.beta,
        state.beta_i, state.beta_is, state.F)
    if not ok:
        raise NumericalError("athlete block factorization failed")


def kappa_params(state, cache):
    """(mean, variance) arrays of the truncated-normal kappa conditionals."""
    r0 = residual_without_skew(state, cache)
    c = skew_coefficient(state.alpha)
    denom = 1.0 / state.phi + c * c / state.omega
    mean = (c * r0 / state.omega) / denom
    var = state.sigma2_i[cache.row_athlete] / denom
    return mean, var


def update_kappa(state, cache, rng):
    mean, var = kappa_params(state, cache)
    state.kappa = truncated_normal(mean, var, 0.0, np.inf, rng)
    return state


def kappa_scale_move(state, cache, rng, steps=3):
    """Scale-group move on the whole skew-latent ensemble: kappa -> g*kappa
    with g drawn by MH from its 1-D orbit density (n log g from the
    Jacobian/Haar pair, the half-normal priors, and the likelihood
    cross terms).  The ensemble level of kappa is a slow collective
    coordinate of the skew split and single-site redraws move it only
    diffusively."""
    c = skew_coefficient(state.alpha)
    sig2 = state.sigma2_i[cache.row_athlete]
    r0 = residual_without_skew(state, cache)
    wt = 1.0 / (state.omega * sig2)
    kap = state.kappa
    A = float(np.sum(kap * kap / (state.phi * sig2))
              + c * c * np.sum(kap * kap * wt))
    b = c * float(np.sum(r0 * kap * wt))
    n = cache.dataset.n_total

    def lp(theta):
        e = math.exp(theta)
        return n * theta - 0.5 * A * e * e + b * e

    theta = 0.0
    cur = lp(theta)
    step = 2.5 / math.sqrt(max(A, 1.0))
    for _ in range(steps):
        prop = theta + step * rng.standard_normal()
        new = lp(prop)
        if math.log(rng.uniform() + 1e-300) < new - cur:
            theta, cur = prop, new
    if theta != 0.0:
        state.kappa = kap * math.exp(theta)
    return state


def update_population_block(state, cache, config, rng, cone_scans=4):
    """Joint draw of (delta, zeta, beta) with the trend values integrated
    out, then the trend redraw and the coefficient interweave shift."""
    Kmax = int(cache.S.max()) + 1
    Pstar, Qlin, R_flat, T_flat, psi_chol, ok = kernels.population_stats(
        cache.y, cache.A, cache.X, cache.C, cache.z,
        cache.obs_off, cache.seas_ptr, cache.srow_off, cache.knot_ptr, cache.S,
        cache.row_season_global, state.kappa, state.omega, state.sigma2_i,
        state.alpha, state.sigma2_mu, state.sigma2_eta,
        state.omega_mu, state.omega_eta,
        state.beta, state.beta_is, state.sigma2_beta,
        config.delta_prec, Kmax)
    if not ok:
        raise NumericalError("population block factorization failed")
    mean = _solve_spd(Pstar, Qlin)
    constraints = [
        (bernstein.convexity_matrix(n), -config.direction)
        for n in range(2, config.max_order + 1)
    ]
    x = np.concatenate((state.delta, state.zeta, state.beta))
    for _ in range(cone_scans):
        x = truncated_mvn_cone(mean, Pstar, cache.n_free, constraints, rng, x)
    nd = cache.A.shape[1]
    beta_old = state.beta.copy()
    state.delta = x[:nd].copy()
    state.zeta = x[nd:cache.n_free].copy()
    state.beta = x[cache.n_free:].copy()
    kernels.redraw_trend_values(rng, x, R_flat, T_flat, psi_chol,
                                cache.knot_ptr, cache.S, state.F)
    shift = state.beta - beta_old
    state.beta_is += shift
    state.beta_i += shift
    return state


def sigma2_i_params(state, cache, config):
    r = full_residual(state, cache)
    per_obs = r * r / state.omega + state.kappa ** 2 / state.phi
    ssq = np.add.reduceat(per_obs, cache.obs_off[:-1])
    shape = state.sigma2_a + cache.dataset.performances_per_athlete
    rate = state.sigma2_a / state.sigma2_m + 0.5 * ssq
    return shape, rate


def sigma2_a_log_density(value, state, config):
    """Log full conditional of the scale-population shape parameter."""
    if value <= 0.0:
        return -np.inf
    M = len(state.sigma2_i)
    inv = 1.0 / state.sigma2_i
    return (
        (M * value - config.sigma2_a_shape - 1.0) * math.log(value)
        - M * math.lgamma(value)
        - value * float(np.sum(np.log(state.sigma2_i)))
        - M * value * math.log(state.sigma2_m)
        - value * float(np.sum(inv)) / state.sigma2_m
        - config.sigma2_a_rate / value
    )


def sigma2_a_collapsed_log_density(value, sigma2_m, n_i, q_i, config):
    """Log conditional of the scale-population shape with the per-athlete
    scales integrated out: each athlete contributes the compound
    IG-prior/normal-likelihood marginal.  Conditioning on sigma2_i traps
    the chain on its heavy tail (the scales pin to sigma2_m as the shape
    grows), so the shape is updated against this marginal and the scales
    redrawn exactly afterwards."""
    if value <= 0.0:
        return -np.inf
    from scipy.special import gammaln

    am = value / sigma2_m
    terms = (value * math.log(am) - math.lgamma(value)
             + gammaln(value + n_i) - (value + n_i) * np.log(am + q_i))
    return (float(np.sum(terms))
            + (-config.sigma2_a_shape - 1.0) * math.log(value)
            - config.sigma2_a_rate / value)


def sigma2_m_params(state, config):
    M = len(state.sigma2_i)
    shape = config.sigma2_m_shape + M * state.sigma2_a
    rate = config.sigma2_m_rate + state.sigma2_a * float(np.sum(1.0 / state.sigma2_i))
    return shape, rate


def update_observation_scales(state, cache, config, rng, mh, repeats=16):
    """Collapsed (sigma2_a, sigma2_i) block plus the sigma2_m draw.

    The shape takes ``repeats`` MH steps on its sigma2_i-marginalized
    conditional (cheap, O(M) each), then the per-athlete scales and
    sigma2_m are redrawn from their exact inverse-gamma conditionals.
    """
    if repeats:
        r = full_residual(state, cache)
        per_obs = r * r / state.omega + state.kappa ** 2 / state.phi
        q_i = 0.5 * np.add.reduceat(per_obs, cache.obs_off[:-1])
        n_i = cache.dataset.performances_per_athlete
        for _ in range(repeats):
            state.sigma2_a = _mh_positive(
                mh["sigma2_a"], state.sigma2_a,
                lambda v: sigma2_a_collapsed_log_density(
                    v, state.sigma2_m, n_i, q_i, config), rng)
    shape, rate = sigma2_i_params(state, cache, config)
    state.sigma2_i = _ig_draw(rng, shape, rate)
    apply_scale_interweave(state, cache, config, rng)
    shape, rate = sigma2_m_params(state, config)
    state.sigma2_m = float(_ig_draw(rng, shape, rate))
    return state


def scale_interweave_params(state, cache, config):
    """Scale-group move breaking the multiplicative trade-off between the
    latent mixing scales and the per-athlete variances: draw gamma from
    GIG(n(nu1+nu2)/2 - M sigma2_a, 2 B, 2 A) and rescale omega /= gamma,
    phi /= gamma, sigma2_i *= gamma, which leaves every likelihood
    product omega*sigma2 and phi*sigma2 invariant.  Without it the
    ensemble level of the omegas and the sigma2_i wander jointly on a
    prior-identified ridge and drag sigma2_m with them."""
    n = cache.dataset.n_total
    M = cache.dataset.M
    lam = 0.5 * n * (state.nu1 + state.nu2) - M * state.sigma2_a
    a_rate = 0.5 * (state.nu1 * float(np.sum(1.0 / state.omega))
                    + state.nu2 * float(np.sum(1.0 / state.phi)))
    b_rate = state.sigma2_a / state.sigma2_m * float(np.sum(1.0 / state.sigma2_i))
    return lam, 2.0 * b_rate, 2.0 * a_rate


def apply_scale_interweave(state, cache, config, rng):
    lam, chi, psi = scale_interweave_params(state, cache, config)
    g = float(gig_sample(lam, chi, psi, rng))
    state.omega /= g
    state.phi /= g
    state.sigma2_i *= g
    return g


def sigma2_beta_params(state, config):
    shape = config.sigma2_beta_shape + 0.5
    rate = config.sigma2_beta_rate + 0.5 * state.beta ** 2
    return shape, rate


def update_coefficient_scales(state, config, rng):
    shape, rate = sigma2_beta_params(state, config)
    state.sigma2_beta = _ig_draw(rng, np.full_like(rate, shape), rate)
    return state


def sigma2_mu_params(state, cache, config):
    F1 = state.F[cache.knot_ptr[:-1]]
    M = len(state.sigma2_i)
    shape = config.sigma2_mu_shape + 0.5 * M
    rate = config.sigma2_mu_rate + 0.5 * float(np.sum(F1 ** 2 / state.omega_mu))
    return shape, rate


def sigma2_eta_params(state, cache, config):
    dF = state.F[cache.incr_hi] - state.F[cache.incr_lo]
    shape = config.sigma2_eta_shape + 0.5 * cache.dataset.total_seasons
    rate = config.sigma2_eta_rate + 0.5 * float(np.sum(dF ** 2 / state.omega_eta))
    return shape, rate


def update_trend_scales(state, cache, config, rng):
    shape, rate = sigma2_mu_params(state, cache, config)
    state.sigma2_mu = float(_ig_draw(rng, shape, rate))
    shape, rate = sigma2_eta_params(state, cache, config)
    state.sigma2_eta = float(_ig_draw(rng, shape, rate))
    return state


def update_scale_family(state, cache, config, rng, mh):
    """All inverse-gamma scale updates plus the MH step on sigma2_a."""
    update_observation_scales(state, cache, config, rng, mh)
    update_coefficient_scales(state, config, rng)
    update_trend_scales(state, cache, config, rng)
    return state


# Floor for the GIG chi argument: squared coefficient deviations can
# underflow to exactly 0 in deeply shrunk states, which would leave the
# conditional's GIG domain.
CHI_FLOOR = 1e-290


def lambda2_params(state, cache, config):
    dev = state.beta_is - state.beta_i[cache.season_athlete]
    per_season = np.sum(dev * dev / state.c2, axis=1)
    chi = np.maximum(np.add.reduceat(per_season, cache.seas_ptr[:-1]), CHI_FLOOR)
    lam = state.lambda0 - 0.5 * config.G * cache.S
    psi = 2.0 * state.lambda0 / state.lambda1
    return lam, chi, np.full_like(chi, psi)


def c2_params(state, cache, config):
    dev = state.beta_is - state.beta_i[cache.season_athlete]
    scaled = dev * dev / state.lambda2[cache.season_athlete, None]
    shape = config.cd_shape + 0.5 * cache.dataset.total_seasons
    rate = config.cd_rate + 0.5 * np.sum(scaled, axis=0)
    return shape, rate

def tau2_params(state, config):
    dev = state.beta_i - state.beta
    chi = np.maximum(np.sum(dev * dev / state.d2, axis=1), CHI_FLOOR)
    lam = np.full_like(chi, state.tau0 - 0.5 * config.G)
    psi = 2.0 * state.tau0 / state.tau1
    return lam, chi, np.full_like(chi, psi)


def d2_params(state, config):
    dev = state.beta_i - state.beta
    M = state.beta_i.shape[0]
    scaled = dev * dev / state.tau2[:, None]
    shape = config.cd_shape + 0.5 * M
    rate = config.cd_rate + 0.5 * np.sum(scaled, axis=0)
    return shape, rate


def m1_params(state, config):
    """Scale-group working-parameter draw for the (lambda2, c2) split:
    gamma ~ IG(M lambda0 + a_c G, b_c sum(1/c2) + (lambda0/lambda1)
    sum(lambda2)); then lambda2 /= gamma and c2 *= gamma, which leaves
    every product lambda2 * c2 invariant."""
    M = len(state.lambda2)
    shape = M * state.lambda0 + config.cd_shape * config.G
    rate = config.cd_rate * float(np.sum(1.0 / state.c2)) \
        + state.lambda0 / state.lambda1 * float(np.sum(state.lambda2))
    return shape, rate


def m2_params(state, config):
    M = len(state.tau2)
    shape = M * state.tau0 + config.cd_shape * config.G
    rate = config.cd_rate * float(np.sum(1.0 / state.d2)) \
        + state.tau0 / state.tau1 * float(np.sum(state.tau2))
    return shape, rate


def noncentered_scale_move(state, cache, config, rng, steps=4, step_sd=0.6):
    """Ancillarity-sufficiency move on the shrinkage amplitudes.

    Holding the standardized coefficient deviations fixed, lambda_i (and
    tau_i) become regression amplitudes informed directly by the data
    (respectively the athlete-level deviations); a few MH steps on their
    noncentered conditionals then a deterministic rescale of the
    deviations.  Without this the deviation-ensemble amplitude and the
    observation scales drift on a slow joint mode.

    For amplitude x with prior Ga(shape0, rate0) on x^2 the noncentered
    conditional is  x^(2 shape0 - 1) exp(-a x^2 + b x)  with
    a = rate0 + S_ww / 2 and b = S_rw from the regression of the current
    residuals on the standardized deviation predictor.
    """
    # lambda side: predictor is the seasonal deviation curve / lambda_old
    seas_full = predictor_seasonal(state, cache)
    seas_i = np.einsum("ij,ij->i", cache.C, state.beta_i[cache.row_athlete])
    dev_pred = seas_full - seas_i
    lam_row = np.sqrt(state.lambda2)[cache.row_athlete]
    w = dev_pred / lam_row
    r0 = (cache.y - predictor_fixed(state, cache)
          - predictor_trend(state, cache) - seas_i
          - skew_coefficient(state.alpha) * state.kappa)
    wt = 1.0 / (state.omega * state.sigma2_i[cache.row_athlete])
    s_ww = np.add.reduceat(w * w * wt, cache.obs_off[:-1])
    s_rw = np.add.reduceat(r0 * w * wt, cache.obs_off[:-1])
    a = state.lambda0 / state.lambda1 + 0.5 * s_ww
    lam_new = _amplitude_mh(np.sqrt(state.lambda2), state.lambda0, a, s_rw,
                            rng, steps, step_sd)
    ratio = lam_new / np.sqrt(state.lambda2)
    dev = state.beta_is - state.beta_i[cache.season_athlete]
    state.beta_is = state.beta_i[cache.season_athlete] \
        + dev * ratio[cache.season_athlete, None]
    state.lambda2 = lam_new ** 2

    # tau side: "data" are the athlete-level deviations of beta_is' means
    dev_i = state.beta_i - state.beta
    tau_old = np.sqrt(state.tau2)
    w_i = dev_i / tau_old[:, None]  # (M, G)
    dev_is = state.beta_is - state.beta  # (tot_seasons, G)
    inv_cc = 1.0 / (state.lambda2[:, None] * state.c2)
    S_counts = cache.S
    s_ww = S_counts * np.sum(w_i * w_i * inv_cc, axis=1)
    per_season = np.sum(dev_is * w_i[cache.season_athlete]
                        * inv_cc[cache.season_athlete], axis=1)
    s_rw = np.add.reduceat(per_season, cache.seas_ptr[:-1])
    a = state.tau0 / state.tau1 + 0.5 * s_ww
    tau_new = _amplitude_mh(tau_old, state.tau0, a, s_rw, rng, steps, step_sd)
    ratio = tau_new / tau_old
    state.beta_i = state.beta + dev_i * ratio[:, None]  # beta_is held fixed
    state.tau2 = tau_new ** 2
    return state


def _amplitude_mh(x, shape0, a, b, rng, steps, step_sd):
    """Vectorized MH on log-amplitudes with target
    2*shape0*theta - a*exp(2 theta) + b*exp(theta)."""
    theta = np.log(x)

    def lp(t):
        e = np.exp(t)
        return 2.0 * shape0 * t - a * e * e + b * e

    cur = lp(theta)
    for _ in range(steps):
        prop = theta + step_sd * rng.standard_normal(theta.shape)
        new = lp(prop)
        accept = np.log(rng.uniform(size=theta.shape)) < new - cur
        theta = np.where(accept, prop, theta)
        cur = np.where(accept, new, cur)
    return np.exp(theta)


def lambda0_log_density(value, state, config):
    if value <= 0.0:
        return -np.inf
    M = len(state.lambda2)
    return (
        M * value * math.log(value / state.lambda1)
        - M * math.lgamma(value)
        + value * float(np.sum(np.log(state.lambda2)))
        - value / state.lambda1 * float(np.sum(state.lambda2))
        - config.lambda0_rate * value
    )


def tau0_log_density(value, state, config):
    if value <= 0.0:
        return -np.inf
    M = len(state.tau2)
    return (
        M * value * math.log(value / state.tau1)
        - M * math.lgamma(value)
        + value * float(np.sum(np.log(state.tau2)))
        - value / state.tau1 * float(np.sum(state.tau2))
        - config.tau0_rate * value
    )


def lambda1_params(state, config):
    M = len(state.lambda2)
    shape = config.lambda1_shape + M * state.lambda0
    rate = config.lambda1_rate + state.lambda0 * float(np.sum(state.lambda2))
    return shape, rate


def tau1_params(state, config):
    M = len(state.tau2)
    shape = config.tau1_shape + M * state.tau0
    rate = config.tau1_rate + state.tau0 * float(np.sum(state.tau2))
    return shape, rate


def update_shrinkage_family(state, rng, cache, config, mh):
    """Global-local shrinkage scales with working-parameter interweaves."""
    lam, chi, psi = lambda2_params(state, cache, config)
    state.lambda2 = gig_sample(lam, chi, psi, rng)
    shape, rate = c2_params(state, cache, config)
    state.c2 = _ig_draw(rng, np.full_like(rate, shape), rate)
    shape, rate = m1_params(state, config)
    g1 = float(_ig_draw(rng, shape, rate))
    state.lambda2 /= g1
    state.c2 *= g1

    lam, chi, psi = tau2_params(state, config)
    state.tau2 = gig_sample(lam, chi, psi, rng)
    shape, rate = d2_params(state, config)
    state.d2 = _ig_draw(rng, np.full_like(rate, shape), rate)
    shape, rate = m2_params(state, config)
    g2 = float(_ig_draw(rng, shape, rate))
    state.tau2 /= g2
    state.d2 *= g2

    state.lambda0 = _mh_positive(
        mh["lambda0"], state.lambda0,
        lambda v: lambda0_log_density(v, state, config), rng)
    shape, rate = lambda1_params(state, config)
    state.lambda1 = float(_ig_draw(rng, shape, rate))
    state.tau0 = _mh_positive(
        mh["tau0"], state.tau0,
        lambda v: tau0_log_density(v, state, config), rng)
    shape, rate = tau1_params(state, config)
    state.tau1 = float(_ig_draw(rng, shape, rate))
    noncentered_scale_move(state, cache, config, rng)
    return state


def _student_scale_log_density(nu, count, quad, config):
    """Log conditional of a degrees-of-freedom parameter whose latent
    scale variables have been integrated out: the t-marginal in the
    quadratic terms ``quad`` plus the Ga(shape, rate) prior."""
    if nu <= 0.0:
        return -np.inf
    half = 0.5 * nu
    return (
        count * (half * math.log(half) - math.lgamma(half)
                 + math.lgamma(half + 0.5))
        + (config.nu_shape - 1.0) * math.log(nu)
        - config.nu_rate * nu
        - (half + 0.5) * float(np.sum(np.log(0.5 * (nu + quad))))
    )


def omega_params(state, cache):
    r = full_residual(state, cache)
    quad = r * r / state.sigma2_i[cache.row_athlete]
    shape = 0.5 * (state.nu1 + 1.0)
    rate = 0.5 * (state.nu1 + quad)
    return shape, rate


def phi_params(state, cache):
    quad = state.kappa ** 2 / state.sigma2_i[cache.row_athlete]
    shape = 0.5 * (state.nu2 + 1.0)
    rate = 0.5 * (state.nu2 + quad)
    return shape, rate


def omega_mu_params(state, cache):
    F1 = state.F[cache.knot_ptr[:-1]]
    quad = F1 ** 2 / state.sigma2_mu
    return 0.5 * (state.nu_mu + 1.0), 0.5 * (state.nu_mu + quad)


def omega_eta_params(state, cache):
    dF = state.F[cache.incr_hi] - state.F[cache.incr_lo]
    quad = dF ** 2 / state.sigma2_eta
    return 0.5 * (state.nu_eta + 1.0), 0.5 * (state.nu_eta + quad)


def alpha_log_density(value, s_kk, s_rk, config):
    """Log conditional of the skewness: an exact quadratic in
    value/sqrt(1+value^2) plus the normal prior penalty."""
    c = skew_coefficient(value)
    return -0.5 * (c * c * s_kk - 2.0 * c * s_rk
                   + value * value / config.alpha_sd ** 2)


def alpha_log_density_grad(value, s_kk, s_rk, config):
    c = skew_coefficient(value)
    dc = (1.0 + value * value) ** -1.5
    return -(c * s_kk - s_rk) * dc - value / config.alpha_sd ** 2


def alpha_stats(state, cache):
    """Sufficient statistics (s_kk, s_rk) of the skewness conditional."""
    r0 = residual_without_skew(state, cache)
    w = state.sigma2_i[cache.row_athlete] * state.omega
    s_kk = float(np.sum(state.kappa ** 2 / w))
    s_rk = float(np.sum(r0 * state.kappa / w))
    return s_kk, s_rk


def alpha_marginal_log_density(value, r0, v2, s2, config):
    """Log conditional of the skewness with the skew latents integrated
    out: each residual is skew-normal with scale sqrt(v2 + c^2 s2) and
    shape from the half-normal weight.  Used for the collapsed
    (alpha, kappa) block update, which mixes far better than alternating
    the quadratic conditional with the kappa draws."""
    from scipy.special import log_ndtr

    c = skew_coefficient(value)
    w2 = v2 + c * c * s2
    return float(
        -0.5 * np.sum(np.log(w2))
        - 0.5 * np.sum(r0 * r0 / w2)
        + np.sum(log_ndtr(c * np.sqrt(s2) * r0 / np.sqrt(v2 * w2)))
        - 0.5 * value * value / config.alpha_sd ** 2
    )


def update_tail_family(state, cache, config, rng, mh, cycles=3):
    """Degrees-of-freedom MH updates, each followed by the exact redraw of
    its latent scale variables, plus the skewness MH update.

    The observation-error subsystem (nu1/omega, nu2/phi, alpha/kappa) is
    cycled: the split of the residual variance between the skew component
    and the symmetric component is a slow collective mode of its latents,
    and extra sub-Gibbs passes are far cheaper than extra full sweeps."""
    sig2_row = state.sigma2_i[cache.row_athlete]
    r0 = residual_without_skew(state, cache)
    for _ in range(cycles):
        r = r0 - skew_coefficient(state.alpha) * state.kappa
        quad = r * r / sig2_row
        state.nu1 = _mh_positive(
            mh["nu1"], state.nu1,
            lambda v: _student_scale_log_density(v, len(quad), quad, config),
            rng)
        shape, rate = omega_params(state, cache)
        state.omega = _ig_draw(rng, np.full_like(rate, shape), rate)

        quad = state.kappa ** 2 / sig2_row
        state.nu2 = _mh_positive(
            mh["nu2"], state.nu2,
            lambda v: _student_scale_log_density(v, len(quad), quad, config),
            rng)
        shape, rate = phi_params(state, cache)
        state.phi = _ig_draw(rng, np.full_like(rate, shape), rate)

        # Collapsed (alpha, kappa) block: a few MH steps on the
        # kappa-marginalized density (its conditioning is fixed while
        # alpha moves), then an exact kappa redraw.
        v2 = state.omega * sig2_row
        s2 = state.phi * sig2_row
        for _ in range(3):
            state.alpha, _ = adaptive_mh_step(
                mh["alpha"], state.alpha,
                lambda a: alpha_marginal_log_density(a, r0, v2, s2, config),
                rng)
        update_kappa(state, cache, rng)
        kappa_scale_move(state, cache, rng)

    F1 = state.F[cache.knot_ptr[:-1]]
    quad = F1 ** 2 / state.sigma2_mu
    state.nu_mu = _mh_positive(
        mh["nu_mu"], state.nu_mu,
        lambda v: _student_scale_log_density(v, len(quad), quad, config), rng)
    shape, rate = omega_mu_params(state, cache)
    state.omega_mu = _ig_draw(rng, np.full_like(rate, shape), rate)

    dF = state.F[cache.incr_hi] - state.F[cache.incr_lo]
    quad = dF ** 2 / state.sigma2_eta
    state.nu_eta = _mh_positive(
        mh["nu_eta"], state.nu_eta,
        lambda v: _student_scale_log_density(v, len(quad), quad, config), rng)
    shape, rate = omega_eta_params(state, cache)
    state.omega_eta = _ig_draw(rng, np.full_like(rate, shape), rate)
    return state


def _mh_positive(mh: AdaptiveMhState, value: float, logpdf, rng) -> float:
    """Random-walk MH on the log scale with the Jacobian correction."""
    new, _ = adaptive_mh_step(
        mh, math.log(value), lambda x: logpdf(math.exp(x)) + x, rng)
    return math.exp(new)


# ---------------------------------------------------------------------------
# sweep, initialization, chain orchestration

MH_PARAMS = ("sigma2_a", "lambda0", "tau0", "nu1", "nu2", "nu_mu", "nu_eta", "alpha")


def make_mh_states(chain_cfg: ChainConfig, init_scale: float = 0.5) -> dict:
    mh = {}
    for name in MH_PARAMS:
        mh[name] = AdaptiveMhState(dim=1, switch_iter=chain_cfg.switch_iter,
                                   log_scale=np.array([math.log(init_scale)]))
        if not chain_cfg.adapt:
            mh[name].freeze()
    return mh


def gibbs_sweep(state, cache, config, rng, mh, cone_scans=4):
    """One full sweep over every block, in presentation order."""
    update_athlete_blocks(state, cache, rng)
    update_kappa(state, cache, rng)
    update_population_block(state, cache, config, rng, cone_scans=cone_scans)
    update_observation_scales(state, cache, config, rng, mh)
    update_shrinkage_family(state, rng, cache, config, mh)
    update_coefficient_scales(state, config, rng)
    update_trend_scales(state, cache, config, rng)
    update_tail_family(state, cache, config, rng, mh)
    return state


def _interior_cone_point(config, scale=0.01) -> np.ndarray:
    """A point strictly inside the shape cone: beta_{n,v} proportional to
    -direction * v (n - v), whose second differences are all +-2*scale.
    The cone apex (all zeros) is avoided because the coordinatewise cone
    scan cannot leave it."""
    ns, vs = bernstein.coefficient_orders(config.max_order)
    return config.direction * scale * (vs * (ns - vs)).astype(np.float64)


def init_state(dataset_or_cache, config, rng) -> ParamState:
    """Deterministic starting point: least-squares fixed effects, the
    coefficient hierarchy at a point strictly inside the shape cone, unit
    latent scales, and kappa lifted just off its boundary."""
    cache = _as_cache(dataset_or_cache, config)
    ds = cache.dataset
    D = np.hstack([cache.A, cache.X]) if cache.X.shape[1] else cache.A
    coef, *_ = np.linalg.lstsq(D, ds.y, rcond=None)
    resid = ds.y - D @ coef
    s2 = max(float(np.var(resid)), 1e-4)
    G = config.G
    M = ds.M
    nu0 = config.nu_shape / config.nu_rate
    return ParamState(
        delta=coef[: config.d + 1].copy(),
        zeta=coef[config.d + 1 :].copy(),
        alpha=0.0,
        nu1=nu0, nu2=nu0, nu_mu=nu0, nu_eta=nu0,
        sigma2_i=np.full(M, s2),
        sigma2_a=1.0, sigma2_m=s2, sigma2_mu=1.0, sigma2_eta=1.0,
        lambda0=1.0, lambda1=1.0, tau0=1.0, tau1=1.0,
        lambda2=np.ones(M), tau2=np.ones(M),
        c2=np.ones(G), d2=np.ones(G),
        sigma2_beta=np.full(
            G, config.sigma2_beta_rate / (config.sigma2_beta_shape - 1.0)
            if config.sigma2_beta_shape > 1.0 else 1.0),
        beta=_interior_cone_point(config),
        beta_i=np.tile(_interior_cone_point(config), (M, 1)),
        beta_is=np.tile(_interior_cone_point(config), (ds.total_seasons, 1)),
        F=np.zeros(ds.total_seasons + M),
        omega=np.ones(ds.n_total),
        phi=np.ones(ds.n_total),
        kappa=np.full(ds.n_total, 0.01),
        omega_mu=np.ones(M),
        omega_eta=np.ones(ds.total_seasons),
    )


def _as_cache(dataset_or_cache, config) -> DesignCache:
    if isinstance(dataset_or_cache, DesignCache):
        return dataset_or_cache
    return build_design(dataset_or_cache, config)


def _check_invariants(state, config, iteration):
    try:
        state.validate(config)
    except ValueError as exc:
        raise ChainInvariantError(
            f"invariant breach at iteration {iteration}: {exc}",
            state=state, iteration=iteration) from exc


def _run_single_chain(cache, config, chain_cfg, seed_seq, chain_index):
    rng = np.random.default_rng(seed_seq)
    state = init_state(cache, config, rng)
    mh = make_mh_states(chain_cfg)
    draws = []
    for it in range(chain_cfg.iterations):
        if it == chain_cfg.burn_in:
            for m in mh.values():
                m.freeze()
        gibbs_sweep(state, cache, config, rng, mh,
                    cone_scans=chain_cfg.cone_scans)
        if chain_cfg.log_every and (it + 1) % chain_cfg.log_every == 0:
            logger.info("chain %d: iteration %d/%d", chain_index, it + 1,
                        chain_cfg.iterations)
        if it >= chain_cfg.burn_in \
                and (it - chain_cfg.burn_in) % chain_cfg.thin == chain_cfg.thin - 1:
            _check_invariants(state, config, it)
            draws.append(state.copy())
    return draws


def _chain_worker(args):
    dataset, config, chain_cfg, seed_seq, chain_index = args
    cache = build_design(dataset, config)
    return _run_single_chain(cache, config, chain_cfg, seed_seq, chain_index)


def run_chain(dataset: Dataset, config: PriorConfig,
              chain_cfg: ChainConfig) -> PosteriorDraws:
    """Run ``chain_cfg.chains`` independent chains and collect the thinned
    post-burn-in draws.  Chains use independent generators spawned from
    the master seed; with ``n_jobs > 1`` they run in separate processes."""
    seeds = np.random.SeedSequence(chain_cfg.seed).spawn(chain_cfg.chains)
    if chain_cfg.n_jobs > 1 and chain_cfg.chains > 1:
        jobs = [(dataset, config, chain_cfg, seeds[c], c)
                for c in range(chain_cfg.chains)]
        with ProcessPoolExecutor(max_workers=min(chain_cfg.n_jobs,
                                                 chain_cfg.chains)) as pool:
            chain_lists = list(pool.map(_chain_worker, jobs))
    else:
        cache = build_design(dataset, config)
        chain_lists = [
            _run_single_chain(cache, config, chain_cfg, seeds[c], c)
            for c in range(chain_cfg.chains)
        ]
    return PosteriorDraws.from_states(chain_lists, dataset, config, {
        "iterations": chain_cfg.iterations,
        "burn_in": chain_cfg.burn_in,
        "thin": chain_cfg.thin,
        "chains": chain_cfg.chains,
        "seed": chain_cfg.seed,
    })


# ---------------------------------------------------------------------------
# generative sampling (prior draws and response simulation)

def sample_state_from_prior(cache, config, rng, max_tries=200000) -> ParamState:
    """Draw a full parameter state from the prior; requires a proper
    (delta, zeta) prior (config.delta_prec > 0).

    The population coefficients and their scales are drawn jointly by
    rejection from the unnormalized product IG(sigma2_beta) N(beta; 0,
    sigma2_beta) 1[cone], which is the joint the Gibbs conditionals
    target.
    """
    if config.delta_prec <= 0.0:
        raise ValueError("prior sampling needs a proper delta/zeta prior "
                         "(set delta_prec > 0)")
    ds = cache.dataset
    G, M = config.G, ds.M
    lambda0 = rng.exponential(1.0 / config.lambda0_rate)
    tau0 = rng.exponential(1.0 / config.tau0_rate)
    lambda1 = float(_ig_draw(rng, config.lambda1_shape, config.lambda1_rate))
    tau1 = float(_ig_draw(rng, config.tau1_shape, config.tau1_rate))
    sigma2_a = float(_ig_draw(rng, config.sigma2_a_shape, config.sigma2_a_rate))
    sigma2_m = float(_ig_draw(rng, config.sigma2_m_shape, config.sigma2_m_rate))
    sigma2_mu = float(_ig_draw(rng, config.sigma2_mu_shape, config.sigma2_mu_rate))
    sigma2_eta = float(_ig_draw(rng, config.sigma2_eta_shape, config.sigma2_eta_rate))
    nus = rng.gamma(config.nu_shape, 1.0 / config.nu_rate, size=4)

    coeffs = None
    for _ in range(max_tries):
        sigma2_beta = _ig_draw(
            rng, np.full(G, config.sigma2_beta_shape),
            np.full(G, config.sigma2_beta_rate))
        beta = rng.normal(size=G) * np.sqrt(sigma2_beta)
        coeffs = bernstein.RbpCoefficientSet(config.max_order, beta)
        if bernstein.satisfies_shape(coeffs, config.direction):
            break
    else:
        raise RuntimeError("shape-cone rejection sampling failed")

    lambda2 = rng.gamma(lambda0, lambda1 / lambda0, size=M)
    tau2 = rng.gamma(tau0, tau1 / tau0, size=M)
    c2 = _ig_draw(rng, np.full(G, config.cd_shape), np.full(G, config.cd_rate))
    d2 = _ig_draw(rng, np.full(G, config.cd_shape), np.full(G, config.cd_rate))
    beta_i = beta + rng.normal(size=(M, G)) * np.sqrt(tau2[:, None] * d2)
    beta_is = beta_i[cache.season_athlete] + rng.normal(
        size=(ds.total_seasons, G)) * np.sqrt(
            lambda2[cache.season_athlete, None] * c2)

    sigma2_i = _ig_draw(rng, np.full(M, sigma2_a),
                        np.full(M, sigma2_a / sigma2_m))
    omega_mu = (nus[2] / 2.0) / rng.gamma(nus[2] / 2.0, 1.0, size=M)
    omega_eta = (nus[3] / 2.0) / rng.gamma(nus[3] / 2.0, 1.0,
                                           size=ds.total_seasons)
    F = np.zeros(ds.total_seasons + M)
    for i in range(M):
        k0 = int(cache.knot_ptr[i])
        K = int(cache.S[i]) + 1
        incr = np.empty(K)
        incr[0] = rng.normal() * math.sqrt(omega_mu[i] * sigma2_mu)
        for s in range(1, K):
            incr[s] = rng.normal() * math.sqrt(
                omega_eta[cache.seas_ptr[i] + s - 1] * sigma2_eta)
        F[k0 : k0 + K] = np.cumsum(incr)

    omega = (nus[0] / 2.0) / rng.gamma(nus[0] / 2.0, 1.0, size=ds.n_total)
    phi = (nus[1] / 2.0) / rng.gamma(nus[1] / 2.0, 1.0, size=ds.n_total)
    kappa = np.abs(rng.normal(size=ds.n_total)) * np.sqrt(
        phi * sigma2_i[cache.row_athlete])

    prior_sd = 1.0 / math.sqrt(config.delta_prec)
    return ParamState(
        delta=rng.normal(size=config.d + 1) * prior_sd,
        zeta=rng.normal(size=ds.X.shape[1]) * prior_sd,
        alpha=rng.normal() * config.alpha_sd,
        nu1=float(nus[0]), nu2=float(nus[1]),
        nu_mu=float(nus[2]), nu_eta=float(nus[3]),
        sigma2_i=sigma2_i, sigma2_a=sigma2_a, sigma2_m=sigma2_m,
        sigma2_mu=sigma2_mu, sigma2_eta=sigma2_eta,
        lambda0=float(lambda0), lambda1=lambda1,
        tau0=float(tau0), tau1=tau1,
        lambda2=lambda2, tau2=tau2, c2=c2, d2=d2,
        sigma2_beta=sigma2_beta, beta=beta, beta_i=beta_i, beta_is=beta_is,
        F=F, omega=omega, phi=phi, kappa=kappa,
        omega_mu=omega_mu, omega_eta=omega_eta,
    )


def simulate_responses(state, cache, config, rng) -> np.ndarray:
    """Draw responses given every latent: y = mean + N(0, omega sigma2_i)."""
    mean = (predictor_fixed(state, cache) + predictor_trend(state, cache)
            + predictor_seasonal(state, cache)
            + skew_coefficient(state.alpha) * state.kappa)
    sd = np.sqrt(state.omega * state.sigma2_i[cache.row_athlete])
    return mean + rng.normal(size=cache.dataset.n_total) * sd
