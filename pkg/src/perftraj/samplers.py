"""Random-variate generation for the Gibbs sweep.

All samplers take an explicit ``numpy.random.Generator``; none hold global
state, so independent chains just use independent generators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np
from scipy import special

from . import kernels

__all__ = [
    "truncated_normal",
    "gig_sample",
    "truncated_mvn_cone",
    "AdaptiveMhState",
    "adaptive_mh_step",
]

# Standardized bound beyond which inverse-CDF sampling loses precision and
# the rejection schemes take over.
_TAIL_CROSSOVER = 4.0


def truncated_normal(mean, variance, lower, upper, rng):
    """Draw from N(mean, variance) truncated to [lower, upper].

    Broadcasts over array arguments.  Stable for truncation points many
    standard deviations from the mean: inverse-CDF in the central regime,
    exponential/uniform rejection beyond ``4`` standardized units.
    """
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if np.any(variance <= 0.0):
        raise ValueError("variance must be positive")
    if np.any(lower >= upper):
        raise ValueError("empty truncation interval (lower >= upper)")

    scalar = (
        mean.ndim == 0 and variance.ndim == 0 and lower.ndim == 0 and upper.ndim == 0
    )
    sd = np.sqrt(variance)
    a, b = np.broadcast_arrays((lower - mean) / sd, (upper - mean) / sd)
    a = np.atleast_1d(np.ascontiguousarray(a, dtype=np.float64))
    b = np.atleast_1d(np.ascontiguousarray(b, dtype=np.float64))
    z = _std_truncnorm(a, b, rng)
    out = np.broadcast_to(mean, z.shape) + np.broadcast_to(sd, z.shape) * z
    out = np.clip(out, np.broadcast_to(lower, z.shape), np.broadcast_to(upper, z.shape))
    return float(out[0]) if scalar else out


def _std_truncnorm(a: np.ndarray, b: np.ndarray, rng) -> np.ndarray:
    """Standard-normal draws truncated to [a, b] elementwise."""
    out = np.empty_like(a)

    # Mirror intervals entirely in the left tail onto the right tail.
    flip = b < -_TAIL_CROSSOVER
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)

    tail = lo > _TAIL_CROSSOVER
    central = ~tail
    if np.any(central):
        pl = special.ndtr(lo[central])
        pu = special.ndtr(hi[central])
        u = rng.uniform(size=pl.shape)
        out[central] = special.ndtri(pl + u * (pu - pl))
    if np.any(tail):
        out[tail] = _right_tail(lo[tail], hi[tail], rng)
    out[flip] = -out[flip]
    return out


def _truncnorm_scalar(a: float, b: float, rng) -> float:
    """Standard-normal draw truncated to [a, b]; scalar fast path."""
    if b < -_TAIL_CROSSOVER:
        return -_truncnorm_scalar(-b, -a, rng)
    if a > _TAIL_CROSSOVER:
        alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
        if (b - a) * alpha < 2.0:
            while True:
                x = a + rng.uniform() * (b - a)
                if math.log(rng.uniform() + 1e-300) < 0.5 * (a * a - x * x):
                    return x
        while True:
            x = a + rng.exponential() / alpha
            if x <= b and math.log(rng.uniform() + 1e-300) < -0.5 * (x - alpha) ** 2:
                return x
    pl = special.ndtr(a)
    pu = special.ndtr(b)
    return float(special.ndtri(pl + rng.uniform() * (pu - pl)))


def _right_tail(lo: np.ndarray, hi: np.ndarray, rng) -> np.ndarray:
    """Rejection sampling on [lo, hi] with lo > 0 in the far right tail."""
    n = lo.shape[0]
    out = np.empty(n)
    # Narrow intervals: uniform proposal with quadratic acceptance.
    # Wide/unbounded: shifted-exponential proposal (optimal rate), with
    # the upper bound enforced by rejection.
    alpha = 0.5 * (lo + np.sqrt(lo * lo + 4.0))
    narrow = (hi - lo) * alpha < 2.0
    pending = np.arange(n)
    for _ in range(10000):
        if pending.size == 0:
            return out
        l_, h_, al = lo[pending], hi[pending], alpha[pending]
        nar = narrow[pending]
        x = np.empty(pending.size)
        logacc = np.empty(pending.size)
        if np.any(nar):
            u = rng.uniform(size=int(nar.sum()))
            x[nar] = l_[nar] + u * (h_[nar] - l_[nar])
            logacc[nar] = 0.5 * (l_[nar] ** 2 - x[nar] ** 2)
        if np.any(~nar):
            e = rng.exponential(size=int((~nar).sum()))
            x[~nar] = l_[~nar] + e / al[~nar]
            logacc[~nar] = -0.5 * (x[~nar] - al[~nar]) ** 2
            logacc[~nar] = np.where(x[~nar] > h_[~nar], -np.inf, logacc[~nar])
        accept = np.log(rng.uniform(size=pending.size)) < logacc
        out[pending[accept]] = x[accept]
        pending = pending[~accept]
    raise RuntimeError("truncated normal rejection sampler failed to converge")


def gig_sample(lam, chi, psi, rng):
    """Draw from GIG(lam, chi, psi) with density proportional to
    x^(lam-1) exp(-(chi/x + psi*x)/2).

    Boundary cases reduce exactly: chi = 0 with lam > 0 is Gamma(lam,
    rate=psi/2); psi = 0 with lam < 0 is InvGamma(-lam, chi/2).
    Broadcasts over array parameters.
    """
    lam = np.asarray(lam, dtype=np.float64)
    chi = np.asarray(chi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    scalar = lam.ndim == 0 and chi.ndim == 0 and psi.ndim == 0
    lam, chi, psi = np.atleast_1d(*np.broadcast_arrays(lam, chi, psi))

    if np.any(chi < 0.0) or np.any(psi < 0.0):
        raise ValueError("chi and psi must be nonnegative")
    bad = ((chi == 0.0) & (lam <= 0.0)) | ((psi == 0.0) & (lam >= 0.0))
    if np.any(bad):
        raise ValueError(
            "invalid GIG domain: need chi > 0 when lam <= 0 and psi > 0 when lam >= 0"
        )

    out = np.empty(lam.shape)
    gamma_case = chi == 0.0
    invgamma_case = psi == 0.0
    general = ~(gamma_case | invgamma_case)
    if np.any(gamma_case):
        out[gamma_case] = rng.gamma(lam[gamma_case], 2.0 / psi[gamma_case])
    if np.any(invgamma_case):
        out[invgamma_case] = (chi[invgamma_case] / 2.0) / rng.gamma(
            -lam[invgamma_case], 1.0
        )
    if np.any(general):
        sub = np.empty(int(general.sum()))
        kernels.gig_vector(
            rng,
            np.ascontiguousarray(lam[general]),
            np.ascontiguousarray(chi[general]),
            np.ascontiguousarray(psi[general]),
            sub,
        )
        out[general] = sub
    return float(out[0]) if scalar else out


def truncated_mvn_cone(mean, precision, free_size, constraints, rng, current):
    """One systematic univariate-Gibbs scan of a multivariate normal with
    precision matrix ``precision`` and mean ``mean``, truncated so the
    coordinates after the first ``free_size`` satisfy linear cone
    constraints.

    ``constraints`` is a list of (matrix, sign) pairs applied to
    consecutive blocks of the constrained tail in order: sign * (A @
    x_block) >= 0 elementwise.  The scan leaves the target invariant;
    ``current`` must already satisfy the constraints.
    """
    mean = np.asarray(mean, dtype=np.float64)
    precision = np.asarray(precision, dtype=np.float64)
    x = np.array(current, dtype=np.float64)
    q = x.size
    if mean.shape != (q,) or precision.shape != (q, q):
        raise ValueError("dimension mismatch between mean, precision and current")

    # Per-coordinate constraint bookkeeping: for coordinate j, the rows of
    # its block's constraint matrix and the block coordinate offset.
    blocks = []
    off = free_size
    for A, sign in constraints:
        A = np.asarray(A, dtype=np.float64)
        w = A.shape[1]
        if off + w > q:
            raise ValueError("constraint blocks exceed vector size")
        if np.any(sign * (A @ x[off : off + w]) < 0.0):
            raise ValueError("current point violates the cone constraints")
        blocks.append((A, 1.0 if sign > 0 else -1.0, off, w))
        off += w

    diag = np.diag(precision)
    if np.any(diag <= 0.0):
        raise ValueError("precision matrix must have positive diagonal")
    # w = precision @ (x - mean); conditional mean of coord j is
    # x_j - w_j / Q_jj, conditional variance 1 / Q_jj.
    w = precision @ (x - mean)
    for j in range(q):
        cond_var = 1.0 / diag[j]
        cond_mean = x[j] - w[j] * cond_var
        lo, hi = -np.inf, np.inf
        for A, sign, off, width in blocks:
            jb = j - off
            if not 0 <= jb < width:
                continue
            xb = x[off : off + width]
            for r in range(A.shape[0]):
                coef = sign * A[r, jb]
                if coef == 0.0:
                    continue
                partial = sign * (A[r] @ xb - A[r, jb] * x[j])
                bound = -partial / coef
                if coef > 0.0:
                    lo = max(lo, bound)
                else:
                    hi = min(hi, bound)
        if lo >= hi:  # pinned coordinate (cone edge) or glued interval
            new = 0.5 * (lo + hi)
        else:
            sd = math.sqrt(cond_var)
            new = cond_mean + sd * _truncnorm_scalar(
                (lo - cond_mean) / sd, (hi - cond_mean) / sd, rng)
            new = min(max(new, lo), hi)
        delta = new - x[j]
        if delta != 0.0:
            w += precision[:, j] * delta
            x[j] = new
    return x


@dataclass
class AdaptiveMhState:
    """Adaptation state for random-walk Metropolis.

    Univariate mode adapts a per-component log-scale toward acceptance
    0.3.  Multivariate mode starts component-wise, then switches to
    whole-vector proposals from the scaled running empirical covariance
    (ASWAM) after ``switch_iter`` iterations.  ``freeze()`` stops all
    adaptation, after which the kernel is a fixed-proposal MH.
    """

    dim: int = 1
    log_scale: np.ndarray = None
    target_rate: float = 0.3
    mv_target_rate: float = 0.234
    switch_iter: int = 1000
    decay: float = 0.6
    iteration: int = 0
    n_proposed: int = 0
    n_accepted: int = 0
    n_nan: int = 0
    frozen: bool = False
    mv_log_scale: float = 0.0
    run_mean: np.ndarray = None
    run_cov: np.ndarray = None
    _chol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.log_scale is None:
            self.log_scale = np.zeros(self.dim)
        else:
            self.log_scale = np.asarray(self.log_scale, dtype=np.float64)
        if self.run_mean is None:
            self.run_mean = np.zeros(self.dim)
        if self.run_cov is None:
            self.run_cov = np.zeros((self.dim, self.dim))

    @property
    def multivariate_phase(self) -> bool:
        return self.dim > 1 and self.iteration >= self.switch_iter

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / max(self.n_proposed, 1)

    def freeze(self):
        self.frozen = True

    def _gain(self) -> float:
        return float(self.iteration + 1) ** (-self.decay)

    def _update_moments(self, x: np.ndarray):
        n = self.iteration + 1
        delta = x - self.run_mean
        self.run_mean = self.run_mean + delta / n
        self.run_cov = self.run_cov + (np.outer(delta, x - self.run_mean) - self.run_cov) / n
        self._chol = None

    def proposal_cholesky(self) -> np.ndarray:
        if self._chol is None:
            cov = self.run_cov + 1e-10 * np.eye(self.dim)
            self._chol = np.linalg.cholesky(cov)
        return self._chol


def adaptive_mh_step(state: AdaptiveMhState, current, log_target, rng):
    """One adaptive random-walk Metropolis step.

    Returns ``(new_point, state)``; the state is mutated in place and
    returned for convenience.  A NaN log-target at the proposal rejects
    and increments ``n_nan``.
    """
    x = np.atleast_1d(np.array(current, dtype=np.float64))
    if x.size != state.dim:
        raise ValueError(f"current has size {x.size}, state.dim is {state.dim}")
    scalar = np.ndim(current) == 0

    lp_x = float(log_target(current if scalar else x))
    if not np.isfinite(lp_x):
        raise ValueError("log-target must be finite at the current point")

    if state.multivariate_phase:
        L = state.proposal_cholesky()
        prop = x + np.exp(state.mv_log_scale) * (L @ rng.standard_normal(state.dim))
        lp_p = float(log_target(prop))
        state.n_proposed += 1
        if np.isnan(lp_p):
            state.n_nan += 1
            acc_prob, accepted = 0.0, False
        else:
            acc_prob = min(1.0, np.exp(min(lp_p - lp_x, 0.0)))
            accepted = rng.uniform() < acc_prob
        if accepted:
            x = prop
            state.n_accepted += 1
        if not state.frozen:
            state.mv_log_scale += state._gain() * (acc_prob - state.mv_target_rate)
    else:
        # Component-at-a-time scan with per-component scales.
        for j in range(state.dim):
            prop = x.copy()
            prop[j] += np.exp(state.log_scale[j]) * rng.standard_normal()
            lp_p = float(log_target(float(prop[0]) if scalar else prop))
            state.n_proposed += 1
            if np.isnan(lp_p):
                state.n_nan += 1
                acc_prob, accepted = 0.0, False
            else:
                acc_prob = min(1.0, np.exp(min(lp_p - lp_x, 0.0)))
                accepted = rng.uniform() < acc_prob
            if accepted:
                x = prop
                lp_x = lp_p
                state.n_accepted += 1
            if not state.frozen:
                state.log_scale[j] += state._gain() * (acc_prob - state.target_rate)

    if not state.frozen:
        if state.dim > 1:
            state._update_moments(x)
        state.iteration += 1
    return (float(x[0]) if scalar else x), state
