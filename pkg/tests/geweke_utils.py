"""Joint-distribution (marginal-conditional vs successive-conditional)
test machinery for the Gibbs sweep.

Both simulators target the same joint over (parameters, data); if every
full conditional is correct, the two collections of test-function values
agree in distribution.  Test functions are bounded or log transforms so
their variances are finite under the heavy-tailed hyperpriors; the
successive-conditional standard errors are autocorrelation-adjusted.
"""

import numpy as np

from perftraj import engine
from perftraj.design import build_design
from perftraj.model import Dataset, PriorConfig
from perftraj.summaries import ess

# Proper-prior settings for generative sampling: the flat (delta, zeta)
# prior becomes N(0, 2^2) and the near-improper IG(0.001, 0.001)
# hyperpriors become IG(3, 2).
GEWEKE_PRIOR = dict(
    d=1, max_order=3, direction=-1, delta_prec=0.25,
    lambda1_shape=3.0, lambda1_rate=2.0, tau1_shape=3.0, tau1_rate=2.0,
    sigma2_a_shape=3.0, sigma2_a_rate=2.0, sigma2_m_shape=3.0,
    sigma2_m_rate=2.0, sigma2_mu_shape=3.0, sigma2_mu_rate=2.0,
    sigma2_eta_shape=3.0, sigma2_eta_rate=2.0,
)

TEST_FUNCTION_NAMES = (
    "delta[0]", "delta[1]", "beta[0]", "mean(beta_i)", "tanh(mean F / 5)",
    "1/(1+mean lambda2)", "log c2[0]", "alpha", "log nu1",
    "tanh(median y / 10)",
)


def tiny_dataset() -> Dataset:
    """Two athletes, two seasons each, four performances per athlete."""
    rows = []
    for entry in (20.0, 21.0):
        season = np.array([1, 1, 2, 2])
        z = np.array([0.3, 0.7, 0.3, 0.7])
        rows.append((np.zeros(4), entry + season - 1 + z, season, z))
    return Dataset.from_athlete_rows(rows)


def test_functions(state, y) -> np.ndarray:
    return np.array([
        state.delta[0],
        state.delta[1],
        state.beta[0],
        float(np.mean(state.beta_i)),
        np.tanh(np.mean(state.F) / 5.0),
        1.0 / (1.0 + np.mean(state.lambda2)),
        np.log(state.c2[0]),
        state.alpha,
        np.log(state.nu1),
        np.tanh(np.median(y) / 10.0),
    ])


def run_geweke(n_samples: int, seed: int = 0, cone_scans: int = 4):
    """Return the z-scores of the ten test functions."""
    ds = tiny_dataset()
    config = PriorConfig.for_dataset(ds, **GEWEKE_PRIOR)
    cache = build_design(ds, config)

    rng = np.random.default_rng(seed)
    mc = np.empty((n_samples, len(TEST_FUNCTION_NAMES)))
    for k in range(n_samples):
        state = engine.sample_state_from_prior(cache, config, rng)
        y = engine.simulate_responses(state, cache, config, rng)
        mc[k] = test_functions(state, y)

    rng = np.random.default_rng(seed + 1)
    state = engine.sample_state_from_prior(cache, config, rng)
    cache.dataset.y[:] = engine.simulate_responses(state, cache, config, rng)
    mh = engine.make_mh_states(
        engine.ChainConfig(iterations=2, burn_in=1, chains=1, adapt=False),
        init_scale=1.2)
    sc = np.empty_like(mc)
    for k in range(n_samples):
        engine.gibbs_sweep(state, cache, config, rng, mh,
                           cone_scans=cone_scans)
        cache.dataset.y[:] = engine.simulate_responses(state, cache, config, rng)
        sc[k] = test_functions(state, cache.dataset.y)

    zs = np.empty(len(TEST_FUNCTION_NAMES))
    for j in range(len(zs)):
        se_mc = mc[:, j].std(ddof=1) / np.sqrt(n_samples)
        se_sc = sc[:, j].std(ddof=1) / np.sqrt(ess(sc[:, j]))
        zs[j] = (mc[:, j].mean() - sc[:, j].mean()) / np.hypot(se_mc, se_sc)
    return zs, mc, sc
