"""Benchmark the jitted kernels against the pure-numpy fallback.

Runs the same small fit in two subprocesses, one with PERFTRAJ_NUMBA=1
and one with PERFTRAJ_NUMBA=0, and reports per-sweep timings:

    python -m perftraj.benchmark [--athletes 30] [--sweeps 200]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def _worker(athletes: int, sweeps: int) -> dict:
    import numpy as np

    from ._jit import NUMBA_ENABLED
    from .design import build_design
    from .engine import ChainConfig, gibbs_sweep, init_state, make_mh_states
    from .model import PriorConfig
    from .simulate import SimDesign, generate_dataset

    rng = np.random.default_rng(0)
    dataset, _ = generate_dataset(SimDesign(M=athletes, seed=12345), rng)
    config = PriorConfig.for_dataset(dataset)
    cache = build_design(dataset, config)
    state = init_state(cache, config, rng)
    mh = make_mh_states(ChainConfig(iterations=10, burn_in=5, chains=1))

    warmup = min(5, sweeps)
    for _ in range(warmup):
        gibbs_sweep(state, cache, config, rng, mh)
    t0 = time.perf_counter()
    for _ in range(sweeps):
        gibbs_sweep(state, cache, config, rng, mh)
    elapsed = time.perf_counter() - t0
    return {
        "numba": NUMBA_ENABLED,
        "athletes": athletes,
        "observations": dataset.n_total,
        "sweeps": sweeps,
        "seconds": elapsed,
        "ms_per_sweep": 1000.0 * elapsed / sweeps,
        "beta_head": float(state.beta[0]),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--athletes", type=int, default=30)
    parser.add_argument("--sweeps", type=int, default=200)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.worker:
        print(json.dumps(_worker(args.athletes, args.sweeps)))
        return 0

    results = {}
    for mode in ("1", "0"):
        env = dict(os.environ, PERFTRAJ_NUMBA=mode)
        sweeps = args.sweeps if mode == "1" else max(args.sweeps // 10, 5)
        out = subprocess.run(
            [sys.executable, "-m", "perftraj.benchmark", "--worker",
             "--athletes", str(args.athletes), "--sweeps", str(sweeps)],
            env=env, capture_output=True, text=True, check=True)
        results[mode] = json.loads(out.stdout.strip().splitlines()[-1])

    jit, plain = results["1"], results["0"]
    print(f"workload: {jit['athletes']} athletes, {jit['observations']} observations")
    print(f"numba kernels : {jit['ms_per_sweep']:9.2f} ms/sweep "
          f"({jit['sweeps']} sweeps)")
    print(f"numpy fallback: {plain['ms_per_sweep']:9.2f} ms/sweep "
          f"({plain['sweeps']} sweeps)")
    print(f"speedup       : {plain['ms_per_sweep'] / jit['ms_per_sweep']:9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
