"""Command-line interface: simulate, fit, summarize, diagnose."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, bernstein
from .dataio import (ArchiveError, DataError, LoadOptions, load_dataset,
                     persist_draws, read_config, restore_draws, write_manifest)
from .engine import ChainConfig, run_chain
from .model import PriorConfig
from .simulate import SimDesign, generate_dataset
from .summaries import ess, psrf, trajectory_band

GRID_POINTS = 201


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int, help="master RNG seed")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perftraj",
        description="Bayesian hierarchical athletic performance trajectories")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("-M", "--athletes", type=int, help="athlete count")
    p.add_argument("--p1", type=float, help="short-career mixture weight")
    p.add_argument("--sigma2-a", type=float, help="athlete amplitude variance")
    p.add_argument("--sigma2-b", type=float, help="season amplitude variance")
    p.add_argument("--sigma2-error", type=float, help="error scale")

    p = sub.add_parser("fit", help="fit the model by MCMC")
    _add_common(p)
    p.add_argument("--input", required=True, help="performance CSV")
    p.add_argument("--chains", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--min-performances", type=int)
    p.add_argument("--season-start", metavar="MM-DD",
                   help="season start (default 01-01)")
    p.add_argument("--confounders", help="comma-separated confounder columns")
    p.add_argument("--n-jobs", type=int)

    p = sub.add_parser("summarize", help="export posterior summaries")
    _add_common(p)
    p.add_argument("--draws", required=True, help="posterior archive")
    p.add_argument("--athletes", help="comma-separated athlete ids for "
                   "per-athlete curve exports (default: all if <= 20)")

    p = sub.add_parser("diagnose", help="PSRF/ESS convergence table")
    p.add_argument("--draws", required=True, help="posterior archive")
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("--out", help="optional output CSV path")
    return parser


def _section(cfg_file, name) -> dict:
    return dict(cfg_file.get(name, {})) if cfg_file else {}


def _override(d: dict, **flags):
    for key, val in flags.items():
        if val is not None:
            d[key] = val
    return d


def cmd_simulate(args) -> int:
    cfg_file = read_config(args.config) if args.config else {}
    sim_kwargs = _override(
        _section(cfg_file, "sim"),
        M=args.athletes, p1=args.p1, sigma2_a=args.sigma2_a,
        sigma2_b=args.sigma2_b, sigma2_error=args.sigma2_error,
        seed=args.seed)
    sim_kwargs = {k: tuple(v) if isinstance(v, list) else v
                  for k, v in sim_kwargs.items()}
    design = SimDesign(**sim_kwargs)
    rng = np.random.default_rng(np.random.SeedSequence(design.seed))
    dataset, truth = generate_dataset(design, rng)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "dataset.csv"
    base_year = 2000
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["athlete_id", "date", "performance", "age"])
        for i in range(dataset.M):
            for r in range(dataset.obs_off[i], dataset.obs_off[i + 1]):
                # Day-of-season capped so the date stays inside its season
                # year regardless of leap days.
                year = base_year + int(dataset.season[r]) - 1
                days = min(int(dataset.z[r] * 365.25), 364)
                d = np.datetime64(f"{year}-01-01") + np.timedelta64(days, "D")
                writer.writerow([dataset.athlete_ids[i], str(d),
                                 f"{dataset.y[r]:.6f}", f"{dataset.age[r]:.6f}"])
    truth_path = out / "truth.npz"
    np.savez(
        truth_path,
        entry_age=truth.entry_age, seasons=truth.seasons,
        eta=truth.eta_flat(), a_i=truth.a_i, p_i=truth.p_i,
        b_is=np.concatenate(truth.b_is), r_is=np.concatenate(truth.r_is),
        endpoint_offsets=truth.endpoint_offsets,
        design_json=np.array(json.dumps(
            {f.name: getattr(design, f.name) for f in fields(design)})),
    )
    print(f"wrote {csv_path} ({dataset.n_total} rows, {dataset.M} athletes) "
          f"and {truth_path}")
    return 0


def cmd_fit(args) -> int:
    cfg_file = read_config(args.config) if args.config else {}
    load_kwargs = _override(
        _section(cfg_file, "load"),
        min_performances=args.min_performances)
    if args.season_start:
        month, day = (int(x) for x in args.season_start.split("-"))
        load_kwargs["season_start"] = (month, day)
    if args.confounders:
        load_kwargs["confounders"] = tuple(args.confounders.split(","))
    load_kwargs = {k: tuple(v) if isinstance(v, list) else v
                   for k, v in load_kwargs.items()}
    options = LoadOptions(**load_kwargs)
    dataset, report = load_dataset(args.input, options, with_report=True)
    if report.dropped_athletes:
        print(f"dropped {len(report.dropped_athletes)} athletes below "
              f"{options.min_performances} performances", file=sys.stderr)
    if report.dropped_rows:
        print(f"dropped {len(report.dropped_rows)} rows with missing "
              "confounders", file=sys.stderr)

    prior = PriorConfig.for_dataset(dataset, **_section(cfg_file, "prior"))
    chain_kwargs = _override(
        _section(cfg_file, "chain"),
        iterations=args.iters, burn_in=args.burnin, thin=args.thin,
        chains=args.chains, seed=args.seed, n_jobs=args.n_jobs)
    chain_cfg = ChainConfig(**chain_kwargs)

    draws = run_chain(dataset, prior, chain_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    archive = persist_draws(draws, out / "draws.npz")
    manifest = write_manifest(
        out / "manifest.json", [args.input], prior, draws.meta,
        extra={"n_athletes": dataset.M, "n_rows": dataset.n_total,
               "dropped_athletes": len(report.dropped_athletes)})
    print(f"wrote {archive} ({draws.n_chains} chains x {draws.n_draws} draws) "
          f"and {manifest}")
    return 0


def _write_band_csv(path, grid, median, lower, upper, grid_name="grid"):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([grid_name, "median", "lower", "upper"])
        for g, m, lo, hi in zip(grid, median, lower, upper):
            writer.writerow([f"{g:.10g}", f"{m:.10g}", f"{lo:.10g}", f"{hi:.10g}"])


def cmd_summarize(args) -> int:
    draws = restore_draws(args.draws)
    if draws.n_draws == 0:
        raise ArchiveError(f"{args.draws}: archive contains no draws")
    ds = draws.dataset
    cfg = draws.config
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ages = np.linspace(ds.age.min(), ds.age.max(), GRID_POINTS)
    _write_band_csv(out / "population_age_curve.csv", ages,
                    *trajectory_band(draws, "g", ages), grid_name="age")
    zgrid = np.linspace(0.0, 1.0, GRID_POINTS)
    _write_band_csv(out / "population_within_season.csv", zgrid,
                    *trajectory_band(draws, "h*", zgrid), grid_name="z")

    weights = bernstein.squared_norm_weights(cfg.max_order)
    lam = draws.pooled("lambda2")
    tau = draws.pooled("tau2")
    psi = lam * (draws.pooled("c2") @ weights)[:, None]
    gam = tau * (draws.pooled("d2") @ weights)[:, None]
    with (out / "athlete_summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["athlete_id", "psi_median", "gamma_median",
                         "lambda2_median", "tau2_median"])
        for i, aid in enumerate(ds.athlete_ids):
            writer.writerow([
                aid, f"{np.median(psi[:, i]):.10g}",
                f"{np.median(gam[:, i]):.10g}",
                f"{np.median(lam[:, i]):.10g}",
                f"{np.median(tau[:, i]):.10g}"])

    if args.athletes:
        wanted = args.athletes.split(",")
        missing = set(wanted) - set(ds.athlete_ids)
        if missing:
            raise DataError(f"unknown athlete ids: {sorted(missing)}")
    elif ds.M <= 20:
        wanted = list(ds.athlete_ids)
    else:
        wanted = []
        print(f"{ds.M} athletes; pass --athletes id1,id2 for per-athlete "
              "curves", file=sys.stderr)
    for aid in wanted:
        i = ds.athlete_ids.index(aid)
        _write_band_csv(out / f"athlete_{aid}_within_season.csv", zgrid,
                        *trajectory_band(draws, "h*_i", zgrid, athlete=i),
                        grid_name="z")
        tmax = float(ds.seasons_per_athlete[i]) * cfg.season_length
        tgrid = np.linspace(0.0, tmax, GRID_POINTS)
        _write_band_csv(out / f"athlete_{aid}_trend.csv", tgrid,
                        *trajectory_band(draws, "mu_trend", tgrid, athlete=i),
                        grid_name="t")
        _write_band_csv(out / f"athlete_{aid}_fitted.csv", tgrid,
                        *trajectory_band(draws, "mu_fitted", tgrid, athlete=i),
                        grid_name="t")
        for s in range(1, int(ds.seasons_per_athlete[i]) + 1):
            _write_band_csv(
                out / f"athlete_{aid}_season_{s:02d}.csv", zgrid,
                *trajectory_band(draws, "h*_is", zgrid, athlete=i, season=s),
                grid_name="z")

    pool_cols = [j for j, name in enumerate(ds.confounder_names)
                 if name.endswith("_50m")]
    if pool_cols:
        j = pool_cols[0]
        zeta_mean = float(draws.pooled("zeta").mean(axis=0)[j])
        with (out / "adjusted_performances.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["athlete_id", "t", "performance",
                             "adjusted_to_50m"])
            row_athlete = np.repeat(np.arange(ds.M),
                                    ds.performances_per_athlete)
            for r in range(ds.n_total):
                adj = ds.y[r] + (zeta_mean if ds.X[r, j] == 0.0 else 0.0)
                writer.writerow([ds.athlete_ids[row_athlete[r]],
                                 f"{ds.t[r]:.6f}", f"{ds.y[r]:.6f}",
                                 f"{adj:.6f}"])
    print(f"wrote summaries to {out}")
    return 0


DIAGNOSE_GROUPS = (
    "sigma2_a", "sigma2_m", "alpha", "zeta", "beta", "beta_i", "beta_is",
    "lambda2", "c2", "tau2", "d2", "F", "sigma2_i", "sigma2_mu", "sigma2_eta",
    "nu1", "nu2", "nu_mu", "nu_eta", "lambda0", "lambda1", "tau0", "tau1",
    "delta",
)


def cmd_diagnose(args) -> int:
    draws = restore_draws(args.draws)
    if draws.n_chains < 2:
        print("diagnose needs >= 2 chains", file=sys.stderr)
        return 1
    if draws.n_draws < 10:
        print("diagnose needs >= 10 draws per chain", file=sys.stderr)
        return 1
    rows = []
    for group in DIAGNOSE_GROUPS:
        arr = draws.arrays[group]
        flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
        if flat.shape[2] == 0:
            continue
        worst_psrf = -np.inf
        worst_ess = np.inf
        for j in range(flat.shape[2]):
            traces = flat[:, :, j]
            if np.ptp(traces) == 0.0:
                continue
            worst_psrf = max(worst_psrf, psrf(traces))
            worst_ess = min(worst_ess, sum(ess(t) for t in traces))
        if not np.isfinite(worst_psrf):
            continue
        rows.append((group, worst_psrf, worst_ess, flat.shape[2]))

    header = f"{'parameter':<12} {'PSRF':>8} {'ESS':>10} {'n':>6}"
    print(header)
    print("-" * len(header))
    for name, r, e, count in rows:
        print(f"{name:<12} {r:>8.3f} {e:>10.1f} {count:>6}")
    if args.out:
        with Path(args.out).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["parameter", "psrf", "ess", "n_components"])
            for name, r, e, count in rows:
                writer.writerow([name, f"{r:.4f}", f"{e:.1f}", count])
        print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "summarize":
            return cmd_summarize(args)
        if args.command == "diagnose":
            return cmd_diagnose(args)
    except (DataError, ArchiveError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
