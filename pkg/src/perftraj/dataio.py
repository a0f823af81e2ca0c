"""Data ingestion, posterior persistence, config files and run manifests.

The posterior archive is an uncompressed ``.npz``: one array per recorded
parameter with shape (chains, draws, ...), the originating dataset's
arrays under ``ds_*`` keys, a ``schema_version`` integer and a
``meta_json`` string holding the prior config, chain settings and
athlete/confounder names.  Identical (dataset, config, seed) runs produce
byte-identical archives.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import zipfile
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from .model import Dataset, PriorConfig
from .summaries import PosteriorDraws

__all__ = [
    "LoadOptions",
    "LoadReport",
    "DataError",
    "ArchiveError",
    "load_dataset",
    "persist_draws",
    "restore_draws",
    "read_config",
    "write_manifest",
]

SCHEMA_VERSION = 1
DAYS_PER_YEAR = 365.25


class DataError(ValueError):
    """Unusable input data; message carries file line numbers."""


class ArchiveError(RuntimeError):
    """Unreadable or incompatible posterior archive."""


@dataclass
class LoadOptions:
    """CSV schema options for ingestion."""

    confounders: tuple = ()
    pool_column: str = "pool_length"
    season_start: tuple = (1, 1)  # (month, day)
    min_performances: int = 1
    id_column: str = "athlete_id"
    date_column: str = "date"
    value_column: str = "performance"
    age_column: str = "age"
    birth_column: str = "birth_date"


@dataclass
class LoadReport:
    """What ingestion dropped and why."""

    dropped_athletes: list
    dropped_rows: list
    n_rows: int = 0
    n_athletes: int = 0


def _season_start_before(d: date, month: int, day: int) -> date:
    start = date(d.year, month, day)
    if d < start:
        start = date(d.year - 1, month, day)
    return start


def load_dataset(path, options: LoadOptions | None = None,
                 with_report: bool = False):
    """Read a performance CSV into a Dataset.

    Required columns: athlete id, ISO-8601 date, performance value, and
    either an age column or a birth-date column.  Declared confounder
    columns are kept as raw values; a pool-length column with values in
    {25, 50} becomes the binary confounder ``<name>_50m`` (1 for 50m).
    Duplicate (athlete, date) rows are retained.  Rows with missing
    confounders are dropped with a report, as are athletes with fewer
    than ``min_performances`` rows; unparseable rows raise DataError with
    their line numbers.
    """
    opt = options or LoadOptions()
    month, day = opt.season_start
    date(2001, month, day)  # reject season starts that need a leap year

    path = Path(path)
    per_athlete: dict = {}
    bad_lines = []
    dropped_rows = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        cols = set(reader.fieldnames)
        for req in (opt.id_column, opt.date_column, opt.value_column):
            if req not in cols:
                raise DataError(f"{path}: missing required column {req!r}")
        has_age = opt.age_column in cols
        has_birth = opt.birth_column in cols
        if not has_age and not has_birth:
            raise DataError(
                f"{path}: need an {opt.age_column!r} or {opt.birth_column!r} column")
        conf_cols = [c for c in opt.confounders if c != opt.pool_column]
        for c in conf_cols:
            if c not in cols:
                raise DataError(f"{path}: missing confounder column {c!r}")
        has_pool = opt.pool_column in cols

        for lineno, row in enumerate(reader, start=2):
            try:
                aid = row[opt.id_column].strip()
                d = date.fromisoformat(row[opt.date_column].strip())
                value = float(row[opt.value_column])
                if has_age and row.get(opt.age_column, "").strip():
                    age = float(row[opt.age_column])
                elif has_birth and row.get(opt.birth_column, "").strip():
                    birth = date.fromisoformat(row[opt.birth_column].strip())
                    age = (d - birth).days / DAYS_PER_YEAR
                else:
                    raise ValueError("no age information")
                if not aid:
                    raise ValueError("empty athlete id")
            except (ValueError, KeyError) as exc:
                bad_lines.append((lineno, str(exc)))
                continue
            x = []
            missing = False
            for c in conf_cols:
                cell = (row.get(c) or "").strip()
                if not cell:
                    missing = True
                    break
                try:
                    x.append(float(cell))
                except ValueError:
                    bad_lines.append((lineno, f"bad confounder {c!r}"))
                    missing = True
                    break
            if not missing and has_pool:
                cell = (row.get(opt.pool_column) or "").strip()
                if not cell:
                    missing = True
                else:
                    try:
                        pool = float(cell)
                    except ValueError:
                        bad_lines.append((lineno, "bad pool length"))
                        missing = True
                    else:
                        if pool not in (25.0, 50.0):
                            bad_lines.append(
                                (lineno, f"pool length must be 25 or 50, got {pool}"))
                            missing = True
                        else:
                            x.append(1.0 if pool == 50.0 else 0.0)
            if missing:
                if not bad_lines or bad_lines[-1][0] != lineno:
                    dropped_rows.append((lineno, "missing confounder"))
                continue
            per_athlete.setdefault(aid, []).append((d, value, age, x))

    if bad_lines:
        detail = "; ".join(f"line {ln}: {msg}" for ln, msg in bad_lines[:20])
        more = f" (+{len(bad_lines) - 20} more)" if len(bad_lines) > 20 else ""
        raise DataError(f"{path}: unparseable rows: {detail}{more}")

    conf_names = list(conf_cols)
    if has_pool:
        conf_names.append(f"{opt.pool_column}_50m")

    dropped_athletes = []
    rows = []
    ids = []
    for aid in sorted(per_athlete):
        recs = per_athlete[aid]
        if len(recs) < opt.min_performances:
            dropped_athletes.append((aid, len(recs)))
            continue
        recs.sort(key=lambda r: r[0])
        starts = [_season_start_before(d, month, day) for d, *_ in recs]
        year0 = min(s.year for s in starts)
        season = np.array([s.year - year0 + 1 for s in starts], dtype=np.int64)
        z = np.array([(d - s).days / DAYS_PER_YEAR
                      for (d, *_), s in zip(recs, starts)])
        y = np.array([r[1] for r in recs])
        age = np.array([r[2] for r in recs])
        X = np.array([r[3] for r in recs], dtype=np.float64).reshape(len(recs), -1)
        rows.append((y, age, season, z, X))
        ids.append(aid)

    if not rows:
        raise DataError(f"{path}: no athletes left after filtering")
    dataset = Dataset.from_athlete_rows(rows, athlete_ids=ids,
                                        confounder_names=conf_names)
    report = LoadReport(dropped_athletes=dropped_athletes,
                        dropped_rows=dropped_rows,
                        n_rows=dataset.n_total, n_athletes=dataset.M)
    return (dataset, report) if with_report else dataset


# ---------------------------------------------------------------------------
# posterior archive

def persist_draws(draws: PosteriorDraws, path) -> Path:
    """Write a posterior archive; round-trips losslessly via
    ``restore_draws``."""
    path = Path(path)
    ds = draws.dataset
    meta = {
        "config": dataclasses.asdict(draws.config),
        "chain_meta": draws.meta,
        "athlete_ids": list(ds.athlete_ids),
        "confounder_names": list(ds.confounder_names),
        "season_length": ds.season_length,
    }
    payload = {
        "schema_version": np.array(SCHEMA_VERSION, dtype=np.int64),
        "meta_json": np.array(json.dumps(meta, sort_keys=True)),
        "ds_y": ds.y, "ds_age": ds.age, "ds_t": ds.t, "ds_z": ds.z,
        "ds_season": ds.season, "ds_obs_off": ds.obs_off, "ds_X": ds.X,
    }
    for name, arr in draws.arrays.items():
        payload[f"par_{name}"] = arr
    with path.open("wb") as fh:
        np.savez(fh, **payload)
    return path


def restore_draws(path) -> PosteriorDraws:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            if "schema_version" not in data.files:
                raise ArchiveError(f"{path}: not a posterior archive")
            version = int(data["schema_version"])
            if version != SCHEMA_VERSION:
                raise ArchiveError(
                    f"{path}: archive schema version {version} is not "
                    f"supported (expected {SCHEMA_VERSION})")
            meta = json.loads(str(data["meta_json"]))
            dataset = Dataset(
                athlete_ids=meta["athlete_ids"],
                y=data["ds_y"], age=data["ds_age"], t=data["ds_t"],
                z=data["ds_z"], season=data["ds_season"],
                obs_off=data["ds_obs_off"], X=data["ds_X"],
                confounder_names=meta["confounder_names"],
                season_length=meta["season_length"],
            )
            config = PriorConfig(**meta["config"])
            arrays = {k[4:]: data[k] for k in data.files if k.startswith("par_")}
    except ArchiveError:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise ArchiveError(f"{path}: corrupt or unreadable archive: {exc}") from exc
    return PosteriorDraws(arrays=arrays, dataset=dataset, config=config,
                          meta=meta["chain_meta"])


# ---------------------------------------------------------------------------
# config files and manifests

def read_config(path) -> dict:
    """Read the JSON run-config file; top-level sections ``prior``,
    ``chain``, ``sim`` and ``load`` are each optional."""
    with Path(path).open() as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise DataError(f"{path}: config must be a JSON object")
    unknown = set(cfg) - {"prior", "chain", "sim", "load"}
    if unknown:
        raise DataError(f"{path}: unknown config sections {sorted(unknown)}")
    return cfg


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, input_paths, config: PriorConfig, chain_meta: dict,
                   extra=None) -> Path:
    """Record everything needed to bit-reproduce a run."""
    from . import __version__
    from ._jit import NUMBA_ENABLED

    config_dict = dataclasses.asdict(config)
    manifest = {
        "inputs": [
            {"path": str(p), "sha256": file_sha256(p)} for p in input_paths
        ],
        "prior_config": config_dict,
        "config_hash": hashlib.sha256(
            json.dumps(config_dict, sort_keys=True).encode()).hexdigest(),
        "chain": chain_meta,
        "software_version": __version__,
        "numba_enabled": NUMBA_ENABLED,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
