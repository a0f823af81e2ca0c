"""Ingestion, archive persistence, manifests, and the CLI surface."""

import hashlib
import json
import zipfile

import numpy as np
import numpy.testing as npt
import pytest

from perftraj import cli
from perftraj.dataio import (ArchiveError, DataError, LoadOptions,
                             load_dataset, persist_draws, read_config,
                             restore_draws, write_manifest)
from perftraj.engine import ChainConfig, run_chain
from perftraj.model import PriorConfig
from perftraj.simulate import SimDesign, generate_dataset
from perftraj.summaries import PosteriorDraws


def write_csv(path, rows, header="athlete_id,date,performance,age"):
    path.write_text("\n".join([header] + rows) + "\n")
    return path


@pytest.fixture(scope="module")
def tiny_fit():
    design = SimDesign(M=3, seed=31)
    ds, _ = generate_dataset(design, np.random.default_rng(31))
    cfg = PriorConfig.for_dataset(ds)
    cc = ChainConfig(iterations=30, burn_in=10, thin=4, chains=2, seed=13)
    return run_chain(ds, cfg, cc)


class TestLoadDataset:
    def test_two_row_season_fractions(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", [
            "a,2020-01-01,55.0,20.0",
            "a,2020-07-01,54.2,20.5",
        ])
        ds = load_dataset(p)
        assert ds.M == 1
        assert ds.seasons_per_athlete[0] == 1
        npt.assert_allclose(ds.z, [0.0, 182 / 365.25], atol=1e-9)
        npt.assert_allclose(ds.z[1], 0.5, atol=0.01)

    def test_pool_column_binary_encoding(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", [
            "a,2020-02-01,55.0,20.0,25",
            "a,2020-03-01,56.0,20.1,50",
        ], header="athlete_id,date,performance,age,pool_length")
        ds = load_dataset(p)
        assert ds.confounder_names == ["pool_length_50m"]
        npt.assert_array_equal(ds.X[:, 0], [0.0, 1.0])

    def test_duplicate_timestamps_retained(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", [
            "a,2020-06-01,55.0,20.0",
            "a,2020-06-01,54.8,20.0",
            "a,2020-08-01,54.2,20.2",
        ])
        ds = load_dataset(p)
        assert ds.n_total == 3

    def test_min_performances_dropped_with_report(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", [
            "a,2020-02-01,55.0,20.0",
            "a,2020-03-01,54.0,20.1",
            "b,2020-02-01,60.0,22.0",
        ])
        ds, report = load_dataset(p, LoadOptions(min_performances=2),
                                  with_report=True)
        assert ds.M == 1
        assert report.dropped_athletes == [("b", 1)]

    def test_unparseable_rows_error_with_line_numbers(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", [
            "a,2020-02-01,55.0,20.0",
            "a,not-a-date,54.0,20.1",
        ])
        with pytest.raises(DataError, match="line 3"):
            load_dataset(p)

    def test_missing_confounder_rows_dropped(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", [
            "a,2020-02-01,55.0,20.0,1.2",
            "a,2020-03-01,54.0,20.1,",
            "a,2020-04-01,54.5,20.2,0.8",
        ], header="athlete_id,date,performance,age,temp")
        ds, report = load_dataset(p, LoadOptions(confounders=("temp",)),
                                  with_report=True)
        assert ds.n_total == 2
        assert len(report.dropped_rows) == 1

    def test_age_from_birth_date(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", [
            "a,2020-01-01,55.0,2000-01-01",
            "a,2020-07-01,54.0,2000-01-01",
        ], header="athlete_id,date,performance,birth_date")
        ds = load_dataset(p)
        npt.assert_allclose(ds.age[0], 7305 / 365.25, atol=1e-9)

    def test_multi_season_gap(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", [
            "a,2018-06-01,55.0,20.0",
            "a,2020-06-01,54.0,22.0",
        ])
        ds = load_dataset(p)
        assert ds.seasons_per_athlete[0] == 3
        npt.assert_array_equal(ds.season, [1, 3])

    def test_custom_season_start(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", [
            "a,2020-08-01,55.0,20.0",
            "a,2020-10-15,54.0,20.2",
        ])
        ds = load_dataset(p, LoadOptions(season_start=(10, 1)))
        # August sits in the season that started 2019-10-01
        assert ds.seasons_per_athlete[0] == 2
        npt.assert_array_equal(ds.season, [1, 2])


class TestArchive:
    def test_round_trip_lossless(self, tiny_fit, tmp_path):
        path = persist_draws(tiny_fit, tmp_path / "draws.npz")
        back = restore_draws(path)
        assert back.n_chains == tiny_fit.n_chains
        assert back.n_draws == tiny_fit.n_draws
        for name, arr in tiny_fit.arrays.items():
            npt.assert_array_equal(arr, back.arrays[name], err_msg=name)
        npt.assert_array_equal(back.dataset.y, tiny_fit.dataset.y)
        assert back.config == tiny_fit.config
        assert back.meta == tiny_fit.meta

    def test_truncated_archive_rejected(self, tiny_fit, tmp_path):
        path = persist_draws(tiny_fit, tmp_path / "draws.npz")
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(ArchiveError):
            restore_draws(path)

    def test_schema_version_mismatch_refused(self, tiny_fit, tmp_path):
        path = persist_draws(tiny_fit, tmp_path / "draws.npz")
        with np.load(path) as data:
            payload = {k: data[k] for k in data.files}
        payload["schema_version"] = np.array(999, dtype=np.int64)
        with open(path, "wb") as fh:
            np.savez(fh, **payload)
        with pytest.raises(ArchiveError, match="version"):
            restore_draws(path)

    def test_not_an_archive(self, tmp_path):
        p = tmp_path / "x.npz"
        p.write_bytes(b"junk")
        with pytest.raises(ArchiveError):
            restore_draws(p)

    def test_size_scales_linearly_in_draws(self, tiny_fit, tmp_path):
        def sized(n):
            arrays = {k: np.repeat(v, (n + tiny_fit.n_draws - 1)
                                   // tiny_fit.n_draws, axis=1)[:, :n]
                      for k, v in tiny_fit.arrays.items()}
            d = PosteriorDraws(arrays=arrays, dataset=tiny_fit.dataset,
                               config=tiny_fit.config, meta=tiny_fit.meta)
            p = persist_draws(d, tmp_path / f"d{n}.npz")
            return p.stat().st_size

        s100, s1000 = sized(100), sized(1000)
        ratio = s1000 / s100
        assert 8.0 < ratio < 12.0

    def test_byte_identical_for_identical_runs(self, tmp_path):
        design = SimDesign(M=2, seed=41)
        ds, _ = generate_dataset(design, np.random.default_rng(41))
        cfg = PriorConfig.for_dataset(ds)
        cc = ChainConfig(iterations=20, burn_in=8, thin=3, chains=1, seed=4)
        digests = []
        for k in range(2):
            draws = run_chain(ds, cfg, cc)
            p = persist_draws(draws, tmp_path / f"r{k}.npz")
            digests.append(hashlib.sha256(p.read_bytes()).hexdigest())
        assert digests[0] == digests[1]


class TestConfigAndManifest:
    def test_read_config_sections(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"prior": {"d": 3}, "chain": {"thin": 2}}))
        cfg = read_config(p)
        assert cfg["prior"]["d"] == 3

    def test_unknown_section_rejected(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"priors": {}}))
        with pytest.raises(DataError):
            read_config(p)

    def test_invalid_json_rejected(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("{not json")
        with pytest.raises(DataError):
            read_config(p)

    def test_manifest_contents(self, tmp_path):
        data = tmp_path / "in.csv"
        data.write_text("athlete_id,date,performance,age\n")
        out = write_manifest(tmp_path / "manifest.json", [data],
                             PriorConfig(a_bar=20.0),
                             {"seed": 7, "chains": 2})
        manifest = json.loads(out.read_text())
        assert manifest["chain"]["seed"] == 7
        assert manifest["inputs"][0]["sha256"] == hashlib.sha256(
            data.read_bytes()).hexdigest()
        assert "config_hash" in manifest and "created_utc" in manifest


class TestCli:
    def run_pipeline(self, tmp_path, fit_args=()):
        sim_dir = tmp_path / "sim"
        rc = cli.main(["simulate", "--out", str(sim_dir), "-M", "4",
                       "--seed", "3"])
        assert rc == 0
        fit_dir = tmp_path / "fit"
        rc = cli.main(["fit", "--input", str(sim_dir / "dataset.csv"),
                       "--out", str(fit_dir), "--iters", "60", "--burnin",
                       "20", "--thin", "4", "--chains", "2", "--seed", "9",
                       *fit_args])
        assert rc == 0
        return sim_dir, fit_dir

    def test_simulate_fit_summarize_diagnose(self, tmp_path, capsys):
        sim_dir, fit_dir = self.run_pipeline(tmp_path)
        assert (fit_dir / "draws.npz").exists()
        manifest = json.loads((fit_dir / "manifest.json").read_text())
        assert manifest["chain"]["chains"] == 2

        sum_dir = tmp_path / "summ"
        rc = cli.main(["summarize", "--draws", str(fit_dir / "draws.npz"),
                       "--out", str(sum_dir)])
        assert rc == 0
        pop = (sum_dir / "population_within_season.csv").read_text().splitlines()
        assert pop[0] == "z,median,lower,upper"
        first = pop[1].split(",")
        last = pop[-1].split(",")
        assert [float(v) for v in first[1:]] == [0.0, 0.0, 0.0]
        assert [float(v) for v in last[1:]] == [0.0, 0.0, 0.0]
        assert (sum_dir / "population_age_curve.csv").exists()
        assert (sum_dir / "athlete_summary.csv").exists()
        assert (sum_dir / "athlete_sim00000_trend.csv").exists()

        rc = cli.main(["diagnose", "--draws", str(fit_dir / "draws.npz"),
                       "--out", str(tmp_path / "diag.csv")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "PSRF" in out and "sigma2_m" in out
        diag = (tmp_path / "diag.csv").read_text().splitlines()
        assert diag[0] == "parameter,psrf,ess,n_components"

    def test_archive_draw_count(self, tmp_path):
        _, fit_dir = self.run_pipeline(tmp_path)
        draws = restore_draws(fit_dir / "draws.npz")
        assert draws.n_chains == 2
        assert draws.n_draws == 10

    def test_summarize_empty_archive_fails(self, tmp_path, capsys):
        design = SimDesign(M=2, seed=51)
        ds, _ = generate_dataset(design, np.random.default_rng(51))
        cfg = PriorConfig.for_dataset(ds)
        draws = run_chain(ds, cfg, ChainConfig(iterations=5, burn_in=5,
                                               thin=1, chains=1))
        path = persist_draws(draws, tmp_path / "empty.npz")
        rc = cli.main(["summarize", "--draws", str(path), "--out",
                       str(tmp_path / "s")])
        assert rc != 0
        assert "error" in capsys.readouterr().err

    def test_fit_bad_input_fails(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("athlete_id,date,performance,age\nx,nope,1,2\n")
        rc = cli.main(["fit", "--input", str(bad), "--out",
                       str(tmp_path / "f")])
        assert rc == 1
        assert "error" in capsys.readouterr().err

    def test_simulate_roundtrip_consistency(self, tmp_path):
        sim_dir = tmp_path / "sim"
        cli.main(["simulate", "--out", str(sim_dir), "-M", "3", "--seed", "8"])
        ds = load_dataset(sim_dir / "dataset.csv")
        design = SimDesign(M=3, seed=8)
        direct, _ = generate_dataset(
            design, np.random.default_rng(np.random.SeedSequence(8)))
        assert ds.n_total == direct.n_total
        npt.assert_array_equal(ds.season, direct.season)
        npt.assert_allclose(ds.z, direct.z, atol=1.5 / 365.25)
        npt.assert_allclose(ds.y, direct.y, atol=5e-7)

    def test_pool_adjustment_export(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", [
            "a,2020-02-01,55.0,20.0,25",
            "a,2020-03-01,56.0,20.1,50",
            "a,2020-05-01,55.5,20.3,50",
            "b,2020-02-01,60.0,22.0,25",
            "b,2020-04-01,61.0,22.2,50",
        ], header="athlete_id,date,performance,age,pool_length")
        fit_dir = tmp_path / "fit"
        rc = cli.main(["fit", "--input", str(p), "--out", str(fit_dir),
                       "--iters", "30", "--burnin", "10", "--thin", "4",
                       "--chains", "1", "--seed", "2"])
        assert rc == 0
        sum_dir = tmp_path / "s"
        rc = cli.main(["summarize", "--draws", str(fit_dir / "draws.npz"),
                       "--out", str(sum_dir)])
        assert rc == 0
        lines = (sum_dir / "adjusted_performances.csv").read_text().splitlines()
        assert lines[0] == "athlete_id,t,performance,adjusted_to_50m"
        assert len(lines) == 6
