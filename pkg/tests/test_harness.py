import csv
import json

import numpy as np
import pytest

from sggm.errors import ConfigError
from sggm.graphs import spectral_norm
from sggm.harness import (FEATURE_SCALING, PRESETS, STRUCTURE_SCALING, SUMMARY_COLUMNS, TRIAL_COLUMNS,
                          ExperimentConfig, load_config, make_dataset, preset, run_experiment, run_pipeline,
                          save_experiment, sha256_file, split_indices, version_string)
from sggm.diffusion import FEATURE_ONLY, JOINT, STRUCTURE_ONLY


def _small(**kw):
    base = {"n_samples": 20, "trials": 1, "sizes": [6], "feature_dims": [3], "feature_graph_size": 6,
            "diffusion": {"T": 2.0, "M": 20, "kind": "uniform"},
            "train": {"steps": 20, "lr_grid": [0.01], "t_max": 2.0, "hidden": 8, "embed_dim": 4},
            "generator": {"kind": "regular", "n": 6, "d": 2, "feature_dim": 3}, "eps_mc": 2}
    base.update(kw)
    return ExperimentConfig().merged(base)


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.n_samples == 200 and cfg.split == (0.6, 0.2, 0.2) and cfg.trials == 5
        assert cfg.grid.to_dict() == {"T": 10.0, "M": 200, "kind": "uniform"}

    @pytest.mark.parametrize("kw", [dict(split=(0.5, 0.2, 0.2)), dict(trials=0), dict(n_samples=5),
                                    dict(experiment="other"), dict(scheme="rk4")])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)

    def test_dict_round_trip(self):
        cfg = _small(master_seed=9)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
        assert cfg.config_hash() == ExperimentConfig.from_dict(cfg.to_dict()).config_hash()
        assert cfg.config_hash() != _small(master_seed=10).config_hash()

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"epochs": 3})

    def test_presets(self):
        assert set(PRESETS) == {"desk", "paper-main", "paper-appendix"}
        main, app = preset("paper-main"), preset("paper-appendix")
        assert (main.horizon, main.steps) == (100.0, 500)
        assert (app.horizon, app.steps) == (50.0, 500)
        assert app.grid.deltas[0] == pytest.approx(0.1)
        with pytest.raises(ConfigError):
            preset("huge")

    def test_load_config(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"trials": 2, "train": {"steps": 7}}))
        cfg = load_config(path)
        assert cfg.trials == 2 and cfg.train.steps == 7 and cfg.train.batch == 16
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")
        (tmp_path / "bad.json").write_text("{trials: 2")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.json")

    def test_version(self):
        assert version_string().startswith("v0.1.0")


class TestData:
    def test_split_determinism(self):
        a = split_indices(200, 3)
        b = split_indices(200, 3)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)
        assert [len(p) for p in a] == [120, 40, 40]
        assert sorted(np.concatenate(a).tolist()) == list(range(200))
        assert not np.array_equal(split_indices(200, 4)[0], a[0])

    def test_frozen_channels(self):
        cfg = _small()
        d = make_dataset(cfg.generator, STRUCTURE_ONLY, 5, 0)
        assert all(np.array_equal(x, d.x[0]) for x in d.x)
        assert not all(np.array_equal(a, d.a[0]) for a in d.a)
        d = make_dataset(cfg.generator, FEATURE_ONLY, 5, 0)
        assert all(np.array_equal(a, d.a[0]) for a in d.a)
        d = make_dataset(cfg.generator, JOINT, 5, 0)
        assert not all(np.array_equal(x, d.x[0]) for x in d.x)

    def test_normalized_features(self):
        d = make_dataset(_small().generator, FEATURE_ONLY, 5, 0, normalize=True)
        assert max(spectral_norm(x) for x in d.x) <= 1 + 1e-6


@pytest.fixture(scope="module")
def structure_table():
    return run_experiment(_small(), STRUCTURE_SCALING)


@pytest.fixture(scope="module")
def feature_table():
    return run_experiment(_small(), FEATURE_SCALING)


class TestExperiments:
    def test_structure_rows(self, structure_table):
        assert len(structure_table.rows) == 2
        assert {r["generator"] for r in structure_table.rows} == {"regular", "barabasi_albert"}
        for r in structure_table.rows:
            assert r["status"] == "ok" and r["seed"] == 0
            assert r["metric"] == r["degree_mmd"] and r["bound"] > 0
            assert r["version"] and len(r["config_hash"]) == 12
        assert len(structure_table.summary) == 2

    def test_feature_rows(self, feature_table):
        assert len(feature_table.rows) == 2
        assert {r["normalize"] for r in feature_table.rows} == {0, 1}
        for r in feature_table.rows:
            assert r["metric"] == r["feature_kl"]

    def test_sigma2_is_raw_feature_norm(self):
        # unnormalized structure runs report ||X*||^2 of the raw features
        cfg = _small()
        table = run_experiment(cfg, STRUCTURE_SCALING)
        for r in table.rows:
            gen = cfg.generator.__class__(**{**cfg.generator.to_dict(), "kind": r["generator"], "n": r["n"]})
            x_star = make_dataset(gen, STRUCTURE_ONLY, cfg.n_samples, r["seed"]).x[0]
            assert r["sigma2"] == pytest.approx(spectral_norm(x_star) ** 2, rel=1e-12)

    def test_trial_seeds(self):
        table = run_experiment(_small(trials=2, master_seed=5), FEATURE_SCALING)
        assert sorted({r["seed"] for r in table.rows}) == [5, 6]

    def test_bound_grows_with_n(self):
        table = run_experiment(_small(sizes=[6, 12]), STRUCTURE_SCALING)
        for kind in ("regular", "barabasi_albert"):
            small, large = table.cell(generator=kind, n=6)[0], table.cell(generator=kind, n=12)[0]
            assert large["bound"] > small["bound"]

    def test_failed_trial_recorded(self, monkeypatch):
        import sggm.harness as harness
        from sggm.errors import SamplingError

        def boom(*args, **kw):
            raise SamplingError("non-finite", step=3)
        monkeypatch.setattr(harness, "run_condition", boom)
        table = run_experiment(_small(), STRUCTURE_SCALING)
        assert all(r["status"] == "failed:SamplingError" for r in table.rows)
        assert all(np.isnan(r["metric"]) for r in table.rows)
        assert table.summary[0]["trials_failed"] == 1

    def test_saved_tables(self, structure_table, tmp_path):
        files = save_experiment(structure_table, _small(), tmp_path, STRUCTURE_SCALING)
        assert set(files) == {"config.json", "trials.csv", "summary.csv", "manifest.json"}
        with open(tmp_path / "trials.csv") as fh:
            assert tuple(next(csv.reader(fh))) == TRIAL_COLUMNS
        with open(tmp_path / "summary.csv") as fh:
            assert tuple(next(csv.reader(fh))) == SUMMARY_COLUMNS


class TestPipeline:
    def test_artifacts_and_manifest(self, tmp_path):
        files = run_pipeline(_small(), tmp_path)
        expected = {"config.json", "seeds.json", "phi.json", "history.csv", "ensemble.json", "eval.csv",
                    "bounds.csv", "manifest.json"}
        assert set(files) == expected
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        listed = {e["file"]: e["sha256"] for e in manifest["files"]}
        assert set(listed) == expected - {"manifest.json"}
        for name, digest in listed.items():
            assert sha256_file(tmp_path / name) == digest

    def test_byte_identical_rerun(self, tmp_path):
        run_pipeline(_small(master_seed=3), tmp_path / "a")
        run_pipeline(_small(master_seed=3), tmp_path / "b")
        for name in ("eval.csv", "bounds.csv", "ensemble.json", "phi.json", "seeds.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(ConfigError):
            run_pipeline(_small(), blocker / "sub")
