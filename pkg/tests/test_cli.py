import csv
import json
import subprocess
import sys

import pytest

from sggm.cli import main

SMALL = {"n_samples": 20, "trials": 1, "sizes": [6], "feature_dims": [3], "feature_graph_size": 6,
         "diffusion": {"T": 2.0, "M": 20, "kind": "uniform"},
         "train": {"steps": 10, "lr_grid": [0.01], "t_max": 2.0, "hidden": 8, "embed_dim": 4},
         "generator": {"kind": "regular", "n": 6, "d": 2, "feature_dim": 3}, "eps_mc": 2}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


class TestExitCodes:
    def test_missing_config_is_usage_error(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
        assert "usage" in capsys.readouterr().err

    def test_bad_subcommand(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_unknown_preset(self, tmp_path):
        assert main(["run", "--preset", "huge", "--out", str(tmp_path)]) == 2

    def test_unwritable_out(self, tmp_path, config):
        blocker = tmp_path / "f"
        blocker.write_text("")
        assert main(["run", "--config", config, "--out", str(blocker / "x")]) == 2

    def test_missing_dataset(self, tmp_path, config):
        assert main(["train", "--config", config, "--out", str(tmp_path)]) == 2

    def test_runtime_failure(self, tmp_path, config):
        # a corrupt dataset file is a runtime failure, not a usage error
        (tmp_path / "dataset.json").write_text("{not json")
        assert main(["train", "--config", config, "--out", str(tmp_path)]) == 1

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "experiment" in capsys.readouterr().out


class TestCommands:
    def test_chained_steps(self, tmp_path, config, capsys):
        out = str(tmp_path / "run")
        for cmd in ("gen-data", "train", "sample", "eval"):
            assert main([cmd, "--config", config, "--out", out, "--seed", "4"]) == 0
        for name in ("dataset.json", "split.json", "phi.json", "history.csv", "ensemble.json", "eval.csv"):
            assert (tmp_path / "run" / name).exists()
        with open(tmp_path / "run" / "eval.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["seed"] == "4" and float(rows[0]["degree_mmd"]) >= 0
        assert main(["bounds", "--config", config, "--out", out, "--seed", "4"]) == 0
        # structure-only runs have no feature score error, so no (T, M) selection
        assert "selection needs positive score errors" in capsys.readouterr().out

    def test_bounds_from_inputs(self, tmp_path, capsys):
        inputs = {"n": 10, "f": 5, "lipschitz": 1.0, "h_x": 50.0, "h_a": 90.0, "sigma_x2": 4.0,
                  "sigma_a2": 16.0, "eps_x2": 0.5, "eps_a2": 0.5, "T": 10.0, "M": 100}
        path = tmp_path / "in.json"
        path.write_text(json.dumps(inputs))
        assert main(["bounds", "--inputs", str(path)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "paradigm,scheme,prior,score,disc_1,disc_2,total"
        assert len(out) == 10 and out[-1].startswith("# selected T=")

    def test_bad_inputs(self, tmp_path):
        path = tmp_path / "in.json"
        path.write_text(json.dumps({"n": 3}))
        assert main(["bounds", "--inputs", str(path)]) == 2

    def test_run(self, tmp_path, config, capsys):
        assert main(["run", "--config", config, "--out", str(tmp_path)]) == 0
        assert (tmp_path / "manifest.json").exists()

    def test_experiment(self, tmp_path, config, capsys):
        assert main(["experiment", "feature-scaling", "--config", config, "--out", str(tmp_path)]) == 0
        with open(tmp_path / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 and all(r["experiment"] == "feature_scaling" for r in rows)

    def test_presets(self, capsys):
        assert main(["presets"]) == 0
        names = [line.split(":")[0] for line in capsys.readouterr().out.splitlines()]
        assert names == ["desk", "paper-appendix", "paper-main"]

    def test_module_entry(self):
        proc = subprocess.run([sys.executable, "-m", "sggm", "presets"], capture_output=True, text=True)
        assert proc.returncode == 0 and "paper-main" in proc.stdout
