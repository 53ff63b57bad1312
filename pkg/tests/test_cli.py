import json
import subprocess
import sys

import pytest
import yaml

from riesense import cli
from riesense.metrics import canonical_json
from riesense.model import RieModel

TINY = {
    "seed": 2,
    "data": {"counts_per_class": 8, "channels": 2, "timesteps": 64},
    "model": {"patch": 16, "model_dim": 8, "heads": 2, "ff_dim": 8},
    "train": {"epochs": 1, "batch_size": 16},
    "augment": {"latent_dim": 4},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def run(*args):
    return cli.main([str(a) for a in args])


class TestCommands:
    def test_gen_data(self, config, tmp_path):
        out = tmp_path / "data"
        assert run("gen-data", "--config", config, "--out", out) == 0
        assert (out / "dataset.sglb").exists()
        resolved = yaml.safe_load((out / "config.resolved.yaml").read_text())
        assert resolved["seed"] == 2 and resolved["data"]["counts_per_class"] == 8

    def test_augment(self, config, tmp_path):
        assert run("augment", "--config", config, "--out", tmp_path) == 0
        info = json.loads((tmp_path / "augment.json").read_text())
        assert info["synthetic"] == 2 * 6 * 6

    def test_train_eval_report(self, config, tmp_path):
        assert run("train", "--config", config, "--out", tmp_path, "--epochs", 2) == 0
        train = json.loads((tmp_path / "train.json").read_text())
        assert len(train["train_log"]) == 2
        assert run("eval", "--config", config, "--out", tmp_path) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["schema_version"] == 1 and report["kind"] == "evaluation"
        assert run("report", tmp_path / "report.json", "--out", tmp_path / "txt") == 0
        assert "shifted test set" in (tmp_path / "txt" / "report.txt").read_text()

    def test_flags(self, config, tmp_path):
        assert run("train", "--config", config, "--out", tmp_path, "--seed", 5, "--ablation",
                   "euclidean-attention", "--no-augment") == 0
        resolved = yaml.safe_load((tmp_path / "config.resolved.yaml").read_text())
        assert resolved["seed"] == 5 and resolved["ablation"] == "euclidean-attention"
        assert resolved["augment"]["enabled"] is False
        train = json.loads((tmp_path / "train.json").read_text())
        assert train["run"]["variant"] == "euclidean" and train["augmentation"]["kind"] == "none"

    def test_sweep(self, config, tmp_path):
        assert run("train", "--config", config, "--out", tmp_path, "--sweep-c", "0.5,2") == 0
        sweep = json.loads((tmp_path / "sweep.json").read_text())
        assert [r["initial_curvature"] for r in sweep["rows"]] == [0.5, 2.0]

    def test_ablate(self, config, tmp_path):
        assert run("ablate", "--config", config, "--out", tmp_path) == 0
        grid = json.loads((tmp_path / "ablation.json").read_text())
        assert len(grid["rows"]) == 8
        assert "literal_max_uniform_deviation" in (tmp_path / "ablation.txt").read_text()

    def test_gradcheck(self, tmp_path, capsys):
        assert run("gradcheck", "--out", tmp_path) == 0
        assert "worst relative error" in capsys.readouterr().out


def test_train_eval_deterministic(config, tmp_path):
    reports = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run("train", "--config", config, "--out", out) == 0
        assert run("eval", "--config", config, "--out", out) == 0
        reports.append(json.loads((out / "report.json").read_text()))
    assert canonical_json(reports[0]) == canonical_json(reports[1])


class TestExitCodes:
    def test_bad_config_value(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({"train": {"epochs": 0}}))
        assert run("train", "--config", path, "--out", tmp_path) == cli.EXIT_CONFIG

    def test_missing_config(self, tmp_path):
        assert run("gen-data", "--config", tmp_path / "nope.yaml", "--out", tmp_path) == cli.EXIT_CONFIG

    def test_bad_epochs_flag(self, config, tmp_path):
        assert run("train", "--config", config, "--out", tmp_path, "--epochs", 0) == cli.EXIT_CONFIG

    def test_bad_sweep_values(self, config, tmp_path):
        assert run("train", "--config", config, "--out", tmp_path, "--sweep-c", "a,b") == cli.EXIT_CONFIG

    def test_corrupt_dataset(self, tmp_path):
        data = tmp_path / "broken.sglb"
        data.write_bytes(b"SGLB\x01")
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump({**TINY, "data": {**TINY["data"], "path": str(data)}}))
        assert run("train", "--config", path, "--out", tmp_path) == cli.EXIT_DATA

    def test_missing_checkpoint(self, config, tmp_path):
        assert run("eval", "--config", config, "--out", tmp_path) == cli.EXIT_DATA

    def test_bad_report(self, tmp_path):
        bad = tmp_path / "r.json"
        bad.write_text("{not json")
        assert run("report", bad, "--out", tmp_path) == cli.EXIT_DATA

    def test_numerical_failure(self, config, tmp_path, monkeypatch):
        real = RieModel.loss_and_grad

        def broken(self, *args, **kwargs):
            loss, grads, logits = real(self, *args, **kwargs)
            return float("inf"), grads, logits

        monkeypatch.setattr(RieModel, "loss_and_grad", broken)
        assert run("train", "--config", config, "--out", tmp_path) == cli.EXIT_NUMERIC


def test_module_entry_point(tmp_path, config):
    proc = subprocess.run(
        [sys.executable, "-m", "riesense.cli", "gen-data", "--config", str(config), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "wrote 48 windows" in proc.stdout
    bad = subprocess.run([sys.executable, "-m", "riesense.cli", "train", "--config", str(tmp_path / "x.yaml")],
                         capture_output=True, text=True, cwd=tmp_path)
    assert bad.returncode == 2 and "config error" in bad.stderr
