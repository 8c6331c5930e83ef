# tests/test_commands.py
import csv
import json

import pytest
from unittest.mock import patch

from npmatch.cli import build_parser, main
from npmatch.commands import COMMANDS, exit_code

SMALL_RUN = """\
# two moons, a few iterations
n_samples=200
total_iterations=10
log_interval=5
batch_size=4
unlabeled_ratio=2
feature_dim=8
latent_dim=8
hidden_dim=8
bank_capacity=16
num_samples=3
"""


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_RUN)
    return path


def _run(argv, capsys):
    code = main([str(part) for part in argv])
    return code, json.loads(capsys.readouterr().out)


class TestTrainAndEval:
    """train writes its artifacts; eval reproduces the recorded evaluation"""

    def test_train_writes_artifacts(self, run_config, tmp_path, capsys):
        """metrics.csv, report.json and checkpoint.json appear in the output directory"""
        out = tmp_path / "out"
        code, response = _run(["train", "--config", run_config, "--out-dir", out], capsys)
        assert code == 0
        assert response["status"] == "success"
        with open(out / "metrics.csv") as f:
            rows = list(csv.DictReader(f))
        assert [row["iteration"] for row in rows] == ["5", "10"]
        report = json.loads((out / "report.json").read_text())
        assert report["iterations"] == 10
        assert "out_dir" not in report["config"]
        assert (out / "checkpoint.json").is_file()

    def test_eval_matches_training_report(self, run_config, tmp_path, capsys):
        """Evaluating the saved checkpoint gives the final training evaluation"""
        out = tmp_path / "out"
        _run(["train", "--config", run_config, "--out-dir", out], capsys)
        code, response = _run(["eval", out / "checkpoint.json"], capsys)
        assert code == 0
        assert response["output"]["evaluation"] == response["output"]["recorded"]

    def test_seed_override_changes_only_the_seed(self, run_config, tmp_path, capsys):
        """--seed is recorded and nothing else in the config moves"""
        _run(["train", "--config", run_config, "--out-dir", tmp_path / "a"], capsys)
        _run(["train", "--config", run_config, "--out-dir", tmp_path / "b", "--seed", "3"], capsys)
        a = json.loads((tmp_path / "a" / "report.json").read_text())["config"]
        b = json.loads((tmp_path / "b" / "report.json").read_text())["config"]
        assert b["seed"] == 3
        assert {k: v for k, v in a.items() if k != "seed"} == {k: v for k, v in b.items() if k != "seed"}

    def test_set_override(self, run_config, tmp_path, capsys):
        """--set key=value reaches the config"""
        out = tmp_path / "out"
        _run(["train", "--config", run_config, "--out-dir", out, "--set", "beta=0.5"], capsys)
        assert json.loads((out / "report.json").read_text())["config"]["beta"] == 0.5

    def test_missing_config_writes_nothing(self, tmp_path, capsys):
        """A missing config file exits 1 before any output is created"""
        out = tmp_path / "out"
        code, response = _run(["train", "--config", tmp_path / "absent.cfg", "--out-dir", out], capsys)
        assert code == 1
        assert response["error"]["type"] == "invalid_config"
        assert response["error"]["details"]["key"] == "config"
        assert not out.exists()

    def test_unknown_key_is_reported(self, tmp_path, capsys):
        """Unknown config keys name the key"""
        path = tmp_path / "bad.cfg"
        path.write_text("tau=0.5\n")
        code, response = _run(["train", "--config", path, "--out-dir", tmp_path / "out"], capsys)
        assert code == 1
        assert response["error"]["details"]["key"] == "tau"

    def test_corrupt_checkpoint(self, tmp_path, capsys):
        """eval of a broken checkpoint exits 1 with a structured error"""
        path = tmp_path / "checkpoint.json"
        path.write_text('{"format": "something-else"}')
        code, response = _run(["eval", path], capsys)
        assert code == 1
        assert response["error"]["type"] == "corrupt_checkpoint"

    @pytest.mark.parametrize("section", ["banks", "config"])
    def test_checkpoint_section_of_wrong_type(self, run_config, tmp_path, capsys, section):
        """A list where an object belongs is a corrupt checkpoint, not a runtime error"""
        out = tmp_path / "out"
        _run(["train", "--config", run_config, "--out-dir", out], capsys)
        path = out / "checkpoint.json"
        document = json.loads(path.read_text())
        document[section] = ["oops"]
        path.write_text(json.dumps(document))
        code, response = _run(["eval", path], capsys)
        assert code == 1
        assert response["error"]["type"] == "corrupt_checkpoint"
        assert response["error"]["details"]["section"] == section

    def test_unexpected_failure_is_wrapped(self, run_config, tmp_path):
        """Exceptions outside the error hierarchy become runtime_error responses"""
        with patch("npmatch.commands.train", side_effect=RuntimeError("boom")):
            response = COMMANDS["train"].execute({"config": str(run_config), "out_dir": str(tmp_path)})
        assert response["status"] == "error"
        assert response["error"] == {"type": "runtime_error", "message": "boom", "details": {}}


class TestChecks:
    """check-divergence and grad-check exit codes"""

    def test_zero_trials_pass(self, capsys):
        """--trials 0 reports an empty, passing check"""
        code, response = _run(["check-divergence", "--trials", "0"], capsys)
        assert code == 0
        assert response["output"]["passed"] is True

    def test_corrupted_formula_exits_one(self, capsys):
        """The negative control must fail"""
        code, response = _run(
            ["check-divergence", "--trials", "2", "--samples", "20000", "--dims", "2", "--corrupt-formula"], capsys
        )
        assert code == 1
        assert response["status"] == "success"
        assert response["output"]["passed"] is False

    def test_grad_check(self, capsys):
        """One trial of the gradient suite passes"""
        code, response = _run(["grad-check", "--trials", "1", "--seed", "4"], capsys)
        assert code == 0
        assert response["output"]["seed"] == 4


class TestCompareAndExport:
    """compare and export-data"""

    def test_compare_two_seeds(self, run_config, tmp_path, capsys):
        """Both arms report one accuracy per seed"""
        code, response = _run(
            ["compare", "--config", run_config, "--out-dir", tmp_path, "--seeds", "0", "1"], capsys
        )
        assert code == 0
        output = response["output"]
        assert output["seeds"] == [0, 1]
        assert len(output["npmatch"]["accuracies"]) == 2
        assert len(output["supervised"]["accuracies"]) == 2

    def test_export_data(self, run_config, tmp_path, capsys):
        """The dataset is written to the requested CSV path"""
        path = tmp_path / "data.csv"
        code, response = _run(["export-data", "--config", run_config, "--path", path], capsys)
        assert code == 0
        assert response["output"]["points"] == 200
        with open(path) as f:
            assert len(list(csv.DictReader(f))) == 200


class TestCli:
    """Argument parsing and exit codes"""

    def test_subcommands(self):
        """Every command has a parser"""
        parser = build_parser()
        for name in COMMANDS:
            args = ["eval", "ckpt.json"] if name == "eval" else [name]
            assert parser.parse_args(args).command == name

    def test_unknown_preset_is_rejected_by_argparse(self):
        """Preset names are validated at parse time"""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["train", "--preset", "mnist"])

    def test_exit_code(self):
        """0 only for successful, passing responses"""
        assert exit_code({"status": "success", "output": {}}) == 0
        assert exit_code({"status": "success", "output": {"passed": False}}) == 1
        assert exit_code({"status": "error", "output": None}) == 1


class TestDeterminism:
    """Repeated runs with one seed"""

    def test_metrics_csv_is_byte_identical(self, run_config, tmp_path, capsys):
        """train twice with the same seed writes the same metrics.csv bytes"""
        for name in ("first", "second"):
            _run(["train", "--config", run_config, "--out-dir", tmp_path / name, "--seed", "2"], capsys)
        first = (tmp_path / "first" / "metrics.csv").read_bytes()
        assert first == (tmp_path / "second" / "metrics.csv").read_bytes()
