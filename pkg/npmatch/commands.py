# npmatch/commands.py
"""
Command handlers behind the CLI.

Every command returns the same response envelope::

    {"command": <name>, "status": "success" | "error", "output": {...} | None,
     "error": None | {"type", "message", "details"}}

so the CLI stays a thin argparse shell and tests can call the handlers directly.
"""

import csv
import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional

from npmatch.checkpoint import load_checkpoint, save_checkpoint
from npmatch.config import RunConfigFile, load_run_config, parse_override
from npmatch.datagen import Dataset, export_csv, gaussian_blobs, split, two_moons
from npmatch.divergence_check import corrupted_formulas, run_divergence_check
from npmatch.errors import NpMatchError
from npmatch.gradcheck import run_grad_check
from npmatch.ssl_pipeline import METRIC_FIELDS, compare_runs, evaluate_on_dataset, train

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
REPORT_FILE = "report.json"
CHECKPOINT_FILE = "checkpoint.json"


def build_dataset(cfg: RunConfigFile, data_seed: Optional[int] = None) -> Dataset:
    """Generate and split the dataset described by a run config."""
    seed = cfg.data_seed if data_seed is None else data_seed
    if cfg.dataset == "two_moons":
        dataset = two_moons(cfg.n_samples, cfg.noise, seed)
    else:
        dataset = gaussian_blobs(cfg.n_samples, cfg.num_classes, cfg.blob_spread, seed, cfg.blob_radius)
    return split(dataset, cfg.labels_per_class, cfg.test_fraction, seed)


def cli_overrides(params: Dict[str, Any]) -> Dict[str, Any]:
    """--set pairs, then the dedicated --seed / --out-dir flags on top."""
    overrides: Dict[str, Any] = {}
    for pair in params.get("overrides") or []:
        overrides.update(parse_override(pair))
    for key in ("seed", "out_dir"):
        if params.get(key) is not None:
            overrides[key] = params[key]
    return overrides


def resolve_run_config(params: Dict[str, Any]) -> RunConfigFile:
    """defaults < --preset < --config file < command-line overrides."""
    return load_run_config(params.get("config"), params.get("preset"), cli_overrides(params))


class AbstractCommand(ABC):
    """Base class for commands: subclasses implement run(), execute() builds the envelope."""

    name = "command"

    @abstractmethod
    def run(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """The command's own logic; returns the output payload."""

    def execute(self, params: Dict[str, Any]) -> Dict[str, Any]:
        try:
            output = self.run(params)
        except NpMatchError as e:
            logger.error(f"[{self.name}] failed: {e.message}")
            return self._error_response(e.to_dict())
        except Exception as e:
            logger.error(f"[{self.name}] unexpected failure: {e}", exc_info=True)
            return self._error_response({"type": "runtime_error", "message": str(e), "details": {}})
        return {"command": self.name, "status": "success", "output": output, "error": None}

    def _error_response(self, error: Dict[str, Any]) -> Dict[str, Any]:
        return {"command": self.name, "status": "error", "output": None, "error": error}


def exit_code(response: Dict[str, Any]) -> int:
    """0 iff the command succeeded and every check it ran passed."""
    if response.get("status") != "success":
        return 1
    output = response.get("output") or {}
    return 0 if output.get("passed", True) else 1


class TrainCommand(AbstractCommand):
    name = "train"

    def run(self, params: Dict[str, Any]) -> Dict[str, Any]:
        cfg = resolve_run_config(params)
        dataset = build_dataset(cfg)
        report = train(cfg.train_config(), dataset)

        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / METRICS_FILE
        with open(metrics_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=METRIC_FIELDS)
            writer.writeheader()
            writer.writerows(report.metrics)

        summary = report.to_dict()
        summary["config"] = cfg.model_dump(exclude={"out_dir"})
        report_path = out_dir / REPORT_FILE
        with open(report_path, "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)

        checkpoint_path = save_checkpoint(
            out_dir / CHECKPOINT_FILE,
            report.student,
            report.shadow,
            report.banks,
            config=cfg.model_dump(exclude={"out_dir"}),
            metadata={"final": report.final.to_dict(), "iterations": report.optimizer.iteration},
        )
        logger.info(f"[{self.name}] artifacts written to {out_dir}")
        return {
            "out_dir": str(out_dir),
            "artifacts": {
                "metrics": str(metrics_path),
                "report": str(report_path),
                "checkpoint": str(checkpoint_path),
            },
            "final": report.final.to_dict(),
        }


class EvalCommand(AbstractCommand):
    name = "eval"

    def run(self, params: Dict[str, Any]) -> Dict[str, Any]:
        bundle = load_checkpoint(params["checkpoint"])
        if params.get("config") is not None or params.get("preset") is not None:
            cfg = resolve_run_config(params)
        else:
            cfg = load_run_config(overrides={**bundle.config, **cli_overrides(params)})
        dataset = build_dataset(cfg)
        banks = [bundle.banks[name] for name in sorted(bundle.banks)]
        evaluation = evaluate_on_dataset(bundle.teacher, dataset, banks, cfg.train_config())
        return {
            "checkpoint": str(params["checkpoint"]),
            "evaluation": evaluation.to_dict(),
            "recorded": bundle.metadata.get("final"),
        }


class CheckDivergenceCommand(AbstractCommand):
    name = "check-divergence"

    def run(self, params: Dict[str, Any]) -> Dict[str, Any]:
        report = run_divergence_check(
            dims=params.get("dims") or (1, 2, 3, 4),
            trials=params.get("trials", 50),
            samples=params.get("samples", 1_000_000),
            seed=params.get("seed") or 0,
            formulas=corrupted_formulas() if params.get("corrupt_formula") else None,
        )
        return report.to_dict()


class GradCheckCommand(AbstractCommand):
    name = "grad-check"

    def run(self, params: Dict[str, Any]) -> Dict[str, Any]:
        return run_grad_check(seed=params.get("seed") or 0, trials=params.get("trials", 20)).to_dict()


class CompareCommand(AbstractCommand):
    name = "compare"

    def run(self, params: Dict[str, Any]) -> Dict[str, Any]:
        cfg = resolve_run_config(params)
        seeds: List[int] = list(params.get("seeds") or range(5))
        report = compare_runs(
            cfg.train_config(),
            lambda seed: build_dataset(cfg, data_seed=seed),
            seeds,
        )
        return report.to_dict()


class ExportDataCommand(AbstractCommand):
    name = "export-data"

    def run(self, params: Dict[str, Any]) -> Dict[str, Any]:
        cfg = resolve_run_config(params)
        dataset = build_dataset(cfg)
        path = export_csv(dataset, params.get("path") or Path(cfg.out_dir) / "dataset.csv")
        return {"path": str(path), "points": len(dataset)}


COMMANDS = {
    command.name: command
    for command in (
        TrainCommand(),
        EvalCommand(),
        CheckDivergenceCommand(),
        GradCheckCommand(),
        CompareCommand(),
        ExportDataCommand(),
    )
}
