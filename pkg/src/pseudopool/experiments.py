"""Config-driven experiment harness: seeded runs, baseline comparisons,
component-ablation matrices, and significance summaries.

Configs are YAML (JSON, being a YAML subset, is accepted unchanged). Every
defaulted field is echoed into ``resolved_config.json``, and re-running a
resolved config reproduces all metric files byte-identically.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import training
from .datasets import (
    UNLABELED_SHAPES,
    DatasetSpec,
    generate_splits,
    save_splits,
    spec_from_dict,
    spec_to_dict,
)
from .metrics import welch_t_test
from .training import TrainConfig, train_config_from_dict, train_config_to_dict

logger = logging.getLogger(__name__)

METHODS = ("cpg", "supervised_ce", "supervised_la", "consistency_ssl")
OUTPUT_ROOT_ENV = "PSEUDOPOOL_OUTPUT_ROOT"

SUMMARY_METRICS = ("acc", "macro_f1", "err_rate", "util_rate", "kl")
# Direction of improvement per summary metric (for compare verdicts).
HIGHER_IS_BETTER = {"acc": True, "macro_f1": True, "err_rate": False, "util_rate": True, "kl": False}

ABLATION_ROWS = (
    # (label, use_aux_branch, use_cycle, use_synthesis)
    ("none", False, False, False),
    ("aux", True, False, False),
    ("aux+synth", True, False, True),
    ("aux+cycle", True, True, False),
    ("full", True, True, True),
)


class ConfigError(ValueError):
    def __init__(self, fieldname: str, message: str):
        super().__init__(f"{fieldname}: {message}")
        self.fieldname = fieldname


@dataclass
class ExperimentConfig:
    method: str
    dataset: DatasetSpec
    train: TrainConfig
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "runs/experiment"
    scenarios: list[str] = field(default_factory=lambda: ["consistent", "inverse", "arbitrary"])

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {METHODS}")
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed is required")
        for scenario in self.scenarios:
            if scenario not in UNLABELED_SHAPES:
                raise ConfigError("scenarios", f"{scenario!r} is not an unlabeled shape")
        self.dataset.validate()
        self.train.validate()


DATASET_REQUIRED = ("num_classes", "feature_dim", "n_max", "m_max")


def _check_keys(section: dict, allowed: set[str], prefix: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{prefix}{key}", "unknown field")


def parse_config(data: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a raw mapping, naming bad fields."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    allowed_top = {"method", "dataset", "train", "seeds", "output_dir", "scenarios"}
    _check_keys(data, allowed_top, "")
    if "method" not in data:
        raise ConfigError("method", "field is required")
    if "dataset" not in data or not isinstance(data["dataset"], dict):
        raise ConfigError("dataset", "mapping is required")

    dataset_raw = dict(data["dataset"])
    allowed_dataset = set(spec_to_dict(DatasetSpec(2, 1, 1, 1)).keys())
    _check_keys(dataset_raw, allowed_dataset, "dataset.")
    for name in DATASET_REQUIRED:
        if name not in dataset_raw:
            raise ConfigError(f"dataset.{name}", "field is required")
    try:
        dataset = spec_from_dict(dataset_raw)
        dataset.validate()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("dataset", str(exc)) from None

    train_raw = dict(data.get("train", {}))
    allowed_train = set(train_config_to_dict(TrainConfig()).keys())
    _check_keys(train_raw, allowed_train, "train.")
    merged = train_config_to_dict(TrainConfig())
    for key, value in train_raw.items():
        if isinstance(merged.get(key), dict) and isinstance(value, dict):
            sub = dict(merged[key])
            for subkey in value:
                if subkey not in sub:
                    raise ConfigError(f"train.{key}.{subkey}", "unknown field")
            sub.update(value)
            merged[key] = sub
        else:
            merged[key] = value
    try:
        train_cfg = train_config_from_dict(merged)
        train_cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError("train", str(exc)) from None

    seeds = data.get("seeds", [0, 1, 2])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds", "must be a non-empty list of integers")
    scenarios = data.get("scenarios", ["consistent", "inverse", "arbitrary"])

    config = ExperimentConfig(
        method=data["method"],
        dataset=dataset,
        train=train_cfg,
        seeds=list(seeds),
        output_dir=str(data.get("output_dir", "runs/experiment")),
        scenarios=list(scenarios),
    )
    config.validate()
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("<config>", f"no such file: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<config>", f"unparseable config: {exc}") from None
    return parse_config(data)


def config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "method": config.method,
        "dataset": spec_to_dict(config.dataset),
        "train": train_config_to_dict(config.train),
        "seeds": list(config.seeds),
        "output_dir": config.output_dir,
        "scenarios": list(config.scenarios),
    }


def _coerce_method_config(config: ExperimentConfig) -> TrainConfig:
    """Baselines ignore the component toggles (with a warning when set)."""
    cfg = config.train
    if config.method == "cpg":
        return cfg
    if cfg.use_aux_branch or cfg.use_cycle or cfg.use_synthesis:
        logger.warning(
            "method %s ignores component toggles (aux/cycle/synthesis)", config.method
        )
    return replace(cfg, use_aux_branch=False, use_cycle=False, use_synthesis=False)


def _run_single(config: ExperimentConfig, seed: int) -> training.RunHistory:
    dataset = replace(config.dataset, seed=seed)
    train_cfg = replace(_coerce_method_config(config), seed=seed)
    splits = generate_splits(dataset)
    if config.method == "cpg":
        return training.train(train_cfg, splits)
    return training.run_baseline(config.method, train_cfg, splits)


def _write_jsonl(path: Path, records: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _final_summary(finals: dict[int, dict]) -> dict:
    """Mean +/- sample std of final-epoch metrics across seeds."""
    seeds = sorted(finals)
    out: dict = {"seeds": seeds, "metrics": {}}
    for name in SUMMARY_METRICS:
        values = [finals[s][name] for s in seeds]
        clean = [v for v in values if v is not None]
        if clean:
            arr = np.asarray(clean, dtype=np.float64)
            std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
            stats = {"mean": float(arr.mean()), "std": std, "values": values}
        else:
            stats = {"mean": None, "std": None, "values": values}
        out["metrics"][name] = stats
    return out


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path, emit_plot_data: bool = False
) -> dict:
    """Execute the configured method for every seed and write all artifacts.

    Per seed: ``seed_<s>/history.jsonl`` (one record per epoch) plus, for the
    full method, the registry snapshot and per-epoch class-stats CSV. The run
    root gets ``resolved_config.json`` and ``summary.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = config_to_dict(config)
    (out_dir / "resolved_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))

    finals: dict[int, dict] = {}
    paths = [out_dir / "resolved_config.json"]
    for seed in config.seeds:
        seed_dir = out_dir / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        history = _run_single(config, seed)
        records = history.to_records()
        _write_jsonl(seed_dir / "history.jsonl", records)
        paths.append(seed_dir / "history.jsonl")
        if history.registry is not None:
            (seed_dir / "registry.json").write_text(
                json.dumps(history.registry.snapshot(), indent=2, sort_keys=True)
            )
            paths.append(seed_dir / "registry.json")
        if config.method == "cpg" and config.train.use_synthesis:
            stats_path = seed_dir / "class_stats.csv"
            _write_class_stats(stats_path, history)
            paths.append(stats_path)
        finals[seed] = records[-1]

    summary = _final_summary(finals)
    summary["method"] = config.method
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    paths.append(out_dir / "summary.json")

    if emit_plot_data:
        plot_path = out_dir / "plot_data.csv"
        _write_plot_data(plot_path, config, finals, out_dir)
        paths.append(plot_path)
    summary["paths"] = [str(p) for p in paths]
    return summary


def _write_class_stats(path: Path, history: training.RunHistory) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "class", "alpha", "radius", "count"])
        for report in history.reports:
            if not report.class_stats:
                continue
            for row in report.class_stats:
                writer.writerow(
                    [report.epoch, row["class"], row["alpha"], row["radius"], row["count"]]
                )


def _write_plot_data(path: Path, config: ExperimentConfig, finals: dict, out_dir: Path) -> None:
    """Tidy long-format per-epoch metrics for external plotting tools."""
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "epoch", "metric", "value"])
        for seed in config.seeds:
            history_path = out_dir / f"seed_{seed}" / "history.jsonl"
            for line in history_path.read_text().splitlines():
                record = json.loads(line)
                for name in ("acc", "macro_f1", "err_rate", "util_rate", "kl"):
                    value = record[name]
                    if value is not None:
                        writer.writerow([seed, record["epoch"], name, value])


def compare_runs(dir_a: str | Path, dir_b: str | Path) -> dict:
    """Welch-test verdicts between two run directories' final metrics.

    Requires matching seed counts and at least two seeds each (one seed has
    no variance to test).
    """
    summary_a = json.loads((Path(dir_a) / "summary.json").read_text())
    summary_b = json.loads((Path(dir_b) / "summary.json").read_text())
    if len(summary_a["seeds"]) != len(summary_b["seeds"]):
        raise ValueError(
            f"seed counts differ: {len(summary_a['seeds'])} vs {len(summary_b['seeds'])}"
        )
    if len(summary_a["seeds"]) < 2:
        raise ValueError("need at least two seeds per run for a variance estimate")
    report: dict = {"a": str(dir_a), "b": str(dir_b), "metrics": {}}
    for name in SUMMARY_METRICS:
        stats_a = summary_a["metrics"][name]
        stats_b = summary_b["metrics"][name]
        values_a = [v for v in stats_a["values"] if v is not None]
        values_b = [v for v in stats_b["values"] if v is not None]
        entry = {
            "mean_a": stats_a["mean"],
            "std_a": stats_a["std"],
            "mean_b": stats_b["mean"],
            "std_b": stats_b["std"],
        }
        if len(values_a) < 2 or len(values_b) < 2:
            entry.update({"t": None, "p": None, "verdict": "tie"})
        else:
            t, _, p = welch_t_test(values_a, values_b)
            if p < 0.05:
                a_better = (entry["mean_a"] > entry["mean_b"]) == HIGHER_IS_BETTER[name]
                verdict = "win" if a_better else "loss"
            else:
                verdict = "tie"
            entry.update({"t": t, "p": p, "verdict": verdict})
        report["metrics"][name] = entry
    return report


def format_comparison(report: dict) -> str:
    lines = [f"comparison: {report['a']}  vs  {report['b']}"]
    for name, entry in report["metrics"].items():
        mean_a = "n/a" if entry["mean_a"] is None else f"{entry['mean_a']:.4f}"
        mean_b = "n/a" if entry["mean_b"] is None else f"{entry['mean_b']:.4f}"
        p = "n/a" if entry.get("p") is None else f"{entry['p']:.4f}"
        lines.append(f"  {name:>9}: {mean_a} vs {mean_b}  p={p}  -> {entry['verdict']}")
    return "\n".join(lines)


def run_ablation(config: ExperimentConfig, out_dir: str | Path) -> dict:
    """Five-row component matrix across unlabeled scenarios and seeds.

    Emits ``ablation.csv`` whose cells hold the mean final accuracy per
    (component row, scenario), plus a row average column.
    """
    if config.method != "cpg":
        raise ConfigError("method", "ablation requires the cpg method")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(config_to_dict(config), indent=2, sort_keys=True)
    )

    cells: dict[str, dict[str, float]] = {}
    details: dict[str, dict[str, list[float]]] = {}
    for label, use_aux, use_cycle, use_synth in ABLATION_ROWS:
        cells[label] = {}
        details[label] = {}
        for scenario in config.scenarios:
            accs = []
            for seed in config.seeds:
                dataset = replace(config.dataset, unlabeled_shape=scenario, seed=seed)
                train_cfg = replace(
                    config.train,
                    use_aux_branch=use_aux,
                    use_cycle=use_cycle,
                    use_synthesis=use_synth,
                    seed=seed,
                )
                history = training.train(train_cfg, generate_splits(dataset))
                accs.append(history.final_metrics()["acc"])
            cells[label][scenario] = float(np.mean(accs))
            details[label][scenario] = [float(a) for a in accs]
        cells[label]["average"] = float(np.mean([cells[label][s] for s in config.scenarios]))

    csv_path = out_dir / "ablation.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", *config.scenarios, "average"])
        for label, *_ in ABLATION_ROWS:
            writer.writerow(
                [label]
                + [f"{cells[label][s]:.6f}" for s in config.scenarios]
                + [f"{cells[label]['average']:.6f}"]
            )
    (out_dir / "ablation.json").write_text(json.dumps(details, indent=2, sort_keys=True))
    return {"cells": cells, "csv": str(csv_path), "json": str(out_dir / "ablation.json")}


def materialize_splits(config: ExperimentConfig, out_dir: str | Path) -> dict[str, Path]:
    """gen-data verb: write the configured splits as CSVs plus the sidecar."""
    return save_splits(generate_splits(config.dataset), out_dir)


def inspect_registry(run_dir: str | Path) -> dict:
    """Load a seed directory's registry snapshot and derive quick stats."""
    path = Path(run_dir) / "registry.json"
    if not path.exists():
        raise FileNotFoundError(f"no registry snapshot at {path}")
    snapshot = json.loads(path.read_text())
    entries = snapshot["entries"]
    resolved = [e for e in entries.values() if e["resolved"] is not None]
    votes_total = sum(sum(e["votes"].values()) for e in entries.values())
    per_class: dict[str, int] = {}
    for e in resolved:
        per_class[str(e["resolved"])] = per_class.get(str(e["resolved"]), 0) + 1
    return {
        "snapshot": snapshot,
        "stats": {
            "ids_with_votes": len(entries),
            "resolved": len(resolved),
            "total_votes": votes_total,
            "resolved_per_class": dict(sorted(per_class.items())),
        },
    }
