import csv
import json

import numpy as np
import pytest
import yaml

from pseudopool.cli import main
from pseudopool.experiments import (
    ConfigError,
    compare_runs,
    config_to_dict,
    load_config,
    parse_config,
    run_ablation,
    run_experiment,
)

TINY_CONFIG = {
    "method": "cpg",
    "seeds": [0, 1],
    "output_dir": "runs/tiny",
    "dataset": {
        "num_classes": 3,
        "feature_dim": 4,
        "n_max": 12,
        "m_max": 36,
        "gamma_l": 3.0,
        "gamma_u": 3.0,
        "unlabeled_shape": "arbitrary",
        "test_per_class": 8,
    },
    "train": {
        "total_epochs": 10,
        "warmup_epochs": 3,
        "steps_per_epoch": 4,
        "labeled_batch": 6,
        "unlabeled_ratio": 2,
        "min_votes": 2,
        "majority_frac": 0.6,
        "hidden_dims": [12, 12],
    },
}


def write_config(tmp_path, data, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


class TestConfigParsing:
    def test_minimal_config_fills_defaults(self):
        config = parse_config(
            {
                "method": "supervised_ce",
                "dataset": {"num_classes": 2, "feature_dim": 3, "n_max": 5, "m_max": 10},
            }
        )
        assert config.seeds == [0, 1, 2]
        assert config.train.confidence_threshold == 0.95
        assert config.train.optimizer.base_lr == 0.03

    def test_missing_required_field_names_it(self):
        with pytest.raises(ConfigError, match="dataset.num_classes"):
            parse_config({"method": "cpg", "dataset": {"feature_dim": 3, "n_max": 5, "m_max": 9}})

    def test_unknown_field_names_it(self):
        data = dict(TINY_CONFIG)
        data["banana"] = 1
        with pytest.raises(ConfigError, match="banana"):
            parse_config(data)

    def test_unknown_nested_field_names_path(self):
        data = json.loads(json.dumps(TINY_CONFIG))
        data["train"]["optimizer"] = {"base_lr": 0.01, "warp": 9}
        with pytest.raises(ConfigError, match="train.optimizer.warp"):
            parse_config(data)

    def test_bad_method(self):
        data = json.loads(json.dumps(TINY_CONFIG))
        data["method"] = "alchemy"
        with pytest.raises(ConfigError, match="method"):
            parse_config(data)

    def test_json_is_accepted_as_yaml_subset(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(TINY_CONFIG))
        config = load_config(path)
        assert config.method == "cpg"
        assert config.dataset.num_classes == 3

    def test_resolved_dict_round_trips(self):
        config = parse_config(json.loads(json.dumps(TINY_CONFIG)))
        resolved = config_to_dict(config)
        again = parse_config(resolved)
        assert config_to_dict(again) == resolved


class TestRunExperiment:
    def test_writes_all_artifacts(self, tmp_path):
        config = parse_config(json.loads(json.dumps(TINY_CONFIG)))
        summary = run_experiment(config, tmp_path / "out")
        assert (tmp_path / "out" / "resolved_config.json").exists()
        assert (tmp_path / "out" / "summary.json").exists()
        for seed in (0, 1):
            assert (tmp_path / "out" / f"seed_{seed}" / "history.jsonl").exists()
            assert (tmp_path / "out" / f"seed_{seed}" / "registry.json").exists()
            assert (tmp_path / "out" / f"seed_{seed}" / "class_stats.csv").exists()
        assert summary["method"] == "cpg"
        assert set(summary["metrics"]) == {"acc", "macro_f1", "err_rate", "util_rate", "kl"}

    def test_rerun_from_resolved_config_is_byte_identical(self, tmp_path):
        config = parse_config(json.loads(json.dumps(TINY_CONFIG)))
        run_experiment(config, tmp_path / "a")
        resolved = json.loads((tmp_path / "a" / "resolved_config.json").read_text())
        run_experiment(parse_config(resolved), tmp_path / "b")
        for rel in ("summary.json", "seed_0/history.jsonl", "seed_1/history.jsonl"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_baseline_ignores_toggles_with_warning(self, tmp_path, caplog):
        data = json.loads(json.dumps(TINY_CONFIG))
        data["method"] = "supervised_ce"
        data["seeds"] = [0]
        config = parse_config(data)
        import logging

        with caplog.at_level(logging.WARNING):
            run_experiment(config, tmp_path / "ce")
        assert "ignores component toggles" in caplog.text
        history = json.loads(
            (tmp_path / "ce" / "seed_0" / "history.jsonl").read_text().splitlines()[-1]
        )
        assert history["util_rate"] == 0.0

    def test_emit_plot_data(self, tmp_path):
        data = json.loads(json.dumps(TINY_CONFIG))
        data["seeds"] = [0]
        config = parse_config(data)
        run_experiment(config, tmp_path / "out", emit_plot_data=True)
        rows = list(csv.reader((tmp_path / "out" / "plot_data.csv").open()))
        assert rows[0] == ["seed", "epoch", "metric", "value"]
        assert len(rows) > 10


class TestCompare:
    def _make_run(self, tmp_path, name, values, seeds=(0, 1, 2)):
        out = tmp_path / name
        out.mkdir(parents=True, exist_ok=True)
        metrics = {}
        for metric in ("acc", "macro_f1", "err_rate", "util_rate", "kl"):
            vals = values.get(metric, [0.5] * len(seeds))
            arr = np.asarray(vals, dtype=np.float64)
            metrics[metric] = {
                "mean": float(arr.mean()),
                "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
                "values": list(map(float, vals)),
            }
        (out / "summary.json").write_text(
            json.dumps({"seeds": list(seeds), "metrics": metrics, "method": "cpg"})
        )
        return out

    def test_self_comparison_is_all_ties(self, tmp_path):
        run = self._make_run(tmp_path, "a", {"acc": [0.8, 0.82, 0.79]})
        report = compare_runs(run, run)
        assert all(entry["verdict"] == "tie" for entry in report["metrics"].values())

    def test_disjoint_ranges_win_significantly(self, tmp_path):
        a = self._make_run(tmp_path, "a", {"acc": [0.9, 0.91, 0.92]})
        b = self._make_run(tmp_path, "b", {"acc": [0.5, 0.52, 0.51]})
        report = compare_runs(a, b)
        assert report["metrics"]["acc"]["verdict"] == "win"
        assert report["metrics"]["acc"]["p"] < 0.05
        # direction-aware: lower error is better
        a2 = self._make_run(tmp_path, "a2", {"err_rate": [0.01, 0.02, 0.015]})
        b2 = self._make_run(tmp_path, "b2", {"err_rate": [0.4, 0.42, 0.41]})
        assert compare_runs(a2, b2)["metrics"]["err_rate"]["verdict"] == "win"

    def test_single_seed_refused(self, tmp_path):
        a = self._make_run(tmp_path, "a", {}, seeds=(0,))
        b = self._make_run(tmp_path, "b", {}, seeds=(0,))
        with pytest.raises(ValueError, match="two seeds"):
            compare_runs(a, b)

    def test_mismatched_seed_counts_refused(self, tmp_path):
        a = self._make_run(tmp_path, "a", {}, seeds=(0, 1))
        b = self._make_run(tmp_path, "b", {}, seeds=(0, 1, 2))
        with pytest.raises(ValueError, match="seed counts differ"):
            compare_runs(a, b)


class TestAblation:
    def test_matrix_layout_and_none_row(self, tmp_path):
        data = json.loads(json.dumps(TINY_CONFIG))
        data["seeds"] = [0]
        data["scenarios"] = ["consistent", "inverse"]
        config = parse_config(data)
        result = run_ablation(config, tmp_path / "abl")
        rows = list(csv.reader(open(result["csv"])))
        assert rows[0] == ["variant", "consistent", "inverse", "average"]
        assert [r[0] for r in rows[1:]] == ["none", "aux", "aux+synth", "aux+cycle", "full"]
        assert len(rows) == 6

        # the none row equals a supervised_la run on the same seeds
        from dataclasses import replace

        from pseudopool.datasets import generate_splits
        from pseudopool.training import run_baseline

        split_cfg = replace(config.dataset, unlabeled_shape="consistent", seed=0)
        la_cfg = replace(
            config.train, use_aux_branch=False, use_cycle=False, use_synthesis=False, seed=0
        )
        la = run_baseline("supervised_la", la_cfg, generate_splits(split_cfg))
        # csv cells carry 6 decimals
        assert float(rows[1][1]) == pytest.approx(la.final_metrics()["acc"], abs=1e-6)

    def test_requires_cpg_method(self, tmp_path):
        data = json.loads(json.dumps(TINY_CONFIG))
        data["method"] = "supervised_ce"
        with pytest.raises(ConfigError, match="method"):
            run_ablation(parse_config(data), tmp_path / "abl")


class TestCli:
    def test_run_and_inspect(self, tmp_path, capsys):
        data = json.loads(json.dumps(TINY_CONFIG))
        path = write_config(tmp_path, data)
        code = main(["run", "--config", str(path), "--out", str(tmp_path / "out"), "--seeds", "0"])
        assert code == 0
        printed = capsys.readouterr().out
        assert str(tmp_path / "out" / "summary.json") in printed
        code = main(["inspect", str(tmp_path / "out" / "seed_0")])
        assert code == 0
        stats = json.loads(capsys.readouterr().out)
        assert "resolved" in stats

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        path = write_config(tmp_path, {"method": "cpg", "dataset": {"feature_dim": 2, "n_max": 4, "m_max": 8}})
        code = main(["run", "--config", str(path)])
        assert code == 2
        assert "dataset.num_classes" in capsys.readouterr().err

    def test_missing_config_file_exits_2(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.yaml")]) == 2

    def test_gen_data_round_trip(self, tmp_path, capsys):
        path = write_config(tmp_path, json.loads(json.dumps(TINY_CONFIG)))
        code = main(["gen-data", "--config", str(path), "--out", str(tmp_path / "data")])
        assert code == 0
        out = capsys.readouterr().out
        assert str(tmp_path / "data" / "labeled.csv") in out
        from pseudopool.datasets import load_splits

        bundle = load_splits(tmp_path / "data")
        assert bundle.labeled.ids.size == 12 + 6 + 4  # counts for gamma_l=3, C=3

    def test_compare_cli(self, tmp_path, capsys):
        data = json.loads(json.dumps(TINY_CONFIG))
        data["seeds"] = [0, 1]
        path = write_config(tmp_path, data)
        assert main(["run", "--config", str(path), "--out", str(tmp_path / "a")]) == 0
        capsys.readouterr()
        code = main(["compare", str(tmp_path / "a"), str(tmp_path / "a")])
        assert code == 0
        assert "tie" in capsys.readouterr().out

    def test_output_root_env(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("PSEUDOPOOL_OUTPUT_ROOT", str(tmp_path / "root"))
        data = json.loads(json.dumps(TINY_CONFIG))
        data["seeds"] = [0]
        data["output_dir"] = "nested/run"
        path = write_config(tmp_path, data)
        assert main(["run", "--config", str(path)]) == 0
        assert (tmp_path / "root" / "nested" / "run" / "summary.json").exists()

    def test_divergent_run_exits_3(self, tmp_path, capsys):
        data = json.loads(json.dumps(TINY_CONFIG))
        data["seeds"] = [0]
        data["train"]["optimizer"] = {"base_lr": 1e14}
        path = write_config(tmp_path, data)
        with np.errstate(all="ignore"):
            code = main(["run", "--config", str(path), "--out", str(tmp_path / "d")])
        assert code == 3
        assert "epoch" in capsys.readouterr().err
