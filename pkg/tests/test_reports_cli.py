import json

import pytest

from scaat.adversarial import AdvConfig
from scaat.cli import run_cli
from scaat.config import (
    DataConfig,
    RunConfig,
    load_run_config,
    run_config_from_dict,
    run_config_to_dict,
    save_run_config,
)
from scaat.data import generate_half_informative
from scaat.metrics import EvalProtocol, evaluate_model
from scaat.models import ModelSpec, init_model
from scaat.reports import export_report, load_report_json
from scaat.training import TrainConfig


def tiny_run_config(tmp_path, mode="scaat_adaptive_q") -> RunConfig:
    return RunConfig(
        model=ModelSpec("mlp", (1, 8, 8), 2, hidden=(8,), seed=0),
        train=TrainConfig(
            mode=mode, batch_size=16, n_iter=6, lr=0.05, seed=0,
            adv=AdvConfig(epsilon=0.05, k=2), warmup_iters=1,
        ),
        protocol=EvalProtocol(steps=4, fraction=0.4, repeats=2, region=2, limit=6),
        data=DataConfig(
            format="synthetic-spec",
            train="half-informative,n=48,size=8,classes=2,seed=1",
            test="half-informative,n=16,size=8,classes=2,seed=2",
            n_classes=2,
        ),
        out_dir=str(tmp_path / "out"),
        seed=0,
    )


class TestRunConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = tiny_run_config(tmp_path)
        path = tmp_path / "run.json"
        save_run_config(cfg, path)
        loaded = load_run_config(path)
        assert run_config_to_dict(loaded) == run_config_to_dict(cfg)

    def test_schema_gate(self):
        with pytest.raises(ValueError, match="schema"):
            run_config_from_dict({"schema": 99})

    def test_seed_propagates(self, tmp_path):
        cfg = tiny_run_config(tmp_path).with_seed(7)
        assert cfg.model.seed == 7 and cfg.train.seed == 7

    def test_every_design_tunable_is_in_config(self, tmp_path):
        doc = run_config_to_dict(tiny_run_config(tmp_path))
        train_keys = {
            "mode", "lambda", "batch_size", "n_iter", "lr", "momentum",
            "epsilon", "k", "alpha", "variant",
            "q0", "gamma", "q_min", "q_max", "warmup_iters", "train_region",
        }
        assert train_keys <= set(doc["train"])
        eval_keys = {"saliency", "steps", "fraction", "repeats", "region",
                     "smooth_samples", "smooth_sigma", "ig_steps", "limit"}
        assert eval_keys <= set(doc["eval"])
        assert {"seed", "out_dir", "schema"} <= set(doc)


class TestReports:
    def make_report(self):
        params = init_model(ModelSpec("mlp", (1, 8, 8), 2, hidden=(6,), seed=1))
        data = generate_half_informative(n=6, size=8, classes=2, seed=4, split="test")
        return evaluate_model(params, data, EvalProtocol(steps=3, fraction=0.3, repeats=1, region=2), seed=3)

    def test_export_is_deterministic(self, tmp_path):
        report = self.make_report()
        j1, c1 = export_report(report, tmp_path / "a")
        j2, c2 = export_report(report, tmp_path / "b")
        assert j1.read_bytes() == j2.read_bytes()
        assert c1.read_bytes() == c2.read_bytes()

    def test_json_round_trip(self, tmp_path):
        report = self.make_report()
        j, _ = export_report(report, tmp_path)
        doc = load_report_json(j)
        assert doc["n_samples"] == report.n_samples
        for key, val in report.aggregates.items():
            assert doc["aggregates"][key] == pytest.approx(val, rel=1e-12)

    def test_csv_row_count(self, tmp_path):
        report = self.make_report()
        _, c = export_report(report, tmp_path)
        lines = c.read_text().splitlines()
        assert len(lines) == report.n_samples + 1
        assert lines[0].startswith("sample,entropy")

    def test_no_temp_files_left(self, tmp_path):
        export_report(self.make_report(), tmp_path)
        stray = [p for p in tmp_path.iterdir() if p.name.startswith(".")]
        assert stray == []


class TestCli:
    def write_config(self, tmp_path, **kw):
        cfg = tiny_run_config(tmp_path, **kw)
        path = tmp_path / "run.json"
        save_run_config(cfg, path)
        return cfg, path

    def test_train_writes_artifacts(self, tmp_path, capsys):
        cfg, cfg_path = self.write_config(tmp_path)
        assert run_cli(["train", "--config", str(cfg_path)]) == 0
        out = tmp_path / "out"
        for name in ("checkpoint.sct", "qstate.json", "train_log.jsonl", "config.json"):
            assert (out / name).exists(), name
        log_lines = (out / "train_log.jsonl").read_text().splitlines()
        assert len(log_lines) == cfg.train.n_iter
        rec = json.loads(log_lines[0])
        assert set(rec) == {"iter", "L_cls", "L_adv", "mean_q", "batch_acc"}

    def test_train_reproducible(self, tmp_path):
        _, cfg_path = self.write_config(tmp_path)
        assert run_cli(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r1")]) == 0
        assert run_cli(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r2")]) == 0
        for name in ("checkpoint.sct", "train_log.jsonl", "qstate.json"):
            assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()

    def test_mode_override(self, tmp_path):
        _, cfg_path = self.write_config(tmp_path)
        assert run_cli(["train", "--config", str(cfg_path), "--mode", "regular"]) == 0
        log = [json.loads(l) for l in (tmp_path / "out" / "train_log.jsonl").read_text().splitlines()]
        assert all(rec["L_adv"] == 0.0 for rec in log)

    def test_evaluate_and_saliency_and_curves(self, tmp_path, capsys):
        _, cfg_path = self.write_config(tmp_path)
        assert run_cli(["train", "--config", str(cfg_path)]) == 0
        ckpt = str(tmp_path / "out" / "checkpoint.sct")

        assert run_cli(["evaluate", "--config", str(cfg_path), "--ckpt", ckpt, "--split", "test"]) == 0
        assert (tmp_path / "out" / "report.json").exists()
        assert (tmp_path / "out" / "report.csv").exists()
        doc = load_report_json(tmp_path / "out" / "report.json")
        assert 0.0 <= doc["aggregates"]["accuracy"] <= 1.0

        assert run_cli(["saliency", "--config", str(cfg_path), "--ckpt", ckpt, "--indices", "0,2"]) == 0
        assert (tmp_path / "out" / "saliency_00000_vanilla.pgm").exists()
        assert (tmp_path / "out" / "saliency_00002_vanilla.csv").exists()

        assert run_cli(["curves", "--config", str(cfg_path), "--ckpt", ckpt, "--limit", "4"]) == 0
        for order in ("lerf", "morf"):
            lines = (tmp_path / "out" / f"curves_{order}.csv").read_text().splitlines()
            assert lines[0] == "step,mean_decay,std"
            assert len(lines) == 5  # header + 4 steps

    def test_compare(self, tmp_path, capsys):
        _, cfg_path = self.write_config(tmp_path)
        assert run_cli(["train", "--config", str(cfg_path), "--out", str(tmp_path / "reg"), "--mode", "regular"]) == 0
        assert run_cli(["train", "--config", str(cfg_path), "--out", str(tmp_path / "adv"), "--mode", "scaat-adaptive"]) == 0
        code = run_cli([
            "compare", "--config", str(cfg_path),
            "--a", str(tmp_path / "reg" / "checkpoint.sct"),
            "--b", str(tmp_path / "adv" / "checkpoint.sct"),
            "--limit", "6", "--out", str(tmp_path / "cmp"),
        ])
        assert code == 0
        printed = capsys.readouterr().out
        for row in ("entropy", "size_kib", "aopc_lerf", "aopc_rel"):
            assert row in printed
        doc = json.loads((tmp_path / "cmp" / "compare.json").read_text())
        assert set(doc["rows"]) == {"entropy", "size_kib", "gini", "aopc_lerf", "aopc_rel", "accuracy"}

    def test_usage_errors_exit_two(self, tmp_path, capsys):
        assert run_cli(["train"]) == 2                      # missing --config
        assert run_cli(["train", "--config", "x", "--bogus"]) == 2
        assert run_cli(["frobnicate"]) == 2
        assert run_cli(["train", "--config", str(tmp_path / "nope.json")]) == 2

    def test_runtime_errors_exit_one(self, tmp_path):
        _, cfg_path = self.write_config(tmp_path)
        code = run_cli(["evaluate", "--config", str(cfg_path), "--ckpt", str(tmp_path / "missing.sct")])
        assert code == 1
