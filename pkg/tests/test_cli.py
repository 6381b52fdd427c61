import json

import pytest
import yaml

from pandaug.cli import main
from pandaug.config import load_config, parse_config
from pandaug.errors import InvalidConfigError
from pandaug.evaluator import load_report
from pandaug.streamgen import load_plan


def base_config(manifest, out_dir, **overrides):
    cfg = {
        "seed": 1993,
        "output_dir": str(out_dir),
        "stream": {
            "manifest": str(manifest),
            "num_classes": 10,
            "n_max": 20,
            "rho": 0.1,
            "min_count": 3,
            "num_tasks": 2,
        },
        "provider": {"kind": "synthetic", "dimension": 32, "sigma": 0.5},
        "patcher": {"grid": 4, "resolution": 32, "threshold": 0.2, "mode": "literal"},
        "smoother": {"strategy": "performance", "base_beta": 0.7},
        "eval": {"metric": "cosine", "test_per_class": 5},
    }
    for key, val in overrides.items():
        section, _, field = key.partition(".")
        if field:
            cfg[section][field] = val
        else:
            cfg[section] = val
    return cfg


@pytest.fixture()
def workspace(tmp_path):
    manifest = tmp_path / "manifest.jsonl"
    assert main(["manifest", "synth", "--out", str(manifest),
                 "--classes", "10", "--items", "30"]) == 0
    return tmp_path, manifest


def write_config(tmp_path, cfg, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return path


class TestConfigValidation:
    def test_round_trip(self, workspace):
        tmp_path, manifest = workspace
        path = write_config(tmp_path, base_config(manifest, tmp_path / "out"))
        cfg = load_config(path)
        assert cfg.seed == 1993
        assert cfg.stream.rho == pytest.approx(0.1)
        assert cfg.grid.g == 4

    def test_rho_zero_rejected(self, workspace):
        tmp_path, manifest = workspace
        cfg = base_config(manifest, tmp_path, **{"stream.rho": 0.0})
        with pytest.raises(InvalidConfigError):
            parse_config(cfg)

    def test_missing_required_field(self, workspace):
        tmp_path, manifest = workspace
        cfg = base_config(manifest, tmp_path)
        del cfg["stream"]["num_classes"]
        with pytest.raises(InvalidConfigError):
            parse_config(cfg)

    def test_bad_mode(self, workspace):
        tmp_path, manifest = workspace
        cfg = base_config(manifest, tmp_path, **{"patcher.mode": "diagonal"})
        with pytest.raises(InvalidConfigError):
            parse_config(cfg)

    def test_bad_strategy(self, workspace):
        tmp_path, manifest = workspace
        cfg = base_config(manifest, tmp_path, **{"smoother.strategy": "gradient"})
        with pytest.raises(InvalidConfigError):
            parse_config(cfg)

    def test_missing_manifest_path(self, tmp_path):
        path = write_config(tmp_path, base_config(tmp_path / "nope.jsonl", tmp_path))
        with pytest.raises(InvalidConfigError):
            load_config(path)

    def test_seed_env_override(self, workspace, monkeypatch):
        tmp_path, manifest = workspace
        monkeypatch.setenv("PANDA_SEED", "42")
        cfg = parse_config(base_config(manifest, tmp_path))
        assert cfg.seed == 42


class TestStreamBuild:
    def test_outputs(self, workspace):
        tmp_path, manifest = workspace
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config(manifest, out))
        assert main(["stream", "build", "--config", str(path)]) == 0
        plan = load_plan(out / "plan.json")
        assert len(plan.tasks) == 2
        lines = (out / "summary.tsv").read_text().splitlines()
        assert len(lines) == 3  # header + one row per task

    def test_locked_output_dir(self, workspace, capsys):
        tmp_path, manifest = workspace
        out = tmp_path / "out"
        out.mkdir()
        (out / ".lock").write_text("held")
        path = write_config(tmp_path, base_config(manifest, out))
        assert main(["stream", "build", "--config", str(path)]) == 1
        assert "locked" in capsys.readouterr().err

    def test_task_override_is_local(self, workspace):
        tmp_path, manifest = workspace
        plain = write_config(tmp_path, base_config(manifest, tmp_path / "a"), "a.yaml")
        shifted = write_config(
            tmp_path,
            base_config(manifest, tmp_path / "b",
                        **{"stream.dli": [{"star": 2, "rho_star": 0.01}]}),
            "b.yaml")
        assert main(["stream", "build", "--config", str(plain)]) == 0
        assert main(["stream", "build", "--config", str(shifted)]) == 0
        pa = load_plan(tmp_path / "a" / "plan.json")
        pb = load_plan(tmp_path / "b" / "plan.json")
        assert pa.tasks[0].per_class_counts == pb.tasks[0].per_class_counts
        assert pa.tasks[1].per_class_counts != pb.tasks[1].per_class_counts
        assert max(pa.tasks[1].per_class_counts) == max(pb.tasks[1].per_class_counts)


class TestAugment:
    def test_balanced_stream_synthesizes_nothing(self, workspace, capsys):
        tmp_path, manifest = workspace
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config(manifest, out, **{"stream.rho": 1.0}))
        assert main(["stream", "build", "--config", str(path)]) == 0
        aug_out = tmp_path / "aug"
        assert main(["augment", "--config", str(path),
                     "--plan", str(out / "plan.json"), "--out", str(aug_out)]) == 0
        assert "synthesized 0 samples" in capsys.readouterr().out
        for k in (1, 2):
            records = (aug_out / f"balance_task_{k}.jsonl").read_text().splitlines()
            assert json.loads(records[-1])["syntheses"] == 0

    def test_writes_logs_and_images(self, workspace):
        tmp_path, manifest = workspace
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config(manifest, out))
        assert main(["stream", "build", "--config", str(path)]) == 0
        aug_out = tmp_path / "aug"
        assert main(["augment", "--config", str(path),
                     "--plan", str(out / "plan.json"), "--out", str(aug_out)]) == 0
        records = (aug_out / f"balance_task_1.jsonl").read_text().splitlines()
        footer = json.loads(records[-1])
        assert footer["syntheses"] > 0
        pngs = list(aug_out.glob("task_*/**/*.png"))
        assert len(pngs) == sum(
            json.loads((aug_out / f"balance_task_{k}.jsonl").read_text()
                       .splitlines()[-1])["syntheses"]
            for k in (1, 2))


class TestEvalAndReport:
    def _prepare(self, workspace):
        tmp_path, manifest = workspace
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config(manifest, out))
        assert main(["stream", "build", "--config", str(path)]) == 0
        return tmp_path, path, out / "plan.json"

    def test_eval_writes_both_reports(self, workspace):
        tmp_path, cfg_path, plan = self._prepare(workspace)
        ev = tmp_path / "ev"
        assert main(["eval", "--config", str(cfg_path), "--plan", str(plan),
                     "--out", str(ev)]) == 0
        base = load_report(ev / "report_baseline.json")
        panda = load_report(ev / "report_panda.json")
        assert base["num_synthesized"] == 0
        assert panda["num_synthesized"] > 0
        assert base["plan_digest"] == panda["plan_digest"]
        assert (ev / "report_panda.tsv").exists()

    def test_eval_deterministic(self, workspace):
        tmp_path, cfg_path, plan = self._prepare(workspace)
        outs = []
        for run in range(2):
            ev = tmp_path / f"ev{run}"
            assert main(["eval", "--config", str(cfg_path), "--plan", str(plan),
                         "--panda", "--out", str(ev)]) == 0
            outs.append((ev / "report_panda.json").read_bytes())
        assert outs[0] == outs[1]

    def test_report_deltas(self, workspace, capsys):
        tmp_path, cfg_path, plan = self._prepare(workspace)
        ev = tmp_path / "ev"
        assert main(["eval", "--config", str(cfg_path), "--plan", str(plan),
                     "--out", str(ev)]) == 0
        table = tmp_path / "cmp.tsv"
        assert main(["report", str(ev / "report_baseline.json"),
                     str(ev / "report_panda.json"), "--out", str(table)]) == 0
        lines = table.read_text().splitlines()
        assert lines[0].split("\t") == ["report", "avg_acc", "avg_for", "d_acc", "d_for"]
        base_row = lines[1].split("\t")
        assert base_row[3] == "+0.0000"  # first report is its own baseline

    def test_report_refuses_mixed_plans(self, workspace, capsys):
        tmp_path, cfg_path, plan = self._prepare(workspace)
        other_cfg = write_config(
            tmp_path, base_config(plan.parent.parent / "manifest.jsonl",
                                  tmp_path / "out2", **{"stream.rho": 0.5}),
            "other.yaml")
        assert main(["stream", "build", "--config", str(other_cfg)]) == 0
        ev1, ev2 = tmp_path / "ev1", tmp_path / "ev2"
        assert main(["eval", "--config", str(cfg_path), "--plan", str(plan),
                     "--baseline", "--out", str(ev1)]) == 0
        assert main(["eval", "--config", str(other_cfg),
                     "--plan", str(tmp_path / "out2" / "plan.json"),
                     "--baseline", "--out", str(ev2)]) == 0
        assert main(["report", str(ev1 / "report_baseline.json"),
                     str(ev2 / "report_baseline.json")]) == 1
        assert "mixed plan digests" in capsys.readouterr().err
