from __future__ import annotations

import json
from pathlib import Path

import pytest

from causal_bo.errors import ConfigError, DomainViolation, NoEstimand, NumericalFailure
from causal_bo.main import OutputNotWritable, exit_code, load_run_config, main, parse_sets_file
from causal_bo.models import ExplorationSetKind, PriorKind

TOY_CONFIG = """
[scenario]
name = toy

[cbo]
T = 2
N = 40
N_max = 80
P = 2
seed = 3
prior = standard
eval_samples = 500
fit_hyperparameters = false

[domains]
X = -4, 4

[cost]
X.fixed = 2
Z.variable = true
"""


@pytest.fixture
def toy_cfg(tmp_path):
    path = tmp_path / "toy.cfg"
    path.write_text(TOY_CONFIG, encoding="utf-8")
    return path


class TestConfigFile:
    def test_sections(self, toy_cfg):
        config, output = load_run_config(toy_cfg)
        assert config.T == 2
        assert config.prior == PriorKind.STANDARD
        assert config.domains == {"X": (-4.0, 4.0)}
        assert config.cost_overrides["X"].fixed == 2.0
        assert config.cost_overrides["Z"].variable is True
        assert output.dir == "out"

    def test_overrides(self, toy_cfg):
        config, _ = load_run_config(toy_cfg, ["cbo.T=5", "output.dir=elsewhere"])
        assert config.T == 5

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[scenario]\nname = toy\n[cbo]\nbudget = 3\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_unknown_section(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[scenario]\nname = toy\n[extras]\na = 1\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="unknown config sections"):
            load_run_config(path)

    def test_custom_sets_file(self, tmp_path, toy_cfg):
        sets = tmp_path / "sets.txt"
        sets.write_text("{}\n{Z}\nX, Z  # both\n", encoding="utf-8")
        assert parse_sets_file(sets) == [(), ("Z",), ("X", "Z")]
        config, _ = load_run_config(toy_cfg, [f"cbo.es=custom:{sets}"])
        assert config.es == ExplorationSetKind.CUSTOM
        assert config.custom_sets == [(), ("Z",), ("X", "Z")]


@pytest.mark.parametrize(
    "error, code",
    [
        (ConfigError("x"), 2),
        (DomainViolation("x"), 2),
        (OutputNotWritable("x"), 3),
        (NoEstimand("x"), 4),
        (NumericalFailure("x"), 1),
    ],
)
def test_exit_codes(error, code):
    assert exit_code(error) == code


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "configs").glob("*.cfg")), ids=lambda p: p.stem)
def test_bundled_configs_load(path):
    config, output = load_run_config(path)
    assert config.scenario == path.stem
    assert output.dir.startswith("out/")


class TestCommands:
    def test_enumerate_sets(self, capsys):
        assert main(["enumerate-sets", "--scenario", "toy"]) == 0
        assert capsys.readouterr().out.splitlines() == ["∅", "{X}", "{Z}"]

    def test_enumerate_pomis_for_graph_file(self, tmp_path, capsys):
        graph = tmp_path / "toy.graph"
        graph.write_text(
            "node X treatment\nnode Z treatment\nnode Y target\nedge X -> Z\nedge Z -> Y\n", encoding="utf-8"
        )
        assert main(["enumerate-sets", "--graph", str(graph), "--es", "pomis"]) == 0
        assert capsys.readouterr().out.splitlines() == ["{Z}"]

    def test_unknown_scenario(self, capsys):
        assert main(["enumerate-sets", "--scenario", "nowhere"]) == 2
        assert "unknown scenario" in capsys.readouterr().err

    def test_config_error_exit(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("[scenario]\nname = toy\n[cbo]\nbudget = 3\n", encoding="utf-8")
        assert main(["run", "--config", str(path), "--output", str(tmp_path / "out")]) == 2
        assert "error [cli] ConfigError" in capsys.readouterr().err

    def test_cost_for_unknown_node_exits(self, toy_cfg, run_dir, capsys):
        assert main(["run", "--config", str(toy_cfg), "--output", str(run_dir), "--set", "cost.W.fixed=1"]) == 2
        assert "outside the graph" in capsys.readouterr().err

    def test_run_writes_artifacts(self, toy_cfg, run_dir, capsys):
        assert main(["run", "--config", str(toy_cfg), "--output", str(run_dir)]) == 0
        lines = (run_dir / "trace.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0].startswith("# config_hash=")
        summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
        assert summary["seeds"] == [3]
        assert [g["set"] for g in summary["gp"]] == [[], ["X"], ["Z"]]
        assert "cumulative cost" in capsys.readouterr().out

    def test_run_is_reproducible(self, toy_cfg, tmp_path):
        for name in ("a", "b"):
            assert main(["run", "--config", str(toy_cfg), "--output", str(tmp_path / name)]) == 0
        assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()

    def test_unwritable_output(self, toy_cfg, tmp_path, capsys):
        blocker = tmp_path / "blocker"
        blocker.write_text("", encoding="utf-8")
        assert main(["run", "--config", str(toy_cfg), "--output", str(blocker / "out")]) == 3
        assert "OutputNotWritable" in capsys.readouterr().err

    def test_baseline_run(self, toy_cfg, run_dir):
        assert main(["run", "--config", str(toy_cfg), "--output", str(run_dir), "--baseline"]) == 0
        summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
        assert summary["config"]["es"] == "bo"
        assert summary["config"]["prior"] == "standard"
        assert summary["config"]["epsilon"] == 0.0
        assert [g["set"] for g in summary["gp"]] == [["X", "Z"]]
        rows = (run_dir / "trace.csv").read_text(encoding="utf-8").splitlines()[2:]
        assert [row.split(",")[1] for row in rows] == ["intervene", "intervene"]

    def test_summary_keeps_step_notes(self, toy_cfg, run_dir, monkeypatch):
        monkeypatch.setattr("causal_bo.cbo_service.epsilon_estimate", lambda *args, **kwargs: (0.0, 0.01))
        assert main(["run", "--config", str(toy_cfg), "--output", str(run_dir)]) == 0
        summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
        assert summary["notes"] == {"0": "hull_se=0.01", "1": "hull_se=0.01"}

    def test_sweep(self, toy_cfg, run_dir):
        assert main(["sweep", "--config", str(toy_cfg), "--output", str(run_dir), "--seeds", "0", "1"]) == 0
        assert (run_dir / "seed_0" / "trace.csv").exists()
        assert (run_dir / "seed_1" / "summary.json").exists()
        lines = (run_dir / "aggregate.csv").read_text(encoding="utf-8").splitlines()
        summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
        assert lines[0] == f"# config_hash={summary['config_hash']} seeds=0,1"
        assert lines[1] == "cost,n_runs,mean_best,se_best"
        assert (run_dir / "plot_aggregate.py").exists()

    def test_sweep_duplicate_seeds(self, toy_cfg, run_dir):
        assert main(["sweep", "--config", str(toy_cfg), "--output", str(run_dir), "--seeds", "4", "4"]) == 2

    def test_estimate_notes_shared_estimand(self, capsys):
        code = main(["estimate", "--scenario", "toy", "--set", "Z,X", "--values", "2,1", "--n", "300"])
        assert code == 0
        out = capsys.readouterr().out
        assert "note: estimand shared with {Z}" in out
        assert "plan: reg(Y | Z=z)" in out

    def test_estimate_outside_domain(self, capsys):
        assert main(["estimate", "--scenario", "toy", "--set", "X", "--values", "9"]) == 2
        assert "DomainViolation" in capsys.readouterr().err

    def test_oracle(self, capsys):
        assert main(["oracle", "--scenario", "toy", "--set", "Z", "--values", "0", "--n", "2000"]) == 0
        assert capsys.readouterr().out.startswith("E[Y|do]=")
