from __future__ import annotations

import pandas as pd
import pytest

from causal_bo.models import Action, CboConfig, TraceRow
from causal_bo.reporting import (
    TRACE_COLUMNS,
    aggregate_traces,
    config_hash,
    read_aggregate_csv,
    read_trace_csv,
    write_aggregate_csv,
    write_plot_stub,
    write_trace_csv,
)


def rows_for(*steps):
    """(cost, best) の介入ステップ列からトレースを作る"""
    out = [TraceRow(t=0, action=Action.OBSERVE, epsilon=0.9, best=None)]
    total = 0.0
    for t, (cost, best) in enumerate(steps, start=1):
        total += cost
        out.append(TraceRow(t=t, action=Action.INTERVENE, epsilon=0.1, set=("X",), values=(0.5,),
                            step_cost=cost, cum_cost=total, y_hat=best, best=best))
    return out


def frame_for(tmp_path, name, rows):
    return read_trace_csv(write_trace_csv(tmp_path / name, rows, "abc", 0))


class TestTrace:
    def test_header_and_columns(self, tmp_path):
        path = write_trace_csv(tmp_path / "trace.csv", rows_for((1.0, -0.5)), "abc", 3)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "# config_hash=abc seed=3"
        assert lines[1].split(",") == TRACE_COLUMNS
        assert lines[3].startswith("1,intervene,0.1,{X},0.5,1,1,-0.5,-0.5,")

    def test_empty_cells_for_observe(self, tmp_path):
        frame = frame_for(tmp_path, "trace.csv", rows_for((1.0, -0.5)))
        assert frame.loc[0, "set"] == ""
        assert pd.isna(frame.loc[0, "best"])

    def test_rewrite_is_byte_identical(self, tmp_path):
        rows = rows_for((1.0, -0.5), (2.0, -0.7))
        a = write_trace_csv(tmp_path / "a.csv", rows, "abc", 0).read_bytes()
        b = write_trace_csv(tmp_path / "b.csv", rows, "abc", 0).read_bytes()
        assert a == b


class TestConfigHash:
    def test_ignores_seed(self):
        assert config_hash(CboConfig(scenario="toy", seed=1)) == config_hash(CboConfig(scenario="toy", seed=2))

    def test_tracks_settings(self):
        assert config_hash(CboConfig(scenario="toy", T=5)) != config_hash(CboConfig(scenario="toy", T=6))


class TestAggregate:
    def test_single_seed(self, tmp_path):
        rows = aggregate_traces({0: frame_for(tmp_path, "s0.csv", rows_for((1.0, -0.5), (1.0, -0.8)))})
        assert [(r.cost, r.n_runs, r.mean_best, r.se_best) for r in rows] == [(1.0, 1, -0.5, 0.0), (2.0, 1, -0.8, 0.0)]

    def test_step_function_across_seeds(self, tmp_path):
        traces = {
            0: frame_for(tmp_path, "s0.csv", rows_for((1.0, -1.0), (2.0, -2.0))),
            1: frame_for(tmp_path, "s1.csv", rows_for((2.0, -3.0))),
        }
        rows = {r.cost: r for r in aggregate_traces(traces)}
        assert sorted(rows) == [1.0, 2.0, 3.0]
        assert rows[1.0].n_runs == 1
        assert rows[2.0].mean_best == pytest.approx(-2.0)
        # 2つのシードの値 -1 と -3
        assert rows[2.0].se_best == pytest.approx(1.0)
        assert rows[3.0].mean_best == pytest.approx(-2.5)

    def test_csv_and_plot_stub(self, tmp_path):
        rows = aggregate_traces({0: frame_for(tmp_path, "s0.csv", rows_for((1.0, -0.5)))})
        path = write_aggregate_csv(tmp_path / "aggregate.csv", rows, "abc", [0])
        assert path.read_text(encoding="utf-8").splitlines() == [
            "# config_hash=abc seeds=0", "cost,n_runs,mean_best,se_best", "1,1,-0.5,0",
        ]
        frame = read_aggregate_csv(path)
        assert list(frame["mean_best"]) == [-0.5]
        stub = write_plot_stub(tmp_path / "plot_aggregate.py").read_text(encoding="utf-8")
        assert "aggregate.csv" in stub

    def test_aggregate_header_lists_seeds(self, tmp_path):
        rows = aggregate_traces({
            0: frame_for(tmp_path, "s0.csv", rows_for((1.0, -0.5))),
            2: frame_for(tmp_path, "s2.csv", rows_for((1.0, -0.7))),
        })
        path = write_aggregate_csv(tmp_path / "aggregate.csv", rows, "abc", [0, 2])
        assert path.read_text(encoding="utf-8").splitlines()[0] == "# config_hash=abc seeds=0,2"
        assert read_aggregate_csv(path)["n_runs"].tolist() == [2]
