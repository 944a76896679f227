"""
出力 - トレースCSV、サマリーJSON、シード間の集計CSV
"""
import json
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from causal_bo.cache_manager import digest
from causal_bo.config import output_config
from causal_bo.models import AggregateRow, CboConfig, SummaryReport, TraceRow

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["t", "action", "epsilon", "set", "values", "step_cost", "cum_cost", "y_hat", "best", "wall_ms"]


def config_hash(config: CboConfig) -> str:
    """シードを除いた設定のハッシュ"""
    payload = config.model_dump(mode="json", exclude={"seed"})
    return digest(json.dumps(payload, sort_keys=True))


def _fmt(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return format(float(value), output_config.float_format)


def trace_frame(rows: Iterable[TraceRow]) -> pd.DataFrame:
    records = []
    for row in rows:
        records.append({
            "t": str(row.t),
            "action": row.action.value,
            "epsilon": _fmt(row.epsilon),
            "set": "" if row.set is None else "{" + ",".join(row.set) + "}",
            "values": ";".join(_fmt(v) for v in row.values),
            "step_cost": _fmt(row.step_cost),
            "cum_cost": _fmt(row.cum_cost),
            "y_hat": _fmt(row.y_hat),
            "best": _fmt(row.best),
            "wall_ms": _fmt(row.wall_ms),
        })
    return pd.DataFrame.from_records(records, columns=TRACE_COLUMNS)


def write_trace_csv(path: Path, rows: Sequence[TraceRow], cfg_hash: str, seed: int) -> Path:
    """先頭に設定ハッシュとシードのコメント行を付けて書き出す"""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash} seed={seed}\n")
        trace_frame(rows).to_csv(fh, index=False, lineterminator="\n")
    return path


def read_trace_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", dtype={"set": str, "values": str}, keep_default_na=False,
                       na_values={"epsilon": [""], "y_hat": [""], "best": [""]})


def write_summary_json(path: Path, summary: SummaryReport) -> Path:
    path = Path(path)
    path.write_text(summary.model_dump_json(indent=2), encoding="utf-8")
    return path


def aggregate_traces(traces: Dict[int, pd.DataFrame]) -> List[AggregateRow]:
    """累積コストの各水準で、シードごとの最良値（階段関数）の平均と標準誤差"""
    steps = {}
    for seed, frame in traces.items():
        rows = frame[(frame["action"] == "intervene") & frame["best"].notna()]
        steps[seed] = (rows["cum_cost"].to_numpy(dtype=float), rows["best"].to_numpy(dtype=float))
    levels = sorted({float(c) for costs, _ in steps.values() for c in costs})

    out = []
    for level in levels:
        values = []
        for costs, bests in steps.values():
            reached = np.nonzero(costs <= level)[0]
            if len(reached):
                values.append(bests[reached[-1]])
        k = len(values)
        se = float(np.std(values, ddof=1) / math.sqrt(k)) if k > 1 else 0.0
        out.append(AggregateRow(cost=level, n_runs=k, mean_best=float(np.mean(values)), se_best=se))
    return out


def write_aggregate_csv(path: Path, rows: Sequence[AggregateRow], cfg_hash: str, seeds: Sequence[int]) -> Path:
    """トレースと同じ形式のコメント行（シードは集計に使った全シード）を付けて書き出す"""
    frame = pd.DataFrame.from_records(
        [{"cost": _fmt(r.cost), "n_runs": str(r.n_runs), "mean_best": _fmt(r.mean_best), "se_best": _fmt(r.se_best)}
         for r in rows],
        columns=["cost", "n_runs", "mean_best", "se_best"],
    )
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash} seeds={','.join(str(s) for s in seeds)}\n")
        frame.to_csv(fh, index=False, lineterminator="\n")
    return path


def read_aggregate_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


PLOT_STUB = '''"""
aggregate.csv の最良値（平均 ± 標準誤差）を累積介入コストに対して描く
"""
import sys

import matplotlib.pyplot as plt
import pandas as pd

frame = pd.read_csv(sys.argv[1] if len(sys.argv) > 1 else "aggregate.csv", comment="#")
fig, ax = plt.subplots(figsize=(6, 4))
ax.step(frame["cost"], frame["mean_best"], where="post", label="mean best")
ax.fill_between(
    frame["cost"],
    frame["mean_best"] - frame["se_best"],
    frame["mean_best"] + frame["se_best"],
    step="post",
    alpha=0.3,
)
ax.set_xlabel("cumulative intervention cost")
ax.set_ylabel("best E[Y|do]")
ax.legend()
fig.tight_layout()
fig.savefig(sys.argv[2] if len(sys.argv) > 2 else "aggregate.png")
'''


def write_plot_stub(path: Path) -> Path:
    path = Path(path)
    path.write_text(PLOT_STUB, encoding="utf-8")
    return path
