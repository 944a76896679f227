"""
CLI - run / sweep / enumerate-sets / estimate / oracle

    python -m causal_bo.main run --config configs/toy.cfg
"""
import argparse
import configparser
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from causal_bo import __version__
from causal_bo.cache_manager import cache_manager
from causal_bo.causal_graph import exploration_set, format_set, normalize_set, parse_graph
from causal_bo.cbo_service import SeedStage, cbo_service, derive_seed, run, snapshots
from causal_bo.config import logging_config, output_config
from causal_bo.errors import CboError, ConfigError, DomainViolation, NoEstimand
from causal_bo.estimation import build_surface
from causal_bo.models import CboConfig, CostOverride, ExplorationSetKind, PriorKind, SummaryReport
from causal_bo.reporting import (
    aggregate_traces,
    config_hash,
    read_trace_csv,
    write_aggregate_csv,
    write_plot_stub,
    write_summary_json,
    write_trace_csv,
)
from causal_bo.scenarios import scenario_service
from causal_bo.scm import check_intervention, grid_optimum, oracle_mean, sample_observational

logger = logging.getLogger(__name__)

EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_OUTPUT = 3
EXIT_NO_ESTIMAND = 4


class OutputNotWritable(CboError):
    module = "cli"


# ---- 設定ファイル ---------------------------------------------------------

class ScenarioSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    linear: Optional[str] = None


class CboSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    T: Optional[int] = None
    N: Optional[int] = None
    N_max: Optional[int] = None
    P: Optional[int] = None
    seed: Optional[int] = None
    prior: Optional[PriorKind] = None
    es: Optional[str] = None
    direction: Optional[str] = None
    batch: Optional[int] = None
    eval_samples: Optional[int] = None
    cost_config: Optional[str] = None
    max_set_size: Optional[int] = None
    fit_hyperparameters: Optional[bool] = None
    epsilon: Optional[float] = None


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dir: str = "out"
    wall_time: bool = False


_SECTIONS = ("scenario", "cbo", "domains", "cost", "output")


def parse_sets_file(path: Path) -> List[Tuple[str, ...]]:
    """1行に1集合: "{B,D}" または "B, D"、空集合は "{}" """
    sets = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        body = line.strip("{} ")
        sets.append(normalize_set(p.strip() for p in body.split(",") if p.strip()))
    return sets


def parse_es(value: str) -> Tuple[ExplorationSetKind, Optional[List[Tuple[str, ...]]]]:
    if value.startswith("custom:"):
        return ExplorationSetKind.CUSTOM, parse_sets_file(Path(value.split(":", 1)[1]))
    try:
        return ExplorationSetKind(value.lower()), None
    except ValueError:
        raise ConfigError(f"unknown exploration set kind {value!r}") from None


def load_run_config(path: Path, overrides: Sequence[str] = ()) -> Tuple[CboConfig, OutputSection]:
    """設定ファイルを読み、未知のキーを拒否して CboConfig を作る"""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from None

    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option, value.strip())

    unknown = [s for s in parser.sections() if s not in _SECTIONS]
    if unknown:
        raise ConfigError("unknown config sections", nodes=unknown)
    section = lambda name: dict(parser.items(name)) if parser.has_section(name) else {}  # noqa: E731

    try:
        scenario = ScenarioSection(**section("scenario"))
        cbo = CboSection(**section("cbo"))
        output = OutputSection(**section("output"))
    except ValidationError as e:
        raise ConfigError(f"invalid config: {e}") from None

    domains = {}
    for node, text in section("domains").items():
        parts = [p.strip() for p in text.strip("[] ").split(",")]
        if len(parts) != 2:
            raise ConfigError(f"domain of {node} must be 'lo, hi'", nodes=[node])
        try:
            domains[node] = (float(parts[0]), float(parts[1]))
        except ValueError:
            raise ConfigError(f"domain of {node} must be numeric", nodes=[node]) from None

    costs: Dict[str, Dict[str, str]] = {}
    for key, value in section("cost").items():
        node, dot, field_name = key.rpartition(".")
        if not dot or field_name not in ("fixed", "variable"):
            raise ConfigError(f"cost keys look like <node>.fixed or <node>.variable, got {key!r}")
        costs.setdefault(node, {})[field_name] = value

    values = cbo.model_dump(exclude_none=True)
    for key in ("T", "N", "N_max", "P", "seed"):
        if key not in values:
            logger.info(f"Config key cbo.{key} not set; using the default")
    if "es" in values:
        values["es"], values["custom_sets"] = parse_es(values["es"])
    try:
        config = CboConfig(
            scenario=scenario.name,
            linear_path=scenario.linear,
            domains=domains,
            cost_overrides={node: CostOverride(**spec) for node, spec in costs.items()},
            **values,
        )
    except ValidationError as e:
        raise ConfigError(f"invalid config: {e}") from None
    return config, output


def _writable_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        marker = path / ".write_test"
        marker.write_text("", encoding="utf-8")
        marker.unlink()
    except OSError as e:
        raise OutputNotWritable(f"output directory {path} is not writable: {e}") from None
    return path


def _apply_cli_options(config: CboConfig, args) -> CboConfig:
    update = {}
    if getattr(args, "seed", None) is not None:
        update["seed"] = args.seed
    if getattr(args, "es", None):
        update["es"], update["custom_sets"] = parse_es(args.es)
    if getattr(args, "prior", None):
        update["prior"] = PriorKind(args.prior)
    if getattr(args, "baseline", False):
        # 標準BO相当の設定
        update.update(es=ExplorationSetKind.BO, custom_sets=None, prior=PriorKind.STANDARD, epsilon=0.0)
    if not update:
        return config
    try:
        return CboConfig(**{**config.model_dump(), **update})
    except ValidationError as e:
        raise ConfigError(f"invalid config: {e}") from None


def _summary(config: CboConfig, result, state, wall: Optional[float]) -> SummaryReport:
    return SummaryReport(
        version=__version__,
        config_hash=config_hash(config),
        seeds=[config.seed],
        result=result,
        config=config.model_dump(mode="json"),
        wall_time_s=wall,
        gp=snapshots(state),
        cache_stats=cache_manager.stats(),
        notes={str(row.t): row.note for row in state.trace if row.note},
    )


def _describe(result) -> str:
    if result.set is None:
        return "no interventional data"
    return f"({format_set(result.set)}, ({', '.join(f'{v:.4f}' for v in result.values)}), {result.y:.6f})"


# ---- サブコマンド ---------------------------------------------------------

def cmd_run(args) -> int:
    config, output = load_run_config(Path(args.config), args.set or [])
    config = _apply_cli_options(config, args)
    out_dir = _writable_dir(Path(args.output or output.dir))
    output_config.record_wall_time = output.wall_time or output_config.record_wall_time

    started = time.perf_counter()
    trace, result, state = run(config)
    wall = round(time.perf_counter() - started, 3)

    cfg_hash = config_hash(config)
    write_trace_csv(out_dir / "trace.csv", trace, cfg_hash, config.seed)
    write_summary_json(out_dir / "summary.json", _summary(config, result, state, wall))
    print(_describe(result))
    print(f"cumulative cost: {result.cumulative_cost:g}")
    return 0


def cmd_sweep(args) -> int:
    config, output = load_run_config(Path(args.config), args.set or [])
    config = _apply_cli_options(config, args)
    seeds = [int(s) for s in args.seeds]
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("duplicate seeds are not allowed", nodes=[str(s) for s in sorted(seeds)])
    out_dir = _writable_dir(Path(args.output or output.dir))
    output_config.record_wall_time = output.wall_time or output_config.record_wall_time

    cfg_hash = config_hash(config)
    outcomes = cbo_service.run_seeds(config, seeds)
    traces = {}
    failures = {}
    for seed in seeds:
        outcome = outcomes[seed]
        if isinstance(outcome, Exception):
            failures[str(seed)] = f"{type(outcome).__name__}: {outcome}"
            logger.error(f"Seed {seed} failed: {outcome}")
            continue
        trace, result, state = outcome
        seed_dir = _writable_dir(out_dir / f"seed_{seed}")
        seeded = config.model_copy(update={"seed": seed})
        path = write_trace_csv(seed_dir / "trace.csv", trace, cfg_hash, seed)
        write_summary_json(seed_dir / "summary.json", _summary(seeded, result, state, None))
        traces[seed] = read_trace_csv(path)
        print(f"seed {seed}: {_describe(result)}")

    # 集計は書き出したトレースから再計算する
    if traces:
        write_aggregate_csv(out_dir / "aggregate.csv", aggregate_traces(traces), cfg_hash, sorted(traces))
        write_plot_stub(out_dir / "plot_aggregate.py")
    completed = sorted(traces)
    summary = SummaryReport(
        version=__version__,
        config_hash=cfg_hash,
        seeds=completed,
        result=outcomes[completed[0]][1] if completed else {},
        config=config.model_dump(mode="json"),
        cache_stats=cache_manager.stats(),
        failures=failures,
    )
    write_summary_json(out_dir / "summary.json", summary)
    return EXIT_ERROR if failures else 0


def cmd_enumerate_sets(args) -> int:
    if args.graph:
        # 同梱シナリオのPOMIS登録を済ませてから照合する
        for name in scenario_service.names():
            scenario_service.get(name)
        graph = parse_graph(Path(args.graph).read_text(encoding="utf-8"))
        max_size = args.max_size
    else:
        scenario = scenario_service.get(args.scenario)
        graph = scenario.graph
        max_size = args.max_size or scenario.max_set_size
    kind, custom = parse_es(args.es)
    for nodes in exploration_set(graph, kind, custom=custom, max_size=max_size):
        print("∅" if not nodes else format_set(nodes))
    return 0


def _parse_assignment(args) -> Tuple[Tuple[str, ...], Tuple[float, ...]]:
    nodes = tuple(p.strip() for p in (args.set or "").split(",") if p.strip())
    values = tuple(float(p) for p in (args.values or "").split(",") if p.strip())
    if len(nodes) != len(values):
        raise ConfigError(f"{len(nodes)} variables but {len(values)} values")
    if len(set(nodes)) != len(nodes):
        raise ConfigError("a variable appears twice", nodes=nodes)
    order = sorted(range(len(nodes)), key=lambda i: nodes[i])
    return tuple(nodes[i] for i in order), tuple(values[i] for i in order)


def cmd_estimate(args) -> int:
    scenario = scenario_service.get(args.scenario)
    nodes, values = _parse_assignment(args)
    check_intervention(scenario.sem, dict(zip(nodes, values)))
    data = sample_observational(scenario.sem, args.n, seed=derive_seed(args.seed, SeedStage.OBSERVE, 0))
    surface = build_surface(scenario.plans, data, nodes, scenario.graph, seed=derive_seed(args.seed, SeedStage.SURFACE))
    point = np.array([values])
    mean, var = float(surface.mean(point)[0]), float(surface.variance(point)[0])

    if surface.shared_with is not None:
        print(f"note: estimand shared with {format_set(surface.shared_with)}")
    print(f"estimate: E[Y|do]={mean:.6f} V[Y|do]={var:.6f} (N={args.n}, plan: {surface.plan.text})")
    if args.oracle:
        res = oracle_mean(scenario.sem, dict(zip(nodes, values)), args.oracle_samples, seed=args.seed)
        print(f"oracle:   E[Y|do]={res.mean:.6f} ± {res.se:.6f} (n={res.n})")
    return 0


def cmd_oracle(args) -> int:
    scenario = scenario_service.get(args.scenario)
    if args.grid:
        nodes = tuple(p.strip() for p in args.set.split(",") if p.strip())
        point, res = grid_optimum(
            scenario.sem, nodes, scenario.box.bounds, args.grid, args.n, args.seed, scenario.direction
        )
        print(f"grid optimum: {format_set(nodes)}=({', '.join(f'{v:.4f}' for v in point)}) "
              f"E[Y|do]={res.mean:.6f} ± {res.se:.6f}")
        return 0
    nodes, values = _parse_assignment(args)
    res = oracle_mean(scenario.sem, dict(zip(nodes, values)), args.n, seed=args.seed)
    print(f"E[Y|do]={res.mean:.6f} ± {res.se:.6f} (n={res.n})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causal_bo", description="Causal Bayesian optimization experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_options(p):
        p.add_argument("--config", required=True)
        p.add_argument("--output")
        p.add_argument("--es", help="mis | pomis | bo | custom:<file>")
        p.add_argument("--prior", choices=[k.value for k in PriorKind])
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
        p.add_argument("--baseline", action="store_true", help="standard BO on all treatments (overrides --es and --prior)")

    p = sub.add_parser("run", help="run one CBO experiment")
    run_options(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one experiment per seed and aggregate")
    run_options(p)
    p.add_argument("--seeds", nargs="+", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("enumerate-sets", help="list exploration sets")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--graph")
    source.add_argument("--scenario")
    p.add_argument("--es", default="mis")
    p.add_argument("--max-size", type=int)
    p.set_defaults(func=cmd_enumerate_sets)

    p = sub.add_parser("estimate", help="estimate E[Y|do] from observational data")
    p.add_argument("--scenario", required=True)
    p.add_argument("--set", default="")
    p.add_argument("--values", default="")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--oracle-samples", type=int, default=100_000)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("oracle", help="query the simulator")
    p.add_argument("--scenario", required=True)
    p.add_argument("--set", default="")
    p.add_argument("--values", default="")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, help="points per dimension for a grid search")
    p.set_defaults(func=cmd_oracle)
    return parser


def exit_code(error: Exception) -> int:
    """例外クラスから終了コードを決める"""
    if isinstance(error, (ConfigError, DomainViolation)):
        return EXIT_CONFIG
    if isinstance(error, (OutputNotWritable, OSError)):
        return EXIT_OUTPUT
    if isinstance(error, NoEstimand):
        return EXIT_NO_ESTIMAND
    return EXIT_ERROR


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, logging_config.level.upper(), logging.INFO),
        format=logging_config.format,
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CboError as e:
        print(f"error [{e.module}] {type(e).__name__}: {e}", file=sys.stderr)
        return exit_code(e)
    except OSError as e:
        print(f"error [cli] {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_OUTPUT


if __name__ == "__main__":
    sys.exit(main())
