"""
CBOサービス - 観測と介入を切り替えながら因果GPで最適な介入を探す
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from causal_bo.causal_graph import InterventionSet, exploration_set, format_set
from causal_bo.config import output_config, performance_config, policy_config
from causal_bo.errors import ConfigError, InsufficientData, NoEstimand, NumericalFailure
from causal_bo.estimation import DoEffectSurface, build_surface
from causal_bo.gp import GpModel, causal_prior, fit_hyperparameters, new_model
from causal_bo.models import (
    Action,
    CboConfig,
    Direction,
    ExplorationSetKind,
    GpSnapshot,
    PriorKind,
    RunResult,
    TraceRow,
)
from causal_bo.policy import (
    CostModel,
    DomainBox,
    EpsilonInputs,
    epsilon_estimate,
    intervention_cost,
    optimize_acquisition,
)
from causal_bo.scenarios import Scenario, scenario_service
from causal_bo.scm import Dataset, oracle_mean, sample_observational

logger = logging.getLogger(__name__)

class SeedStage(IntEnum):
    """乱数ストリームの用途タグ"""
    OBSERVE = 1
    SYSTEM = 2
    DESIGN = 3
    SURFACE = 4
    HULL = 5
    ACQUISITION = 6
    POLICY = 7


def derive_seed(seed: int, *labels: int) -> int:
    """実行シードと用途ラベルから独立なシードを作る"""
    return int(np.random.SeedSequence([int(seed), *(int(label) for label in labels)]).generate_state(1)[0])


@dataclass(frozen=True)
class RunContext:
    """実行中に変わらない設定一式"""
    config: CboConfig
    scenario: Scenario
    sets: Tuple[InterventionSet, ...]
    cost: CostModel
    box: DomainBox
    direction: Direction
    n: int
    n_max: int
    p: int


@dataclass(frozen=True)
class SetRecord:
    """探索集合の1要素に対する介入データとGP"""
    nodes: InterventionSet
    inputs: Tuple[Tuple[float, ...], ...] = ()
    targets: Tuple[float, ...] = ()
    gp: Optional[GpModel] = field(default=None, repr=False)
    prior: PriorKind = PriorKind.STANDARD


@dataclass(frozen=True)
class BestRecord:
    set: InterventionSet
    values: Tuple[float, ...]
    y: float


@dataclass(frozen=True)
class CboState:
    context: RunContext
    observational: Dataset
    records: Mapping[InterventionSet, SetRecord] = field(hash=False)
    best: Optional[BestRecord] = None
    cumulative_cost: float = 0.0
    t: int = 0
    interventions: int = 0
    queries: int = 0
    observe_batches: int = 0
    rng_state: Mapping = field(default=None, hash=False, repr=False)
    trace: Tuple[TraceRow, ...] = ()

    @property
    def y_star(self) -> Optional[float]:
        return self.best.y if self.best is not None else None


def prepare(config: CboConfig) -> RunContext:
    """シナリオの既定値で設定を補完し、探索集合とコストを決める"""
    scenario = scenario_service.get(config.scenario, config.linear_path)
    graph = scenario.graph
    max_size = config.max_set_size or scenario.max_set_size

    if config.es == ExplorationSetKind.BO and max_size is not None and len(graph.treatments) > max_size:
        raise ConfigError(f"BO set has {len(graph.treatments)} variables but at most {max_size} may be intervened on")
    sets = exploration_set(graph, config.es, custom=config.custom_sets, max_size=max_size)

    cost_name = config.cost_config or scenario.default_cost
    if cost_name not in scenario.costs:
        raise ConfigError(f"unknown cost config {cost_name!r}; known: {', '.join(sorted(scenario.costs))}")
    strays = sorted(set(config.cost_overrides) - set(graph.nodes))
    if strays:
        raise ConfigError("cost overrides name nodes outside the graph", nodes=strays)
    overrides = {node: (o.fixed, o.variable) for node, o in config.cost_overrides.items()}
    cost = scenario.costs[cost_name].with_overrides(overrides)

    bounds = dict(scenario.box.bounds)
    for node, bound in config.domains.items():
        if node not in graph.treatments:
            raise ConfigError("domains can only be set for treatment nodes", nodes=[node])
        lo, hi = scenario.sem.domains.get(node, (-np.inf, np.inf))
        if bound[0] < lo or bound[1] > hi:
            raise ConfigError(f"domain of {node} must lie inside [{lo}, {hi}]", nodes=[node])
        bounds[node] = tuple(bound)

    n = config.N or scenario.n_default
    n_max = config.N_max or scenario.n_max(n)
    if n > n_max:
        raise ConfigError(f"N ({n}) exceeds N_max ({n_max})")
    return RunContext(
        config=config,
        scenario=scenario,
        sets=tuple(sets),
        cost=cost,
        box=DomainBox(bounds),
        direction=config.direction or scenario.direction,
        n=n,
        n_max=n_max,
        p=scenario.p_default if config.P is None else config.P,
    )


def _is_better(y: float, best: Optional[BestRecord], direction: Direction) -> bool:
    if best is None:
        return True
    return y < best.y if direction == Direction.MIN else y > best.y


def _best_of(records: Mapping[InterventionSet, SetRecord], direction: Direction) -> Optional[BestRecord]:
    best = None
    for nodes in sorted(records, key=lambda s: (len(s), s)):
        rec = records[nodes]
        for x, y in zip(rec.inputs, rec.targets):
            if _is_better(y, best, direction):
                best = BestRecord(nodes, x, y)
    return best


def _query_system(ctx: RunContext, nodes: InterventionSet, x: Sequence[float], counter: int) -> float:
    """システムへの介入問い合わせ（SEMオラクルの平均）"""
    iv = {node: float(v) for node, v in zip(nodes, x)}
    seed = derive_seed(ctx.config.seed, SeedStage.SYSTEM, counter)
    return oracle_mean(ctx.scenario.sem, iv, ctx.config.eval_samples, seed).mean


def _model_for(ctx: RunContext, data: Dataset, rec: SetRecord) -> SetRecord:
    """事前分布を組み立て、学習データを載せ、必要ならハイパーパラメータを当てはめる"""
    lo, hi = ctx.box.arrays(rec.nodes)
    prior = ctx.config.prior
    gp = None
    if prior == PriorKind.CAUSAL:
        try:
            surface: DoEffectSurface = build_surface(
                ctx.scenario.plans, data, rec.nodes, ctx.scenario.graph,
                seed=derive_seed(ctx.config.seed, SeedStage.SURFACE),
            )
            mean_fn, kernel = causal_prior(surface)
            gp = new_model(lo, hi, mean_fn=mean_fn, sigma_fn=kernel.sigma_fn)
        except (NoEstimand, InsufficientData) as e:
            logger.warning(f"Falling back to zero-mean prior for {format_set(rec.nodes)}: {e}")
            prior = PriorKind.STANDARD
    if gp is None:
        gp = new_model(lo, hi)

    if rec.targets:
        inputs = np.array(rec.inputs, dtype=float).reshape(len(rec.targets), len(rec.nodes))
        gp = gp.with_data(inputs, np.array(rec.targets))
    gp = _fit(ctx, gp, rec.nodes)
    return replace(rec, gp=gp, prior=prior)


def _fit(ctx: RunContext, gp: GpModel, nodes: InterventionSet) -> GpModel:
    if not ctx.config.fit_hyperparameters or len(gp.targets) < 2:
        return gp
    try:
        return fit_hyperparameters(gp)
    except NumericalFailure as e:
        logger.warning(f"Keeping default hyperparameters for {format_set(nodes)}: {e}")
        return gp


def _rebuild(ctx: RunContext, data: Dataset, records: Mapping[InterventionSet, SetRecord]) -> Dict[InterventionSet, SetRecord]:
    return {nodes: _model_for(ctx, data, records[nodes]) for nodes in ctx.sets}


def initialize(config: CboConfig) -> CboState:
    """観測データと集合ごとの初期介入データを作り、事前分布を組み立てる"""
    ctx = prepare(config)
    seed = config.seed
    logger.info(
        f"Initializing CBO on {ctx.scenario.name}: sets={[format_set(s) for s in ctx.sets]} "
        f"N={ctx.n} N_max={ctx.n_max} P={ctx.p} prior={config.prior.value}"
    )
    data = sample_observational(ctx.scenario.sem, ctx.n, seed=derive_seed(seed, SeedStage.OBSERVE, 0))

    records: Dict[InterventionSet, SetRecord] = {}
    counter = 0
    for index, nodes in enumerate(ctx.sets):
        if ctx.p == 0:
            points: List[Tuple[float, ...]] = []
        elif not nodes:
            points = [()]
        else:
            lo, hi = ctx.box.arrays(nodes)
            design = qmc.LatinHypercube(d=len(nodes), seed=derive_seed(seed, SeedStage.DESIGN, index)).random(n=ctx.p)
            points = [tuple(float(v) for v in row) for row in qmc.scale(design, lo, hi)]
        targets = []
        for x in points:
            targets.append(_query_system(ctx, nodes, x, counter))
            counter += 1
        records[nodes] = SetRecord(nodes=nodes, inputs=tuple(points), targets=tuple(targets))

    records = _rebuild(ctx, data, records)
    rng = np.random.default_rng(derive_seed(seed, SeedStage.POLICY))
    return CboState(
        context=ctx,
        observational=data,
        records=records,
        best=_best_of(records, ctx.direction),
        queries=counter,
        rng_state=rng.bit_generator.state,
    )


def _solve(ctx: RunContext, state: CboState, index: int, nodes: InterventionSet):
    rec = state.records[nodes]
    try:
        x, alpha = optimize_acquisition(
            rec.gp, nodes, ctx.box, ctx.cost, state.y_star, ctx.direction,
            seed=derive_seed(ctx.config.seed, SeedStage.ACQUISITION, state.interventions, index),
        )
        logger.debug(f"Acquisition for {format_set(nodes)}: alpha={alpha:.6g} at {np.round(x, 4).tolist()}")
        return nodes, x, alpha, None
    except NumericalFailure as e:
        logger.warning(f"Skipping {format_set(nodes)} this step: {e}")
        return nodes, None, None, str(e)


def step(state: CboState, config: Optional[CboConfig] = None, force_epsilon: Optional[float] = None) -> CboState:
    """1反復: ε > u なら観測、そうでなければ最良の (集合, 値) に介入"""
    ctx = state.context
    started = time.perf_counter()
    rng = np.random.default_rng()
    rng.bit_generator.state = dict(state.rng_state)

    treatments = ctx.scenario.graph.treatments
    data = state.observational
    fixed = force_epsilon if force_epsilon is not None else ctx.config.epsilon
    if fixed is not None:
        eps, hull_se = float(fixed), 0.0
    else:
        eps, hull_se = epsilon_estimate(
            EpsilonInputs(data.matrix(treatments), ctx.box, treatments, data.n_rows, ctx.n_max),
            seed=derive_seed(ctx.config.seed, SeedStage.HULL),
        )
    u = rng.uniform()
    note = f"hull_se={hull_se:.6g}" if hull_se > 0 else ""

    if eps > u and data.n_rows < ctx.n_max:
        size = min((config or ctx.config).batch, ctx.n_max - data.n_rows)
        batch_index = state.observe_batches + 1
        fresh = sample_observational(ctx.scenario.sem, size, seed=derive_seed(ctx.config.seed, SeedStage.OBSERVE, batch_index))
        data = data.append(fresh)
        records = _rebuild(ctx, data, state.records)
        logger.info(f"t={state.t}: observe {size} rows (eps={eps:.4f}, N={data.n_rows})")
        row = TraceRow(
            t=state.t, action=Action.OBSERVE, epsilon=eps, cum_cost=state.cumulative_cost,
            best=state.y_star, wall_ms=_elapsed(started), note=note,
        )
        return replace(
            state, observational=data, records=records, t=state.t + 1, observe_batches=batch_index,
            rng_state=rng.bit_generator.state, trace=state.trace + (row,),
        )

    workers = max(1, min(performance_config.max_workers, len(ctx.sets)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda item: _solve(ctx, state, *item), enumerate(ctx.sets)))
    skipped = [f"skipped {format_set(nodes)}: {err}" for nodes, _, _, err in results if err is not None]
    candidates = [(nodes, x, alpha) for nodes, x, alpha, err in results if err is None]
    if not candidates:
        raise NumericalFailure("acquisition failed for every exploration set")
    # 同点はサイズの小さい集合、次に辞書順
    nodes, x, alpha = min(candidates, key=lambda c: (-c[2], len(c[0]), c[0]))

    values = tuple(float(v) for v in x)
    y = _query_system(ctx, nodes, values, state.queries)
    cost = float(intervention_cost(ctx.cost, nodes, np.array(values))) if nodes else policy_config.empty_set_cost

    rec = state.records[nodes]
    updated = replace(rec, inputs=rec.inputs + (values,), targets=rec.targets + (y,))
    gp = rec.gp.add_point(np.array(values, dtype=float).reshape(1, len(nodes)), y)
    updated = replace(updated, gp=_fit(ctx, gp, nodes))
    records = dict(state.records)
    records[nodes] = updated

    best = BestRecord(nodes, values, y) if _is_better(y, state.best, ctx.direction) else state.best
    total = state.cumulative_cost + cost
    logger.info(
        f"t={state.t}: intervene {format_set(nodes)}={list(np.round(values, 4))} y={y:.4f} "
        f"alpha={alpha:.4g} cost={cost:g} best={best.y:.4f}"
    )
    row = TraceRow(
        t=state.t, action=Action.INTERVENE, epsilon=eps, set=nodes, values=values, step_cost=cost,
        cum_cost=total, y_hat=y, best=best.y, wall_ms=_elapsed(started),
        note="; ".join(filter(None, [note] + skipped)),
    )
    return replace(
        state, records=records, best=best, cumulative_cost=total, t=state.t + 1,
        interventions=state.interventions + 1, queries=state.queries + 1,
        rng_state=rng.bit_generator.state, trace=state.trace + (row,),
    )


def _elapsed(started: float) -> float:
    if not output_config.record_wall_time:
        return 0.0
    return round((time.perf_counter() - started) * 1000.0, 3)


def result_of(state: CboState) -> RunResult:
    best = state.best
    if best is None:
        return RunResult(cumulative_cost=state.cumulative_cost)
    return RunResult(set=best.set, values=best.values, y=best.y, cumulative_cost=state.cumulative_cost)


def snapshots(state: CboState) -> List[GpSnapshot]:
    """集合ごとのGPハイパーパラメータと学習データ"""
    out = []
    for nodes in state.context.sets:
        rec = state.records[nodes]
        gp = rec.gp
        out.append(GpSnapshot(
            set=nodes,
            prior=rec.prior,
            lengthscale=gp.kernel.lengthscale,
            variance=gp.kernel.variance,
            noise_variance=gp.noise_variance,
            inputs=[list(x) for x in rec.inputs],
            targets=list(rec.targets),
        ))
    return out


def run(config: CboConfig) -> Tuple[List[TraceRow], RunResult, CboState]:
    """初期化の後、T 回介入するまで step を繰り返す"""
    try:
        state = initialize(config)
        while state.interventions < config.T:
            state = step(state, config)
    except Exception as e:
        logger.error(f"CBO run error (scenario={config.scenario}, seed={config.seed}): {e}")
        raise
    result = result_of(state)
    logger.info(
        f"Finished {config.scenario} seed={config.seed}: best {format_set(result.set or ())}="
        f"{list(result.values)} y={result.y} cost={result.cumulative_cost:g}"
    )
    return list(state.trace), result, state


class CboService:
    """複数シードの実行をまとめるサービス"""

    def __init__(self, max_workers: Optional[int] = None):
        self.max_workers = max_workers or performance_config.max_workers

    def run_seeds(self, config: CboConfig, seeds: Sequence[int]) -> Dict[int, object]:
        """シードごとに run を実行。失敗は例外オブジェクトとして返す"""
        if len(set(seeds)) != len(seeds):
            raise ConfigError("duplicate seeds", nodes=[str(s) for s in seeds if list(seeds).count(s) > 1])

        def one(seed: int):
            try:
                return seed, run(config.model_copy(update={"seed": seed}))
            except Exception as e:  # noqa: BLE001
                return seed, e

        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            return dict(pool.map(one, seeds))


# グローバルCBOサービス
cbo_service = CboService()
