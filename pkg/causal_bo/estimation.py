"""
介入効果の推定 - 観測データから E[Y|do(X=x)] と V[Y|do(X=x)] を求める

推定式はプラン（回帰・周辺平均・条件付き再標本化の組み合わせ）として表す。
テキスト形式:
    {B,D}: avg(b'~marg(B), c~cond(C|B)) { reg(Y | B=b', C=c, D=d) }
    {B,D,E}: same({D,E})
    {}: reg(Y)
"""
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from causal_bo.cache_manager import cache_manager, digest
from causal_bo.causal_graph import CausalGraph, InterventionSet, format_set, normalize_set, strip_comment
from causal_bo.config import EstimationConfig, estimation_config
from causal_bo.errors import (
    DegenerateColumn,
    InsufficientData,
    NoEstimand,
    NoNeighbors,
    PlanMismatch,
    PlanSyntaxError,
    UnknownNode,
)
from causal_bo.scm import Dataset

logger = logging.getLogger(__name__)


# ---- 条件付き期待値の回帰 -------------------------------------------------

def as_rows(points, dim: int) -> np.ndarray:
    """点または点の配列を (m, dim) に揃える"""
    points = np.asarray(points, dtype=float)
    if points.ndim == 2:
        return points
    if dim == 0:
        return np.empty((1, 0))
    return points.reshape(-1, dim)


def _median_spread(column: np.ndarray, limit: int = 500) -> float:
    """ペア間絶対差の中央値（中央値ヒューリスティック）"""
    if len(column) > limit:
        column = column[np.linspace(0, len(column) - 1, limit).astype(int)]
    diffs = np.abs(column[:, None] - column[None, :])
    spread = float(np.median(diffs[np.triu_indices(len(column), k=1)]))
    return spread if spread > 0 else float(np.std(column))


@dataclass(frozen=True)
class ConditionalRegressor:
    """E[target | givens] と E[target^2 | givens] の推定器"""
    target: str
    givens: Tuple[str, ...]
    method: str
    inputs: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    y2: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)
    spread: float = 0.0
    k: int = 1
    chunk_elements: int = 2_000_000

    def predict(self, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if not self.givens:
            m = len(queries)
            return np.full(m, self.y.mean()), np.full(m, self.y2.mean() + self.spread / len(self.y))
        if queries.shape[1] != len(self.givens):
            raise PlanMismatch(f"expected {len(self.givens)} conditioning values, got {queries.shape[1]}")
        if self.method == "knn":
            return self._knn(queries)
        return self._nadaraya_watson(queries)

    def _nadaraya_watson(self, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n, d = self.inputs.shape
        means = np.empty(len(queries))
        seconds = np.empty(len(queries))
        step = max(1, self.chunk_elements // max(n * d, 1))
        for start in range(0, len(queries), step):
            stop = start + step
            z = (queries[start:stop, None, :] - self.inputs[None, :, :]) / self.scale
            log_w = -0.5 * np.sum(z * z, axis=2)
            # 最大値で正規化（遠方でも重みの和 > 0）
            log_w -= log_w.max(axis=1, keepdims=True)
            w = np.exp(log_w)
            w /= w.sum(axis=1, keepdims=True)
            means[start:stop] = w @ self.y
            # 推定の不確かさ: 全体分散 / 有効サンプル数 (1 / Σw²) を加える
            seconds[start:stop] = w @ self.y2 + self.spread * np.sum(w * w, axis=1)
        return means, seconds

    def _knn(self, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        tree = cKDTree(self.inputs / self.scale)
        _, idx = tree.query(queries / self.scale, k=self.k)
        idx = idx.reshape(len(queries), -1)
        return self.y[idx].mean(axis=1), self.y2[idx].mean(axis=1) + self.spread / idx.shape[1]


def fit_regressor(
    data: Dataset,
    target: str,
    givens: Sequence[str],
    method: Optional[str] = None,
    settings: EstimationConfig = estimation_config,
) -> ConditionalRegressor:
    """Nadaraya-Watson（既定）または kNN 回帰を当てはめる"""
    method = method or settings.regressor
    if method not in ("nadaraya_watson", "knn"):
        raise ValueError(f"unknown regressor {method!r}")
    n = data.n_rows
    if n < settings.min_rows:
        raise InsufficientData(f"regression of {target} needs at least {settings.min_rows} rows, got {n}")

    givens = tuple(givens)
    y = data.column(target)
    inputs = data.matrix(givens)
    degenerate = [g for g, col in zip(givens, inputs.T) if np.ptp(col) == 0]
    if degenerate:
        raise DegenerateColumn("conditioning column has zero variance", nodes=degenerate)

    d = len(givens)
    if method == "knn":
        scale = inputs.std(axis=0) if d else np.ones(0)
    else:
        rate = n ** (-1.0 / (d + 4))
        scale = np.array([_median_spread(col) for col in inputs.T]) * settings.bandwidth_scale * rate
    return ConditionalRegressor(
        target=target,
        givens=givens,
        method=method,
        inputs=inputs,
        y=y,
        y2=y * y,
        scale=scale,
        spread=float(np.var(y)),
        k=max(1, min(n, math.ceil(math.sqrt(n)))),
        chunk_elements=settings.chunk_elements,
    )


@dataclass(frozen=True)
class NeighborSampler:
    """条件付き再標本化: 条件値に近い k 行からランダムに1行を選ぶ"""
    nodes: Tuple[str, ...]
    givens: Tuple[str, ...]
    tree: cKDTree = field(repr=False)
    scale: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    k: int

    @classmethod
    def build(cls, data: Dataset, nodes: Sequence[str], givens: Sequence[str]) -> "NeighborSampler":
        n = data.n_rows
        if n < 1:
            raise NoNeighbors("conditional resampling needs at least one row", nodes=list(nodes))
        cond = data.matrix(givens)
        scale = cond.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(
            nodes=tuple(nodes),
            givens=tuple(givens),
            tree=cKDTree(cond / scale),
            scale=scale,
            values=data.matrix(nodes),
            k=max(1, min(n, math.ceil(math.sqrt(n)))),
        )

    def draw(self, conditions: np.ndarray, ranks: np.ndarray) -> np.ndarray:
        """conditions: (Q, M, g), ranks: (M,) → (Q, M, len(nodes))"""
        q, m, g = conditions.shape
        _, idx = self.tree.query(conditions.reshape(-1, g) / self.scale, k=self.k)
        idx = idx.reshape(q * m, -1)
        chosen = idx[np.arange(q * m), np.tile(ranks, q)]
        if np.any(chosen >= len(self.values)):
            raise NoNeighbors("no usable rows near the conditioning values", nodes=list(self.nodes))
        return self.values[chosen].reshape(q, m, len(self.nodes))


# ---- プラン -------------------------------------------------------------

@dataclass(frozen=True)
class BoundRef:
    """avg(...) で束縛された名前"""
    name: str


@dataclass(frozen=True)
class FreeRef:
    """介入値（プランの自由変数）"""
    node: str


Ref = Union[BoundRef, FreeRef]


@dataclass(frozen=True)
class Regress:
    target: str
    assignments: Tuple[Tuple[str, Ref], ...] = ()


@dataclass(frozen=True)
class MarginalDraw:
    names: Tuple[str, ...]
    nodes: Tuple[str, ...]


@dataclass(frozen=True)
class ConditionalDraw:
    names: Tuple[str, ...]
    nodes: Tuple[str, ...]
    given: Tuple[Tuple[str, Ref], ...]


Binding = Union[MarginalDraw, ConditionalDraw]


@dataclass(frozen=True)
class Average:
    """束縛を左から順に合成（Compose）し、独立な束縛の積（Product）で平均する"""
    bindings: Tuple[Binding, ...]
    body: Regress


@dataclass(frozen=True)
class EstimandPlan:
    set: InterventionSet
    root: Union[Regress, Average]
    text: str = ""

    @property
    def target(self) -> str:
        return self.root.target if isinstance(self.root, Regress) else self.root.body.target

    def free_nodes(self) -> set:
        refs: List[Ref] = []
        if isinstance(self.root, Regress):
            refs = [r for _, r in self.root.assignments]
        else:
            for b in self.root.bindings:
                if isinstance(b, ConditionalDraw):
                    refs.extend(r for _, r in b.given)
            refs.extend(r for _, r in self.root.body.assignments)
        return {r.node for r in refs if isinstance(r, FreeRef)}


_PLAN_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_']*)|(?P<sym>[(){},~|=]))")


def _plan_tokens(text: str, line: Optional[int]) -> List[str]:
    tokens, pos, text = [], 0, text.strip()
    while pos < len(text):
        m = _PLAN_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise PlanSyntaxError(f"unexpected character in plan: {text[pos:].strip()[:1]!r}", line=line)
        tokens.append(m.group("name") or m.group("sym"))
        pos = m.end()
    return tokens


class _PlanParser:
    def __init__(self, text: str, xs: InterventionSet, line: Optional[int]):
        self.tokens = _plan_tokens(text, line)
        self.pos = 0
        self.xs = xs
        self.line = line
        self.bound: List[str] = []

    def peek(self) -> Optional[str]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, expected: Optional[str] = None) -> str:
        tok = self.peek()
        if tok is None or (expected is not None and tok != expected):
            raise PlanSyntaxError(f"expected {expected or 'a token'}, found {tok or 'end of plan'}", line=self.line)
        self.pos += 1
        return tok

    def name(self) -> str:
        tok = self.take()
        if not re.match(r"^[A-Za-z_]", tok):
            raise PlanSyntaxError(f"expected a name, found {tok!r}", line=self.line)
        return tok

    def ref(self, name: str) -> Ref:
        if name in self.bound:
            return BoundRef(name)
        for node in self.xs:
            if node.lower() == name.lower():
                return FreeRef(node)
        raise PlanMismatch(f"name {name!r} is neither bound nor an intervened variable", line=self.line)

    def free(self, node: str) -> Ref:
        if node not in self.xs:
            raise PlanMismatch(f"bare {node} must be an intervened variable", line=self.line)
        return FreeRef(node)

    def plan(self):
        head = self.name()
        if head == "reg":
            root = self.regress()
        elif head == "avg":
            root = self.average()
        else:
            raise PlanSyntaxError(f"plan must start with reg or avg, found {head!r}", line=self.line)
        if self.peek() is not None:
            raise PlanSyntaxError(f"trailing input {self.peek()!r}", line=self.line)
        return root

    def regress(self) -> Regress:
        self.take("(")
        target = self.name()
        assignments = []
        if self.peek() == "|":
            self.take("|")
            while True:
                node = self.name()
                self.take("=")
                assignments.append((node, self.ref(self.name())))
                if self.peek() != ",":
                    break
                self.take(",")
        self.take(")")
        return Regress(target, tuple(assignments))

    def average(self) -> Average:
        self.take("(")
        bindings = [self.binding()]
        while self.peek() == ",":
            self.take(",")
            bindings.append(self.binding())
        self.take(")")
        self.take("{")
        if self.name() != "reg":
            raise PlanSyntaxError("avg body must be a reg(...) term", line=self.line)
        body = self.regress()
        self.take("}")
        return Average(tuple(bindings), body)

    def binding(self) -> Binding:
        if self.peek() == "(":
            self.take("(")
            names = [self.name()]
            while self.peek() == ",":
                self.take(",")
                names.append(self.name())
            self.take(")")
        else:
            names = [self.name()]
        self.take("~")
        kind = self.name()
        self.take("(")
        nodes = [self.name()]
        while self.peek() == ",":
            self.take(",")
            nodes.append(self.name())
        if len(nodes) != len(names):
            raise PlanSyntaxError(f"{len(names)} names bound to {len(nodes)} variables", line=self.line)

        if kind == "marg":
            self.take(")")
            binding: Binding = MarginalDraw(tuple(names), tuple(nodes))
        elif kind == "cond":
            self.take("|")
            given = [self.cond_arg()]
            while self.peek() == ",":
                self.take(",")
                given.append(self.cond_arg())
            self.take(")")
            binding = ConditionalDraw(tuple(names), tuple(nodes), tuple(given))
        else:
            raise PlanSyntaxError(f"unknown draw {kind!r}", line=self.line)
        # 束縛は後続の束縛と本体から参照できる
        self.bound.extend(names)
        return binding

    def cond_arg(self) -> Tuple[str, Ref]:
        node = self.name()
        if self.peek() == "=":
            self.take("=")
            return node, self.ref(self.name())
        return node, self.free(node)


def parse_plan(text: str, xs: Iterable[str], line: Optional[int] = None) -> EstimandPlan:
    """プランをパースし、自由変数が介入集合と一致することを確認"""
    xs = normalize_set(xs)
    plan = EstimandPlan(set=xs, root=_PlanParser(text, xs, line).plan(), text=text.strip())
    free = plan.free_nodes()
    if free != set(xs):
        raise PlanMismatch(
            f"plan free variables {format_set(sorted(free))} differ from {format_set(xs)}", line=line
        )
    return plan


_REGISTRY_LINE = re.compile(r"^\{([^}]*)\}\s*:\s*(.+)$")
_ALIAS = re.compile(r"^same\(\s*\{([^}]*)\}\s*\)$")


def _set_from(text: str) -> InterventionSet:
    return normalize_set(p.strip() for p in text.split(",") if p.strip())


class PlanRegistry:
    """シナリオごとの推定プラン表"""

    def __init__(self, plans: Optional[Mapping[InterventionSet, EstimandPlan]] = None):
        self._plans: Dict[InterventionSet, EstimandPlan] = dict(plans or {})

    @classmethod
    def parse(cls, text: str, graph: Optional[CausalGraph] = None) -> "PlanRegistry":
        plans: Dict[InterventionSet, EstimandPlan] = {}
        aliases: Dict[InterventionSet, Tuple[InterventionSet, int]] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = strip_comment(raw)
            if not line:
                continue
            m = _REGISTRY_LINE.match(line)
            if not m:
                raise PlanSyntaxError(f"cannot parse {line!r}", line=lineno)
            xs, body = _set_from(m.group(1)), m.group(2).strip()
            alias = _ALIAS.match(body)
            if alias:
                aliases[xs] = (_set_from(alias.group(1)), lineno)
            else:
                plans[xs] = parse_plan(body, xs, line=lineno)
                if graph is not None:
                    _check_plan_nodes(plans[xs], graph, lineno)

        for xs, (other, lineno) in aliases.items():
            if other not in plans:
                raise PlanSyntaxError(f"alias refers to unregistered set {format_set(other)}", line=lineno)
            if not set(other) <= set(xs):
                raise PlanMismatch(f"alias target {format_set(other)} is not a subset of {format_set(xs)}", line=lineno)
            # 同一のプランオブジェクトを共有する
            plans[xs] = plans[other]
        return cls(plans)

    def lookup(self, xs: Iterable[str]) -> Optional[EstimandPlan]:
        return self._plans.get(normalize_set(xs))

    def sets(self) -> List[InterventionSet]:
        return sorted(self._plans, key=lambda s: (len(s), s))


def _check_plan_nodes(plan: EstimandPlan, graph: CausalGraph, lineno: int) -> None:
    nodes = [plan.target]
    root = plan.root
    regs = [root] if isinstance(root, Regress) else [root.body]
    if isinstance(root, Average):
        for b in root.bindings:
            nodes.extend(b.nodes)
            if isinstance(b, ConditionalDraw):
                nodes.extend(n for n, _ in b.given)
    for r in regs:
        nodes.extend(n for n, _ in r.assignments)
    unknown = sorted({n for n in nodes if n not in graph.roles})
    if unknown:
        raise UnknownNode(f"plan on line {lineno} uses unknown variables", nodes=unknown)


# ---- プラン評価 -----------------------------------------------------------

class PlanEvaluator:
    """固定データ・固定シードでプランを評価する（同じ乱数を全クエリで共有）"""

    def __init__(self, data: Dataset, seed: int = 0, settings: EstimationConfig = estimation_config):
        self.data = data
        self.seed = seed
        self.settings = settings
        self._regressors: Dict[Tuple[str, Tuple[str, ...]], ConditionalRegressor] = {}
        self._samplers: Dict[Tuple[Tuple[str, ...], Tuple[str, ...]], NeighborSampler] = {}

    def regressor(self, target: str, givens: Tuple[str, ...]) -> ConditionalRegressor:
        key = (target, givens)
        if key not in self._regressors:
            self._regressors[key] = fit_regressor(self.data, target, givens, settings=self.settings)
        return self._regressors[key]

    def sampler(self, nodes: Tuple[str, ...], givens: Tuple[str, ...]) -> NeighborSampler:
        key = (nodes, givens)
        if key not in self._samplers:
            self._samplers[key] = NeighborSampler.build(self.data, nodes, givens)
        return self._samplers[key]

    def evaluate(self, plan: EstimandPlan, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """queries: (Q, |plan.set|)、列順は plan.set。戻り値は (平均, 2次モーメント)"""
        queries = as_rows(queries, len(plan.set))
        q = len(queries)
        free = {node: queries[:, i] for i, node in enumerate(plan.set)}
        if isinstance(plan.root, Regress):
            reg = plan.root
            givens = tuple(node for node, _ in reg.assignments)
            cols = [free[ref.node] for _, ref in reg.assignments]
            x = np.column_stack(cols) if cols else np.empty((q, 0))
            return self.regressor(reg.target, givens).predict(x)
        return self._average(plan.root, free, q)

    def _average(self, avg: Average, free: Dict[str, np.ndarray], q: int) -> Tuple[np.ndarray, np.ndarray]:
        n = self.data.n_rows
        if n < 2:
            raise InsufficientData(f"averaging needs at least 2 rows, got {n}")
        m = min(n, self.settings.monte_carlo_samples)
        rng = np.random.default_rng(self.seed)
        bound: Dict[str, np.ndarray] = {}

        def value(ref: Ref) -> np.ndarray:
            if isinstance(ref, FreeRef):
                return np.broadcast_to(free[ref.node][:, None], (q, m))
            return bound[ref.name]

        for binding in avg.bindings:
            if isinstance(binding, MarginalDraw):
                rows = rng.permutation(n)[:m]
                for name, node in zip(binding.names, binding.nodes):
                    bound[name] = np.broadcast_to(self.data.column(node)[rows][None, :], (q, m))
            else:
                givens = tuple(node for node, _ in binding.given)
                sampler = self.sampler(binding.nodes, givens)
                conditions = np.stack([value(ref) for _, ref in binding.given], axis=2)
                ranks = rng.integers(0, sampler.k, m)
                drawn = sampler.draw(conditions, ranks)
                for i, name in enumerate(binding.names):
                    bound[name] = drawn[:, :, i]

        body = avg.body
        givens = tuple(node for node, _ in body.assignments)
        x = np.stack([value(ref) for _, ref in body.assignments], axis=2).reshape(q * m, len(givens))
        mean, second = self.regressor(body.target, givens).predict(x)
        return mean.reshape(q, m).mean(axis=1), second.reshape(q, m).mean(axis=1)


def evaluate_plan(
    plan: EstimandPlan,
    data: Dataset,
    xs: Union[Mapping[str, float], Sequence[float], np.ndarray],
    seed: int = 0,
    settings: EstimationConfig = estimation_config,
) -> Tuple[float, float]:
    """1点の介入値でプランを評価し (平均, 2次モーメント) を返す。同じシードなら同じ結果"""
    if isinstance(xs, Mapping):
        missing = [node for node in plan.set if node not in xs]
        if missing:
            raise PlanMismatch(f"assignment for {format_set(plan.set)} is missing {missing}")
        xs = [xs[node] for node in plan.set]
    mean, second = PlanEvaluator(data, seed, settings).evaluate(plan, as_rows(xs, len(plan.set)))
    if len(mean) != 1:
        raise PlanMismatch(f"expected a single assignment, got {len(mean)}")
    return float(mean[0]), float(second[0])


def backdoor_mean(
    data: Dataset,
    xs: Mapping[str, float],
    adjust: Sequence[str],
    target: str,
    seed: int = 0,
    settings: EstimationConfig = estimation_config,
) -> Tuple[float, float]:
    """バックドア調整: 調整変数の経験分布で E[Y | Xs=xs, Z] を平均する"""
    nodes = normalize_set(xs)
    overlap = sorted(set(adjust) & set(nodes))
    if overlap:
        raise PlanMismatch("adjustment set overlaps the intervened variables", nodes=overlap)
    plan = backdoor_plan(nodes, tuple(adjust), target)
    mean, second = PlanEvaluator(data, seed, settings).evaluate(plan, [[xs[n] for n in nodes]])
    return float(mean[0]), float(second[0])


def backdoor_plan(nodes: InterventionSet, adjust: Tuple[str, ...], target: str) -> EstimandPlan:
    assignments = tuple((n, FreeRef(n)) for n in nodes) + tuple((z, BoundRef(f"{z}'")) for z in adjust)
    reg = Regress(target, assignments)
    if not adjust:
        return EstimandPlan(set=nodes, root=reg, text=f"backdoor({format_set(nodes)})")
    draw = MarginalDraw(tuple(f"{z}'" for z in adjust), adjust)
    text = f"backdoor({format_set(nodes)} | {format_set(adjust)})"
    return EstimandPlan(set=nodes, root=Average((draw,), reg), text=text)


def frontdoor_mean(
    data: Dataset,
    xs: Mapping[str, float],
    mediators: Sequence[str],
    target: str,
    seed: int = 0,
    settings: EstimationConfig = estimation_config,
) -> Tuple[float, float]:
    """フロントドア調整: 媒介変数を Xs=xs の条件付きで再標本化し、Xs の周辺で内側を平均する"""
    nodes = normalize_set(xs)
    mediators = tuple(mediators)
    overlap = sorted(set(mediators) & set(nodes))
    if overlap or not mediators:
        raise PlanMismatch("mediators must be non-empty and disjoint from the intervened variables", nodes=overlap)
    primes = tuple(f"{n}'" for n in nodes)
    draws = (
        ConditionalDraw(mediators, mediators, tuple((n, FreeRef(n)) for n in nodes)),
        MarginalDraw(primes, nodes),
    )
    body = Regress(
        target,
        tuple((m, BoundRef(m)) for m in mediators) + tuple((n, BoundRef(p)) for n, p in zip(nodes, primes)),
    )
    plan = EstimandPlan(set=nodes, root=Average(draws, body), text=f"frontdoor({format_set(nodes)} via {format_set(mediators)})")
    mean, second = PlanEvaluator(data, seed, settings).evaluate(plan, [[xs[n] for n in nodes]])
    return float(mean[0]), float(second[0])


def parent_adjustment(graph: CausalGraph, xs: InterventionSet) -> Optional[Tuple[str, ...]]:
    """Pa(Xs)\\Xs が有効な調整集合なら返す（Xs に交絡辺がなく、Xs の子孫を含まない場合）"""
    xs_set = set(xs)
    if any(graph.confounded_with(x) for x in xs):
        return None
    adjust = set()
    descendants = set()
    for x in xs:
        adjust.update(graph.parents(x))
        descendants.update(graph.descendants(x))
    adjust -= xs_set
    if adjust & descendants:
        return None
    return tuple(sorted(adjust))


# ---- 介入効果曲面 ---------------------------------------------------------

@dataclass
class DoEffectSurface:
    """介入集合上の mean_fn / var_fn（点ごとの評価をキャッシュ）"""
    set: InterventionSet
    plan: EstimandPlan
    evaluator: PlanEvaluator = field(repr=False)
    cache_key: str = ""

    @property
    def shared_with(self) -> Optional[InterventionSet]:
        """別の集合のプランを共有している場合、その集合"""
        return self.plan.set if self.plan.set != self.set else None

    def moments(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        points = as_rows(points, len(self.set))
        cols = [self.set.index(node) for node in self.plan.set]
        projected = points[:, cols]
        means = np.empty(len(points))
        seconds = np.empty(len(points))
        missing: List[int] = []
        keys = []
        for i, row in enumerate(projected):
            key = (self.cache_key, tuple(np.round(row, 12)))
            keys.append(key)
            hit = cache_manager.get_surface_value(key)
            if hit is None:
                missing.append(i)
            else:
                means[i], seconds[i] = hit
        if missing:
            m, s = self.evaluator.evaluate(self.plan, projected[missing])
            for j, i in enumerate(missing):
                means[i], seconds[i] = m[j], s[j]
                cache_manager.set_surface_value(keys[i], (float(m[j]), float(s[j])))
        return means, seconds

    def mean(self, points: np.ndarray) -> np.ndarray:
        return self.moments(points)[0]

    def variance(self, points: np.ndarray) -> np.ndarray:
        m, s = self.moments(points)
        return np.maximum(0.0, s - m * m)


def build_surface(
    registry: Optional[PlanRegistry],
    data: Dataset,
    xs: Iterable[str],
    graph: CausalGraph,
    seed: int = 0,
    settings: EstimationConfig = estimation_config,
) -> DoEffectSurface:
    """登録プラン → 空集合 → 親による調整 の順に推定式を選び曲面を作る"""
    xs = normalize_set(xs)
    plan = registry.lookup(xs) if registry is not None else None
    if plan is None and not xs:
        plan = EstimandPlan(set=(), root=Regress(graph.target), text="reg(Y)")
    if plan is None:
        adjust = parent_adjustment(graph, xs)
        if adjust is None:
            raise NoEstimand(f"no estimand for {format_set(xs)}", nodes=xs)
        plan = backdoor_plan(xs, adjust, graph.target)
        logger.debug(f"Using parent adjustment {format_set(adjust)} for {format_set(xs)}")

    if data.n_rows < 2:
        raise InsufficientData(f"surface for {format_set(xs)} needs at least 2 rows, got {data.n_rows}")
    key = digest(plan.set, repr(plan.root), data.digest(), seed, settings.regressor,
                 settings.monte_carlo_samples, settings.bandwidth_scale)
    return DoEffectSurface(set=xs, plan=plan, evaluator=PlanEvaluator(data, seed, settings), cache_key=key)
