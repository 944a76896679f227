"""
構造方程式モデル - 祖先サンプリングによる観測・介入シミュレータ
"""
import hashlib
import itertools
import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from causal_bo.cache_manager import cache_manager, digest
from causal_bo.causal_graph import CausalGraph, GraphBuilder, strip_comment, validate
from causal_bo.errors import (
    DependencyViolation,
    DomainViolation,
    InvalidSampleSize,
    NonManipulativeCut,
    NumericOverflow,
    SemSyntaxError,
    UnknownNode,
)
from causal_bo.expression import (
    BinOp,
    Constant,
    EvalEnv,
    Expr,
    LatentRef,
    NoiseRef,
    VarRef,
    map_refs,
    parse_expression,
)
from causal_bo.models import Direction, NodeRole

logger = logging.getLogger(__name__)

Intervention = Mapping[str, float]


@dataclass(frozen=True)
class NoiseSpec:
    """外生ノイズの分布"""
    kind: str  # normal | uniform
    a: float
    b: float

    def __post_init__(self):
        if self.kind == "normal" and self.b < 0:
            raise SemSyntaxError(f"normal noise needs a non-negative scale, got {self.b}")
        if self.kind == "uniform" and not self.a <= self.b:
            raise SemSyntaxError(f"uniform noise needs a <= b, got ({self.a}, {self.b})")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "normal":
            return rng.normal(self.a, self.b, n)
        return rng.uniform(self.a, self.b, n)


@dataclass(frozen=True)
class Sem:
    """グラフ + ノードごとの構造方程式 + 潜在変数 + 介入領域"""
    graph: CausalGraph
    equations: Mapping[str, Expr] = field(hash=False)
    noises: Mapping[str, Optional[NoiseSpec]] = field(hash=False)
    latents: Mapping[str, NoiseSpec] = field(hash=False)
    domains: Mapping[str, Tuple[float, float]] = field(hash=False, default_factory=dict)

    def fingerprint(self) -> str:
        return digest(
            self.graph.fingerprint(),
            sorted((k, repr(v)) for k, v in self.equations.items()),
            sorted(self.noises.items(), key=lambda kv: kv[0]),
            sorted(self.latents.items()),
            sorted(self.domains.items()),
        )


@dataclass(frozen=True)
class Dataset:
    """列がノードに対応するサンプル表"""
    frame: pd.DataFrame = field(hash=False)
    provenance: str = "observational"
    intervention: Tuple[Tuple[str, float], ...] = ()
    seed: Optional[int] = None

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    @property
    def columns(self) -> Tuple[str, ...]:
        return tuple(self.frame.columns)

    def column(self, name: str) -> np.ndarray:
        if name not in self.frame.columns:
            raise UnknownNode(f"dataset has no column {name!r}", nodes=[name])
        return self.frame[name].to_numpy(dtype=float)

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.empty((self.n_rows, 0))
        return np.column_stack([self.column(n) for n in names])

    def append(self, other: "Dataset") -> "Dataset":
        frame = pd.concat([self.frame, other.frame[list(self.frame.columns)]], ignore_index=True)
        # 結合したデータは単一のシードに対応しない
        same = self.provenance == other.provenance and self.intervention == other.intervention
        return Dataset(
            frame=frame,
            provenance=self.provenance if same else "mixed",
            intervention=self.intervention if same else (),
            seed=None,
        )

    def digest(self) -> str:
        payload = hashlib.md5(np.ascontiguousarray(self.frame.to_numpy(dtype=float)).tobytes()).hexdigest()
        return digest(self.columns, self.n_rows, payload)


@dataclass(frozen=True)
class OracleResult:
    mean: float
    se: float
    n: int


# ---- テキスト形式 -------------------------------------------------------

_LET = re.compile(r"^let\s+(\S+)\s*=\s*(.*)$")
_NOISE_TAIL = re.compile(r"^(.*?)(?:\+\s*)?\bnoise\s+(normal|uniform)\s*\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\)\s*$")
_LATENT = re.compile(r"^latent\s+(\S+)\s*~\s*(normal|uniform)\s*\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\)$")
_DOMAIN = re.compile(r"^domain\s+(\S+)\s*=\s*\[\s*([^,\]]+)\s*,\s*([^,\]]+)\s*\]$")


def _number(text: str, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise SemSyntaxError(f"expected a number, found {text.strip()!r}", line=lineno) from None


def parse_sem(text: str, graph: Optional[CausalGraph] = None) -> Sem:
    """SEMテキストを読み込む。graph 未指定時はテキスト内の node/edge/confounder 宣言を使う"""
    builder = GraphBuilder() if graph is None else None
    raw_equations: Dict[str, Tuple[Expr, int]] = {}
    noises: Dict[str, Optional[NoiseSpec]] = {}
    latents: Dict[str, NoiseSpec] = {}
    domains: Dict[str, Tuple[float, float]] = {}
    domain_lines: Dict[str, int] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = strip_comment(raw)
        if not line:
            continue
        if builder is not None and builder.accepts(line):
            builder.feed(line, lineno)
            continue

        m = _LET.match(line)
        if m:
            node, rhs = m.group(1), m.group(2)
            if node in raw_equations:
                raise SemSyntaxError(f"second equation for {node}", line=lineno)
            tail = _NOISE_TAIL.match(rhs)
            if tail:
                body = tail.group(1).strip()
                noises[node] = NoiseSpec(tail.group(2), _number(tail.group(3), lineno), _number(tail.group(4), lineno))
                expr = parse_expression(body, line=lineno) if body else Constant(0.0)
                expr = BinOp("+", expr, NoiseRef(node))
            else:
                if re.search(r"\bnoise\b", rhs):
                    raise SemSyntaxError("noise clause must end the equation", line=lineno)
                noises[node] = None
                expr = parse_expression(rhs, line=lineno)
            raw_equations[node] = (expr, lineno)
            continue

        m = _LATENT.match(line)
        if m:
            latents[m.group(1)] = NoiseSpec(m.group(2), _number(m.group(3), lineno), _number(m.group(4), lineno))
            continue

        m = _DOMAIN.match(line)
        if m:
            lo, hi = _number(m.group(2), lineno), _number(m.group(3), lineno)
            if not lo < hi:
                raise SemSyntaxError(f"empty domain [{lo}, {hi}]", line=lineno)
            domains[m.group(1)] = (lo, hi)
            domain_lines[m.group(1)] = lineno
            continue

        raise SemSyntaxError(f"cannot parse {line!r}", line=lineno)

    graph = builder.finish() if builder is not None else graph
    for node, lineno in domain_lines.items():
        if node not in graph.roles:
            raise UnknownNode(f"domain for unknown node (line {lineno})", nodes=[node])

    equations: Dict[str, Expr] = {}
    for node, (expr, lineno) in raw_equations.items():
        if node not in graph.roles:
            raise UnknownNode(f"equation for unknown node (line {lineno})", nodes=[node])
        equations[node] = _resolve(expr, node, graph, latents, lineno)

    sem = Sem(graph=graph, equations=equations, noises=noises, latents=latents, domains=domains)
    check_sem(sem)
    return sem


def _resolve(expr: Expr, node: str, graph: CausalGraph, latents: Mapping[str, NoiseSpec], lineno: int) -> Expr:
    def resolve(ref: VarRef) -> Expr:
        if ref.name in latents:
            return LatentRef(ref.name)
        if ref.name not in graph.roles:
            raise UnknownNode(f"equation of {node} references unknown name (line {lineno})", nodes=[ref.name])
        return ref

    return map_refs(expr, resolve)


def check_sem(sem: Sem) -> None:
    """方程式とグラフの整合性チェック"""
    graph = sem.graph
    validate(graph)
    missing = [n for n in graph.nodes if n not in sem.equations]
    if missing:
        raise DependencyViolation("nodes without an equation", nodes=missing)

    latent_users: Dict[str, set] = {}
    for node, expr in sem.equations.items():
        refs = expr.references()
        parents = set(graph.parents(node))
        strays = sorted(name for kind, name in refs if kind == "var" and name not in parents)
        if strays:
            raise DependencyViolation(f"equation of {node} references non-parents", nodes=strays)
        for kind, name in refs:
            if kind == "latent":
                latent_users.setdefault(name, set()).add(node)

    for a, b in sorted(graph.bidirected_edges):
        if not any({a, b} <= users for users in latent_users.values()):
            raise DependencyViolation("confounder edge without a shared latent", nodes=[a, b])


# ---- サンプリング -------------------------------------------------------

def check_intervention(sem: Sem, intervention: Intervention) -> Dict[str, float]:
    iv = {}
    for node, value in intervention.items():
        if node not in sem.graph.roles:
            raise UnknownNode("intervention on unknown node", nodes=[node])
        if sem.graph.roles[node] != NodeRole.TREATMENT:
            raise NonManipulativeCut(f"intervention on non-treatment node {node}", nodes=[node])
        value = float(value)
        lo, hi = sem.domains.get(node, (-np.inf, np.inf))
        if not lo <= value <= hi:
            raise DomainViolation(f"value {value} of {node} outside [{lo}, {hi}]", nodes=[node])
        iv[node] = value
    return iv


def _simulate(sem: Sem, n: int, intervention: Dict[str, float], seed: Optional[int]) -> pd.DataFrame:
    if n < 1:
        raise InvalidSampleSize(f"sample size must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    # 乱数の消費順は宣言順に依存しない（潜在変数 → ノードノイズ、いずれも名前順）
    latents = {name: sem.latents[name].sample(rng, n) for name in sorted(sem.latents)}
    noises = {}
    for node in sem.graph.nodes:
        spec = sem.noises.get(node)
        noises[node] = spec.sample(rng, n) if spec is not None else np.zeros(n)

    values: Dict[str, np.ndarray] = {}
    env = EvalEnv(values=values, latents=latents, noises=noises, n=n)
    with np.errstate(all="ignore"):
        for node in sem.graph.topological_order():
            if node in intervention:
                column = np.full(n, intervention[node])
            else:
                column = np.asarray(sem.equations[node].evaluate(env), dtype=float)
                if column.shape != (n,):
                    column = np.broadcast_to(column, (n,)).copy()
            if not np.all(np.isfinite(column)):
                raise NumericOverflow(f"non-finite values while evaluating {node}", nodes=[node])
            values[node] = column
    return pd.DataFrame({node: values[node] for node in sem.graph.nodes})


def sample_observational(sem: Sem, n: int, seed: Optional[int] = None) -> Dataset:
    """観測分布から n 行を生成"""
    frame = _simulate(sem, n, {}, seed)
    return Dataset(frame=frame, provenance="observational", seed=seed)


def sample_interventional(sem: Sem, intervention: Intervention, n: int, seed: Optional[int] = None) -> Dataset:
    """do(intervention) の下で n 行を生成"""
    iv = check_intervention(sem, intervention)
    frame = _simulate(sem, n, iv, seed)
    return Dataset(frame=frame, provenance="interventional", intervention=tuple(sorted(iv.items())), seed=seed)


def oracle_mean(sem: Sem, intervention: Intervention, n: int, seed: Optional[int] = None) -> OracleResult:
    """E[Y|do(intervention)] のモンテカルロ推定と標準誤差"""
    if n < 2:
        raise InvalidSampleSize(f"oracle needs at least 2 samples, got {n}")
    iv = check_intervention(sem, intervention)
    key = digest(sem.fingerprint(), sorted(iv.items()), n, seed)
    cached = cache_manager.get_oracle(key)
    if cached is not None:
        return cached

    y = _simulate(sem, n, iv, seed)[sem.graph.target].to_numpy()
    result = OracleResult(mean=float(y.mean()), se=float(y.std(ddof=1) / np.sqrt(n)), n=n)
    cache_manager.set_oracle(key, result)
    return result


def grid_optimum(
    sem: Sem,
    nodes: Sequence[str],
    box: Mapping[str, Tuple[float, float]],
    points_per_dim: int,
    n: int,
    seed: Optional[int] = None,
    direction: Direction = Direction.MIN,
) -> Tuple[Tuple[float, ...], OracleResult]:
    """格子上のオラクル評価による真の最適値（検証用）"""
    axes = [np.linspace(box[node][0], box[node][1], points_per_dim) for node in nodes]
    best_point: Tuple[float, ...] = ()
    best: Optional[OracleResult] = None
    sign = 1.0 if Direction(direction) == Direction.MIN else -1.0
    for point in itertools.product(*axes):
        res = oracle_mean(sem, dict(zip(nodes, point)), n, seed)
        if best is None or sign * res.mean < sign * best.mean:
            best, best_point = res, tuple(float(v) for v in point)
    logger.info(f"Grid optimum over {len(nodes)}-d grid: {best_point} -> {best.mean:.4f}")
    return best_point, best


# ---- 線形SEM --------------------------------------------------------------

@dataclass
class LinearCoefficients:
    """線形SEMの係数"""
    weights: Dict[Tuple[str, str], float] = field(default_factory=dict)  # (child, parent) -> w
    intercepts: Dict[str, float] = field(default_factory=dict)
    noise_std: Dict[str, float] = field(default_factory=dict)
    domains: Dict[str, Tuple[float, float]] = field(default_factory=dict)


_COEF = re.compile(r"^coef\s+(\S+)\s+(\S+)\s*=\s*(\S+)$")
_INTERCEPT = re.compile(r"^intercept\s+(\S+)\s*=\s*(\S+)$")
_NOISE = re.compile(r"^noise\s+(\S+)\s*=\s*(\S+)$")


def parse_linear(text: str) -> LinearCoefficients:
    coefs = LinearCoefficients()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = strip_comment(raw)
        if not line:
            continue
        m = _COEF.match(line)
        if m:
            coefs.weights[(m.group(1), m.group(2))] = _number(m.group(3), lineno)
            continue
        m = _INTERCEPT.match(line)
        if m:
            coefs.intercepts[m.group(1)] = _number(m.group(2), lineno)
            continue
        m = _NOISE.match(line)
        if m:
            coefs.noise_std[m.group(1)] = _number(m.group(2), lineno)
            continue
        m = _DOMAIN.match(line)
        if m:
            lo, hi = _number(m.group(2), lineno), _number(m.group(3), lineno)
            if not lo < hi:
                raise SemSyntaxError(f"empty domain [{lo}, {hi}]", line=lineno)
            coefs.domains[m.group(1)] = (lo, hi)
            continue
        raise SemSyntaxError(f"cannot parse {line!r}", line=lineno)
    return coefs


def build_linear_sem(
    graph: CausalGraph,
    coefficients: LinearCoefficients,
    domains: Optional[Mapping[str, Tuple[float, float]]] = None,
) -> Sem:
    """グラフと係数から線形ガウスSEMを組み立てる。交絡辺ごとに標準正規の潜在変数を置く"""
    latents: Dict[str, NoiseSpec] = {}
    shared: Dict[str, List[str]] = {}
    for a, b in sorted(graph.bidirected_edges):
        name = f"U_{a}_{b}"
        latents[name] = NoiseSpec("normal", 0.0, 1.0)
        shared.setdefault(a, []).append(name)
        shared.setdefault(b, []).append(name)

    named = (
        {n for pair in coefficients.weights for n in pair}
        | set(coefficients.intercepts)
        | set(coefficients.noise_std)
        | set(coefficients.domains)
    )
    unknown = sorted(n for n in named if n not in graph.roles)
    if unknown:
        raise UnknownNode("coefficients for unknown nodes", nodes=unknown)

    equations: Dict[str, Expr] = {}
    noises: Dict[str, Optional[NoiseSpec]] = {}
    for node in graph.nodes:
        expr: Expr = Constant(coefficients.intercepts.get(node, 0.0))
        for parent in graph.parents(node):
            w = coefficients.weights.get((node, parent), 0.0)
            expr = BinOp("+", expr, BinOp("*", Constant(w), VarRef(parent)))
        for latent in shared.get(node, []):
            expr = BinOp("+", expr, LatentRef(latent))
        std = coefficients.noise_std.get(node, 1.0)
        noises[node] = NoiseSpec("normal", 0.0, std)
        equations[node] = BinOp("+", expr, NoiseRef(node))

    if domains is None:
        domains = coefficients.domains
    sem = Sem(graph=graph, equations=equations, noises=noises, latents=latents, domains=dict(domains))
    check_sem(sem)
    return sem
