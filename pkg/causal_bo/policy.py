"""
介入ポリシー - コストモデル、因果EI、獲得関数の最適化、観測/介入の切り替え
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, Delaunay, QhullError
from scipy.stats import norm, qmc

from causal_bo.config import AcquisitionConfig, PolicyConfig, acquisition_config, policy_config
from causal_bo.errors import ConfigError, UnknownNode
from causal_bo.gp import GpModel, Posterior
from causal_bo.models import Direction

logger = logging.getLogger(__name__)

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class CostModel:
    """ノードごとの固定コストと、|x| を加える可変フラグ"""
    fixed: Mapping[str, float] = field(hash=False)
    variable: Mapping[str, bool] = field(hash=False, default_factory=dict)

    def __post_init__(self):
        bad = sorted(n for n, c in self.fixed.items() if not c > 0)
        if bad:
            raise ConfigError("fixed intervention costs must be positive", nodes=bad)

    def with_overrides(self, overrides: Mapping[str, Tuple[Optional[float], Optional[bool]]]) -> "CostModel":
        fixed, variable = dict(self.fixed), dict(self.variable)
        for node, (cost, flag) in overrides.items():
            if cost is not None:
                fixed[node] = cost
            if flag is not None:
                variable[node] = flag
        return CostModel(fixed=fixed, variable=variable)


def intervention_cost(model: CostModel, nodes: Sequence[str], values: np.ndarray) -> np.ndarray:
    """Σ fixed(X) (+ |x| if variable)。values は (d,) または (m, d)"""
    values = np.asarray(values, dtype=float)
    single = values.ndim < 2
    values = values.reshape(-1, len(nodes)) if len(nodes) else np.empty((1 if single else len(values), 0))
    total = np.zeros(len(values))
    for j, node in enumerate(nodes):
        if node not in model.fixed:
            raise UnknownNode("no cost declared for node", nodes=[node])
        total += model.fixed[node]
        if model.variable.get(node, False):
            total += np.abs(values[:, j])
    return total[0] if single else total


@dataclass(frozen=True)
class DomainBox:
    """処置ノードごとの介入領域 [lo, hi]"""
    bounds: Mapping[str, Tuple[float, float]] = field(hash=False)

    def __post_init__(self):
        bad = sorted(n for n, (lo, hi) in self.bounds.items() if not lo < hi)
        if bad:
            raise ConfigError("domain bounds must satisfy lo < hi", nodes=bad)

    def arrays(self, nodes: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        missing = [n for n in nodes if n not in self.bounds]
        if missing:
            raise UnknownNode("no interventional domain for node", nodes=missing)
        lo = np.array([self.bounds[n][0] for n in nodes], dtype=float)
        hi = np.array([self.bounds[n][1] for n in nodes], dtype=float)
        return lo, hi

    def volume(self, nodes: Sequence[str]) -> float:
        lo, hi = self.arrays(nodes)
        return float(np.prod(hi - lo))


# ---- 獲得関数 -----------------------------------------------------------

def expected_improvement(post: Posterior, y_star: Optional[float], direction: Direction) -> np.ndarray:
    """EIの閉形式。s = 0 では max(改善量, 0)"""
    mean = np.asarray(post.mean, dtype=float)
    s = np.sqrt(np.maximum(np.asarray(post.variance, dtype=float), 0.0))
    if y_star is None or not np.isfinite(y_star):
        # まだ介入データがない: どこでも改善とみなす
        return np.full(mean.shape, np.inf)
    improvement = (y_star - mean) if Direction(direction) == Direction.MIN else (mean - y_star)
    ei = np.maximum(improvement, 0.0)
    positive = s > 0
    if np.any(positive):
        u = improvement[positive] / s[positive]
        ei = ei.astype(float)
        ei[positive] = improvement[positive] * norm.cdf(u) + s[positive] * norm.pdf(u)
    return np.maximum(ei, 0.0)


def causal_ei(
    gp: GpModel,
    x: np.ndarray,
    y_star: Optional[float],
    cost: CostModel,
    nodes: Sequence[str],
    direction: Direction,
    settings: PolicyConfig = policy_config,
) -> np.ndarray:
    """EI / Co(Xs, xs)。空集合のコストは settings.empty_set_cost"""
    ei = expected_improvement(gp.posterior(x), y_star, direction)
    if not nodes:
        return ei / settings.empty_set_cost
    return ei / intervention_cost(cost, nodes, np.asarray(x, dtype=float).reshape(-1, len(nodes)))


def optimize_acquisition(
    gp: GpModel,
    nodes: Sequence[str],
    box: DomainBox,
    cost: CostModel,
    y_star: Optional[float],
    direction: Direction,
    seed: int = 0,
    budget: AcquisitionConfig = acquisition_config,
) -> Tuple[np.ndarray, float]:
    """LHS の上位点から座標ごとの黄金分割探索で因果EIを最大化"""
    nodes = tuple(nodes)

    def acquisition(points: np.ndarray) -> np.ndarray:
        return causal_ei(gp, points, y_star, cost, nodes, direction)

    if not nodes:
        return np.empty(0), float(acquisition(np.empty((1, 0)))[0])

    d = len(nodes)
    lo, hi = box.arrays(nodes)
    sample = qmc.LatinHypercube(d=d, seed=seed).random(n=budget.lhs_points)
    seeds = qmc.scale(sample, lo, hi)
    values = acquisition(seeds)
    order = np.argsort(-values, kind="stable")[: budget.starts]
    current = seeds[order].copy()
    current_val = values[order].copy()

    per_coordinate = max(1, math.ceil(budget.golden_iterations / d))
    for j in range(d):
        current, current_val = _golden_section(acquisition, current, current_val, j, lo[j], hi[j], per_coordinate)

    best = int(np.argmax(current_val))
    x_best = np.clip(current[best], lo, hi)
    return x_best, float(current_val[best])


def _golden_section(acquisition, points, values, j, lo, hi, iterations):
    """全スタート点を並列に、座標 j 上で黄金分割探索（最大化）。悪化する更新は採用しない"""
    s = len(points)

    def at(coord: np.ndarray) -> np.ndarray:
        trial = points.copy()
        trial[:, j] = coord
        return acquisition(trial)

    a, b = np.full(s, float(lo)), np.full(s, float(hi))
    c = b - _INV_PHI * (b - a)
    e = a + _INV_PHI * (b - a)
    fc, fe = at(c), at(e)
    for _ in range(iterations):
        left = fc >= fe
        a_new = np.where(left, a, c)
        b_new = np.where(left, e, b)
        c_new = np.where(left, b_new - _INV_PHI * (b_new - a_new), e)
        e_new = np.where(left, c, a_new + _INV_PHI * (b_new - a_new))
        f_trial = at(np.where(left, c_new, e_new))
        fc, fe = np.where(left, f_trial, fe), np.where(left, fc, f_trial)
        a, b, c, e = a_new, b_new, c_new, e_new

    mid = (a + b) / 2.0
    f_mid = at(mid)
    candidates = np.stack([points[:, j], c, e, mid])
    scores = np.stack([values, fc, fe, f_mid])
    pick = np.argmax(scores, axis=0)
    out = points.copy()
    out[:, j] = candidates[pick, np.arange(s)]
    return out, scores[pick, np.arange(s)]


# ---- 観測/介入の切り替え --------------------------------------------------

class HullVolume(NamedTuple):
    volume: float
    stderr: float


def hull_volume_estimate(
    points: np.ndarray, seed: int = 0, settings: PolicyConfig = policy_config
) -> HullVolume:
    """凸包の体積。d <= 3 は厳密、d > 3 はバウンディングボックス上のモンテカルロ"""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) == 0:
        return HullVolume(0.0, 0.0)
    n, d = points.shape
    if d == 1:
        return HullVolume(float(np.ptp(points[:, 0])), 0.0)
    if n < d + 1 or np.linalg.matrix_rank(points - points[0]) < d:
        return HullVolume(0.0, 0.0)
    if d <= 3:
        try:
            return HullVolume(float(ConvexHull(points).volume), 0.0)
        except QhullError:
            return HullVolume(0.0, 0.0)

    lo, hi = points.min(axis=0), points.max(axis=0)
    box_volume = float(np.prod(hi - lo))
    try:
        triangulation = Delaunay(points)
    except QhullError:
        return HullVolume(0.0, 0.0)
    rng = np.random.default_rng(seed)
    draws = rng.uniform(lo, hi, size=(settings.hull_mc_samples, d))
    hit = float(np.mean(triangulation.find_simplex(draws) >= 0))
    stderr = box_volume * math.sqrt(hit * (1.0 - hit) / settings.hull_mc_samples)
    return HullVolume(hit * box_volume, stderr)


def hull_volume(points: np.ndarray, seed: int = 0) -> float:
    return hull_volume_estimate(points, seed).volume


@dataclass(frozen=True)
class EpsilonInputs:
    """観測点（処置座標のみ）、介入領域、現在の観測数と上限"""
    points: np.ndarray = field(repr=False)
    box: DomainBox
    nodes: Tuple[str, ...]
    n: int
    n_max: int

    def __post_init__(self):
        if self.n_max < 1:
            raise ConfigError(f"N_max must be at least 1, got {self.n_max}")
        if self.n > self.n_max:
            raise ConfigError(f"N ({self.n}) exceeds N_max ({self.n_max})")


def epsilon_estimate(inputs: EpsilonInputs, seed: int = 0) -> Tuple[float, float]:
    """(ε, 凸包体積の標準誤差)"""
    hull = hull_volume_estimate(inputs.points, seed)
    ratio = min(1.0, hull.volume / inputs.box.volume(inputs.nodes))
    value = ratio * inputs.n / inputs.n_max
    return float(min(1.0, max(0.0, value))), hull.stderr


def epsilon(inputs: EpsilonInputs, seed: int = 0) -> float:
    """観測を選ぶ確率 ε"""
    return epsilon_estimate(inputs, seed)[0]


def cost_presets(fixed_costs: Mapping[str, float], nodes: Sequence[str]) -> Dict[str, CostModel]:
    """unit（全て1）、fixed（固定コスト）、variable（固定コスト + |x|）"""
    fixed = {n: float(fixed_costs.get(n, 1.0)) for n in nodes}
    return {
        "unit": CostModel(fixed={n: 1.0 for n in nodes}),
        "fixed": CostModel(fixed=fixed),
        "variable": CostModel(fixed=fixed, variable={n: True for n in nodes}),
    }
