"""
シナリオサービス - 同梱のグラフ・SEM・推定プラン・コスト設定を読み込む
"""
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple

from causal_bo.causal_graph import CausalGraph, parse_graph, pomis_registry
from causal_bo.errors import UnknownScenario
from causal_bo.estimation import PlanRegistry
from causal_bo.models import Direction
from causal_bo.policy import CostModel, DomainBox, cost_presets
from causal_bo.scm import Sem, build_linear_sem, parse_linear, parse_sem

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"


@dataclass(frozen=True)
class Scenario:
    """シミュレーション対象のシステム一式"""
    name: str
    graph: CausalGraph
    sem: Sem
    plans: Optional[PlanRegistry]
    box: DomainBox
    costs: Mapping[str, CostModel] = field(hash=False)
    default_cost: str = "unit"
    direction: Direction = Direction.MIN
    n_default: int = 100
    p_default: int = 3
    n_max_rule: Callable[[int], int] = field(default=lambda n: 2 * n, compare=False)
    max_set_size: Optional[int] = None

    def n_max(self, n: int) -> int:
        return max(n, self.n_max_rule(n))


@dataclass(frozen=True)
class _Definition:
    stem: str
    pomis: Optional[List[Tuple[str, ...]]] = None
    fixed_costs: Mapping[str, float] = field(default_factory=dict)
    n_default: int = 100
    p_default: int = 3
    n_max_rule: Callable[[int], int] = lambda n: 2 * n
    linear: bool = False
    max_set_size: Optional[int] = None


_DEFINITIONS: Dict[str, _Definition] = {
    "toy": _Definition("toy", pomis=[("Z",)], n_max_rule=lambda n: 200),
    "synthetic": _Definition(
        "synthetic",
        pomis=[(), ("B",), ("D",), ("E",), ("B", "D"), ("D", "E")],
        fixed_costs={"B": 10.0, "D": 5.0, "E": 20.0, "F": 3.0},
    ),
    "healthcare": _Definition(
        "healthcare", pomis=[("aspirin", "statin")], n_default=500, n_max_rule=lambda n: 1000
    ),
    "frontdoor": _Definition("frontdoor", n_default=500, n_max_rule=lambda n: 1000),
    "ecology": _Definition("ecology", linear=True, max_set_size=3),
}


class ScenarioService:
    """シナリオの読み込みとキャッシュ"""

    def __init__(self, data_dir: Path = DATA_DIR):
        self.data_dir = data_dir
        self._loaded: Dict[Tuple[str, Optional[str]], Scenario] = {}
        self._lock = threading.Lock()

    def names(self) -> List[str]:
        return sorted(_DEFINITIONS)

    def get(self, name: str, linear_path: Optional[str] = None) -> Scenario:
        """シナリオを取得（未登録なら UnknownScenario）"""
        if name not in _DEFINITIONS:
            raise UnknownScenario(f"unknown scenario {name!r}; known: {', '.join(self.names())}")
        key = (name, linear_path)
        with self._lock:
            if key not in self._loaded:
                self._loaded[key] = self._load(_DEFINITIONS[name], linear_path)
                logger.info(f"Loaded scenario {name}")
            return self._loaded[key]

    def _read(self, filename: str) -> str:
        return (self.data_dir / filename).read_text(encoding="utf-8")

    def _load(self, definition: _Definition, linear_path: Optional[str]) -> Scenario:
        stem = definition.stem
        graph = parse_graph(self._read(f"{stem}.graph"))
        if definition.linear:
            text = Path(linear_path).read_text(encoding="utf-8") if linear_path else self._read(f"{stem}.linear")
            sem = build_linear_sem(graph, parse_linear(text))
        else:
            sem = parse_sem(self._read(f"{stem}.sem"), graph)

        plans_file = self.data_dir / f"{stem}.plans"
        plans = PlanRegistry.parse(plans_file.read_text(encoding="utf-8"), graph) if plans_file.exists() else None
        if definition.pomis is not None:
            pomis_registry.register(graph, definition.pomis)

        box = DomainBox({n: sem.domains[n] for n in graph.treatments if n in sem.domains})
        priced = sorted(set(graph.treatments) | set(definition.fixed_costs))
        return Scenario(
            name=stem,
            graph=graph,
            sem=sem,
            plans=plans,
            box=box,
            costs=cost_presets(definition.fixed_costs, priced),
            n_default=definition.n_default,
            p_default=definition.p_default,
            n_max_rule=definition.n_max_rule,
            max_set_size=definition.max_set_size,
        )


# グローバルシナリオサービス
scenario_service = ScenarioService()
