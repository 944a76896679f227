"""
例外クラス - モジュールごとのエラー階層
"""
from typing import Iterable, Optional, Tuple


class CboError(Exception):
    """全エラーの基底クラス"""

    module = "cbo"

    def __init__(self, message: str, nodes: Iterable[str] = (), line: Optional[int] = None):
        self.nodes: Tuple[str, ...] = tuple(nodes)
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        if self.nodes:
            message = f"{message} [{', '.join(self.nodes)}]"
        super().__init__(message)


# グラフ
class GraphError(CboError):
    module = "graph"


class CycleDetected(GraphError):
    pass


class NoTarget(GraphError):
    pass


class MultipleTargets(GraphError):
    pass


class RoleConflict(GraphError):
    pass


class UnknownNode(GraphError):
    pass


class NonManipulativeCut(GraphError):
    pass


class PomisUnavailable(GraphError):
    pass


class GraphParseError(GraphError):
    pass


# 構造方程式モデル
class SemError(CboError):
    module = "scm"


class SemSyntaxError(SemError):
    pass


class UnknownFunction(SemError):
    pass


class DependencyViolation(SemError):
    pass


class NumericOverflow(SemError):
    pass


class DomainViolation(SemError):
    pass


class InvalidSampleSize(SemError):
    pass


# 推定
class EstimationError(CboError):
    module = "estimation"


class InsufficientData(EstimationError):
    pass


class DegenerateColumn(EstimationError):
    pass


class NoNeighbors(EstimationError):
    pass


class PlanMismatch(EstimationError):
    pass


class PlanSyntaxError(EstimationError):
    pass


class NoEstimand(EstimationError):
    pass


# ガウス過程
class GPError(CboError):
    module = "gp"


class DimensionMismatch(GPError):
    pass


class NumericalFailure(GPError):
    pass


# CLI・設定
class ConfigError(CboError):
    module = "cli"


class UnknownScenario(ConfigError):
    pass
