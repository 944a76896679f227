"""
データモデル - 実行設定・トレース・サマリーの型とバリデーション
"""
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from causal_bo.config import cbo_defaults


class NodeRole(str, Enum):
    """ノードの役割"""
    TREATMENT = "treatment"
    CONTEXT = "context"
    TARGET = "target"


class ExplorationSetKind(str, Enum):
    """探索集合の種類"""
    MIS = "mis"
    POMIS = "pomis"
    BO = "bo"
    CUSTOM = "custom"


class Direction(str, Enum):
    """最適化の向き"""
    MIN = "min"
    MAX = "max"


class PriorKind(str, Enum):
    """GP事前分布の種類"""
    CAUSAL = "causal"
    STANDARD = "standard"


class Action(str, Enum):
    OBSERVE = "observe"
    INTERVENE = "intervene"


class CostOverride(BaseModel):
    """ノード単位のコスト上書き"""
    model_config = ConfigDict(extra="forbid")

    fixed: Optional[float] = Field(default=None, gt=0, description="固定コスト")
    variable: Optional[bool] = Field(default=None, description="|x| を加算するか")


class CboConfig(BaseModel):
    """CBO実行設定"""
    model_config = ConfigDict(extra="forbid")

    scenario: str = Field(..., description="シナリオ名")
    es: ExplorationSetKind = Field(default=ExplorationSetKind.MIS, description="探索集合の種類")
    custom_sets: Optional[List[Tuple[str, ...]]] = Field(default=None, description="es=custom の集合")
    direction: Optional[Direction] = Field(default=None, description="未指定ならシナリオの既定")
    T: int = Field(default=30, ge=1, description="介入ステップ数")
    N: Optional[int] = Field(default=None, ge=1, description="初期観測数")
    N_max: Optional[int] = Field(default=None, ge=1, description="観測数の上限")
    P: Optional[int] = Field(default=None, ge=0, description="集合ごとの初期介入点数")
    batch: int = Field(default_factory=lambda: cbo_defaults.batch_size, ge=1, description="1回の観測で引くサンプル数")
    cost_config: Optional[str] = Field(default=None, description="コスト設定名")
    cost_overrides: Dict[str, CostOverride] = Field(default_factory=dict)
    prior: PriorKind = Field(default=PriorKind.CAUSAL)
    seed: int = Field(default=0, ge=0)
    domains: Dict[str, Tuple[float, float]] = Field(default_factory=dict)
    eval_samples: int = Field(
        default_factory=lambda: cbo_defaults.eval_samples, ge=100, description="システム問い合わせのサンプル数"
    )
    max_set_size: Optional[int] = Field(default=None, ge=1)
    epsilon: Optional[float] = Field(
        default=None, ge=0.0, le=1.0, description="固定の観測確率。未指定なら観測データの凸包から決める（0 で標準BO）"
    )
    fit_hyperparameters: bool = True
    linear_path: Optional[str] = Field(default=None, description="線形SEMの係数ファイル")

    @field_validator("domains")
    @classmethod
    def validate_domains(cls, v):
        """区間の妥当性チェック"""
        for node, (lo, hi) in v.items():
            if not lo < hi:
                raise ValueError(f"domain of {node} must satisfy lo < hi, got [{lo}, {hi}]")
        return v

    @model_validator(mode="after")
    def validate_budget(self):
        if self.N is not None and self.N_max is not None and self.N > self.N_max:
            raise ValueError(f"N ({self.N}) must not exceed N_max ({self.N_max})")
        if self.es == ExplorationSetKind.CUSTOM and not self.custom_sets:
            raise ValueError("es=custom requires at least one set")
        return self


class TraceRow(BaseModel):
    """トレースの1行"""
    t: int
    action: Action
    epsilon: float
    set: Optional[Tuple[str, ...]] = None
    values: Tuple[float, ...] = ()
    step_cost: float = 0.0
    cum_cost: float = 0.0
    y_hat: Optional[float] = None
    best: Optional[float] = None
    wall_ms: float = 0.0
    note: str = ""


class RunResult(BaseModel):
    """最良の介入記録"""
    set: Optional[Tuple[str, ...]] = None
    values: Tuple[float, ...] = ()
    y: Optional[float] = None
    cumulative_cost: float = 0.0


class GpSnapshot(BaseModel):
    """集合ごとのGP状態"""
    set: Tuple[str, ...]
    prior: PriorKind
    lengthscale: float
    variance: float
    noise_variance: float
    inputs: List[List[float]]
    targets: List[float]


class AggregateRow(BaseModel):
    """コスト水準ごとの集計"""
    cost: float
    n_runs: int
    mean_best: float
    se_best: float


class SummaryReport(BaseModel):
    """実行サマリー"""
    version: str
    config_hash: str
    seeds: List[int]
    result: RunResult
    config: Dict[str, Any]
    wall_time_s: Optional[float] = None
    gp: List[GpSnapshot] = Field(default_factory=list)
    cache_stats: Dict[str, Any] = Field(default_factory=dict)
    failures: Dict[str, str] = Field(default_factory=dict)
    notes: Dict[str, str] = Field(default_factory=dict, description="ステップ t ごとの補足（凸包推定の標準誤差、スキップした集合）")
