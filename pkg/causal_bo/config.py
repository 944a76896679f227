"""
設定ファイル - 推定・GP・獲得関数・実行環境の既定値
"""
import os
from dataclasses import dataclass
from typing import List


@dataclass
class LoggingConfig:
    """ログ関連の設定"""
    level: str = "info"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


@dataclass
class CacheConfig:
    """キャッシュ関連の設定"""
    surface_cache_size: int = 50000  # 介入効果曲面の評価点数
    oracle_cache_size: int = 4096  # SEMオラクル問い合わせ数
    surface_cache_enabled: bool = True
    oracle_cache_enabled: bool = True


@dataclass
class EstimationConfig:
    """観測データからの介入効果推定の設定"""
    regressor: str = "nadaraya_watson"  # nadaraya_watson | knn
    monte_carlo_samples: int = 1000  # 外側の平均に使う行数の上限
    bandwidth_scale: float = 1.0
    min_rows: int = 5
    # 1チャンクあたりの (クエリ数 × 行数) の上限
    chunk_elements: int = 2_000_000


@dataclass
class GPConfig:
    """ガウス過程の設定"""
    lengthscale: float = 1.0  # [0,1]^d に正規化した入力上の値
    variance: float = 1.0
    noise_variance: float = 1e-5
    jitter_start: float = 1e-10
    jitter_max: float = 1e-4

    # ハイパーパラメータのグリッド
    lengthscale_grid: List[float] = None
    variance_grid: List[float] = None
    noise_variance_grid: List[float] = None

    def __post_init__(self):
        if self.lengthscale_grid is None:
            self.lengthscale_grid = [0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0]
        if self.variance_grid is None:
            self.variance_grid = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0]
        if self.noise_variance_grid is None:
            self.noise_variance_grid = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1]


@dataclass
class AcquisitionConfig:
    """獲得関数最適化の設定"""
    lhs_points: int = 64
    starts: int = 10
    golden_iterations: int = 50  # 1スタートあたりの黄金分割反復の総数


@dataclass
class PolicyConfig:
    """観測/介入ポリシーの設定"""
    hull_mc_samples: int = 100_000
    empty_set_cost: float = 1.0


@dataclass
class CboDefaults:
    """CBOループの既定値"""
    batch_size: int = 20
    eval_samples: int = 10_000


@dataclass
class PerformanceConfig:
    """パフォーマンス関連の設定"""
    # 並列処理の最大ワーカー数
    max_workers: int = 4


@dataclass
class OutputConfig:
    """出力関連の設定"""
    record_wall_time: bool = False
    float_format: str = ".10g"


# 設定インスタンス
logging_config = LoggingConfig()
cache_config = CacheConfig()
estimation_config = EstimationConfig()
gp_config = GPConfig()
acquisition_config = AcquisitionConfig()
policy_config = PolicyConfig()
cbo_defaults = CboDefaults()
performance_config = PerformanceConfig()
output_config = OutputConfig()


def _env_flag(value: str) -> bool:
    return value.strip().lower() in ("1", "true", "yes", "on")


# 環境変数からの設定上書き
def load_config_from_env():
    """環境変数から設定を読み込む"""
    if os.getenv("CBO_LOG"):
        logging_config.level = os.getenv("CBO_LOG").strip().lower()

    if os.getenv("CBO_MAX_WORKERS"):
        performance_config.max_workers = int(os.getenv("CBO_MAX_WORKERS"))

    if os.getenv("CBO_MC_SAMPLES"):
        estimation_config.monte_carlo_samples = int(os.getenv("CBO_MC_SAMPLES"))

    if os.getenv("CBO_EVAL_SAMPLES"):
        cbo_defaults.eval_samples = int(os.getenv("CBO_EVAL_SAMPLES"))

    if os.getenv("CBO_RECORD_WALL_TIME"):
        output_config.record_wall_time = _env_flag(os.getenv("CBO_RECORD_WALL_TIME"))

    if os.getenv("CBO_CACHE_ENABLED"):
        enabled = _env_flag(os.getenv("CBO_CACHE_ENABLED"))
        cache_config.surface_cache_enabled = enabled
        cache_config.oracle_cache_enabled = enabled


# 初期化時に環境変数を読み込む
load_config_from_env()
