"""
ガウス過程 - 厳密GPの事後分布と因果事前分布（平均関数 + 因果カーネル）
"""
import itertools
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import linalg

from causal_bo.config import GPConfig, gp_config
from causal_bo.errors import DimensionMismatch, InsufficientData, NumericalFailure

logger = logging.getLogger(__name__)

MeanFn = Callable[[np.ndarray], np.ndarray]


def zero_mean(points: np.ndarray) -> np.ndarray:
    return np.zeros(len(points))


@dataclass(frozen=True)
class RBFKernel:
    """k(x, x') = v * exp(-|x - x'|^2 / (2 l^2))、入力は [0,1]^d に正規化済み"""
    lengthscale: float = 1.0
    variance: float = 1.0

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
        return self.variance * np.exp(-0.5 * np.maximum(sq, 0.0) / self.lengthscale ** 2)


@dataclass(frozen=True)
class CausalKernel:
    """RBF + σ(x)σ(x')、σ(x) = sqrt(V̂[Y|do(X=x)])"""
    base: RBFKernel
    sigma_fn: Callable[[np.ndarray], np.ndarray] = field(compare=False)

    @property
    def lengthscale(self) -> float:
        return self.base.lengthscale

    @property
    def variance(self) -> float:
        return self.base.variance


@dataclass(frozen=True)
class Posterior:
    mean: np.ndarray
    variance: np.ndarray


@dataclass(frozen=True)
class GpModel:
    """学習データと事前分布を持つGP（更新は新しいモデルを返す）"""
    input_dim: int
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)
    kernel: Union[RBFKernel, CausalKernel] = field(default_factory=RBFKernel)
    mean_fn: MeanFn = field(default=zero_mean, compare=False, repr=False)
    noise_variance: float = 1e-5
    inputs: np.ndarray = field(default=None, repr=False)
    targets: np.ndarray = field(default=None, repr=False)
    jitter_start: float = 1e-10
    jitter_max: float = 1e-4

    def __post_init__(self):
        if self.inputs is None:
            object.__setattr__(self, "inputs", np.empty((0, self.input_dim)))
        if self.targets is None:
            object.__setattr__(self, "targets", np.empty(0))

    # ---- カーネル ----
    def _unit(self, points: np.ndarray) -> np.ndarray:
        if self.input_dim == 0:
            return np.empty((len(points), 0))
        return (points - self.lower) / (self.upper - self.lower)

    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        kernel = self.kernel
        base = kernel.base if isinstance(kernel, CausalKernel) else kernel
        k = base(self._unit(a), self._unit(b))
        if isinstance(kernel, CausalKernel):
            k = k + np.outer(kernel.sigma_fn(a), kernel.sigma_fn(b))
        return k

    def _points(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.input_dim == 0:
            return np.empty((1 if x.ndim < 2 else len(x), 0))
        x = x.reshape(-1, self.input_dim) if x.ndim < 2 else x
        if x.shape[1] != self.input_dim:
            raise DimensionMismatch(f"expected {self.input_dim}-d points, got {x.shape[1]}-d")
        return x

    # ---- 学習データ ----
    def with_data(self, inputs: np.ndarray, targets: np.ndarray) -> "GpModel":
        targets = np.asarray(targets, dtype=float).reshape(-1)
        inputs = np.asarray(inputs, dtype=float)
        inputs = np.empty((len(targets), 0)) if self.input_dim == 0 else inputs.reshape(-1, self.input_dim)
        if len(inputs) != len(targets):
            raise DimensionMismatch(f"{len(inputs)} inputs but {len(targets)} targets")
        return replace(self, inputs=inputs, targets=targets)

    def add_point(self, x: np.ndarray, y: float) -> "GpModel":
        x = self._points(x)
        return self.with_data(np.vstack([self.inputs, x]), np.append(self.targets, y))

    @cached_property
    def _factor(self) -> Tuple[Tuple[np.ndarray, bool], np.ndarray]:
        """(Cholesky分解, K^-1 (y - m))、必要なら対角にジッタを加える"""
        n = len(self.targets)
        k = self.gram(self.inputs, self.inputs) + self.noise_variance * np.eye(n)
        scale = float(np.mean(np.diag(k))) if n else 1.0
        jitter = 0.0
        while True:
            try:
                factor = linalg.cho_factor(k + jitter * scale * np.eye(n), lower=True, check_finite=True)
                break
            except (linalg.LinAlgError, ValueError):
                jitter = self.jitter_start if jitter == 0.0 else jitter * 10.0
                if jitter > self.jitter_max * (1 + 1e-9):
                    raise NumericalFailure(f"Gram matrix not positive definite with jitter up to {self.jitter_max}")
        if jitter:
            logger.debug(f"Added jitter {jitter:g} to {n}x{n} Gram matrix")
        residual = self.targets - self.mean_fn(self.inputs) if n else np.empty(0)
        alpha = linalg.cho_solve(factor, residual) if n else np.empty(0)
        return factor, alpha

    def posterior(self, x: np.ndarray) -> Posterior:
        points = self._points(x)
        prior_mean = np.asarray(self.mean_fn(points), dtype=float).reshape(-1)
        prior_var = self._diag(points)
        if len(self.targets) == 0:
            return Posterior(prior_mean, np.maximum(prior_var, 0.0))
        factor, alpha = self._factor
        cross = self.gram(points, self.inputs)
        mean = prior_mean + cross @ alpha
        v = linalg.solve_triangular(factor[0], cross.T, lower=True)
        var = prior_var - np.sum(v * v, axis=0)
        return Posterior(mean, np.maximum(var, 0.0))

    def _diag(self, points: np.ndarray) -> np.ndarray:
        kernel = self.kernel
        base = kernel.base if isinstance(kernel, CausalKernel) else kernel
        diag = np.full(len(points), base.variance)
        if isinstance(kernel, CausalKernel):
            diag = diag + np.asarray(kernel.sigma_fn(points)) ** 2
        return diag

    def log_marginal_likelihood(self) -> float:
        n = len(self.targets)
        if n == 0:
            raise InsufficientData("log marginal likelihood needs at least one training point")
        factor, alpha = self._factor
        residual = self.targets - self.mean_fn(self.inputs)
        log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
        return float(-0.5 * residual @ alpha - 0.5 * log_det - 0.5 * n * np.log(2 * np.pi))

    def with_hyperparameters(self, lengthscale: float, variance: float, noise_variance: float) -> "GpModel":
        base = RBFKernel(lengthscale=lengthscale, variance=variance)
        kernel = replace(self.kernel, base=base) if isinstance(self.kernel, CausalKernel) else base
        return replace(self, kernel=kernel, noise_variance=noise_variance)


def posterior(gp: GpModel, x: np.ndarray) -> Posterior:
    return gp.posterior(x)


def log_marginal_likelihood(gp: GpModel) -> float:
    return gp.log_marginal_likelihood()


def new_model(
    lower: np.ndarray,
    upper: np.ndarray,
    mean_fn: MeanFn = zero_mean,
    sigma_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    settings: GPConfig = gp_config,
) -> GpModel:
    """既定ハイパーパラメータのGPを作る。sigma_fn があれば因果カーネル"""
    base = RBFKernel(lengthscale=settings.lengthscale, variance=settings.variance)
    kernel = CausalKernel(base=base, sigma_fn=sigma_fn) if sigma_fn is not None else base
    lower = np.asarray(lower, dtype=float)
    return GpModel(
        input_dim=len(lower),
        lower=lower,
        upper=np.asarray(upper, dtype=float),
        kernel=kernel,
        mean_fn=mean_fn,
        noise_variance=settings.noise_variance,
        jitter_start=settings.jitter_start,
        jitter_max=settings.jitter_max,
    )


def fit_hyperparameters(gp: GpModel, settings: GPConfig = gp_config) -> GpModel:
    """グリッド上で対数周辺尤度を最大化（同点は小さい l、次に小さい v）"""
    if len(gp.targets) < 2:
        raise InsufficientData(f"hyperparameter fit needs at least 2 training points, got {len(gp.targets)}")
    best: Optional[GpModel] = None
    best_score = -np.inf
    grid = itertools.product(
        sorted(settings.lengthscale_grid), sorted(settings.variance_grid), sorted(settings.noise_variance_grid)
    )
    for lengthscale, variance, noise in grid:
        candidate = gp.with_hyperparameters(lengthscale, variance, noise)
        try:
            score = candidate.log_marginal_likelihood()
        except NumericalFailure:
            continue
        if score > best_score:
            best, best_score = candidate, score
    if best is None:
        raise NumericalFailure("no grid point produced a positive definite Gram matrix")
    logger.debug(
        f"Fitted GP: l={best.kernel.lengthscale:g} v={best.kernel.variance:g} "
        f"noise={best.noise_variance:g} lml={best_score:.3f}"
    )
    return best


def causal_prior(surface, base: Optional[RBFKernel] = None) -> Tuple[MeanFn, CausalKernel]:
    """介入効果曲面から (平均関数, 因果カーネル) を作る"""
    base = base or RBFKernel(gp_config.lengthscale, gp_config.variance)

    def sigma_fn(points: np.ndarray) -> np.ndarray:
        return np.sqrt(surface.variance(points))

    return surface.mean, CausalKernel(base=base, sigma_fn=sigma_fn)
