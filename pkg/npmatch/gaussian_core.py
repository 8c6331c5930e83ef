# npmatch/gaussian_core.py
"""Exact multivariate Gaussian algebra.

Densities, weighted geometric means of two Gaussians, KL and both skew-geometric
Jensen-Shannon divergences in closed form, plus Monte-Carlo oracles used to verify them.
All determinants and inverses go through Cholesky factors; no jitter is ever added.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Literal, NamedTuple, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.stats import norm, qmc

from npmatch.errors import (
    DimensionMismatchError,
    InvalidParameterError,
    NegativeDivergenceError,
    NonFiniteError,
    NotPositiveDefiniteError,
)

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
SYMMETRY_TOLERANCE = 1e-10
NEGATIVE_TOLERANCE = 1e-12
MIN_MC_SAMPLES = 10_000

DivergenceKind = Literal["js", "js_dual", "kl"]
SamplerKind = Literal["sobol", "iid"]


def _cholesky(matrix: np.ndarray, what: str) -> np.ndarray:
    """Lower Cholesky factor of the symmetrized matrix, or a structured error."""
    sym = 0.5 * (matrix + matrix.T)
    try:
        return linalg.cholesky(sym, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(
            f"{what} is not symmetric positive definite: {exc}", {"what": what}
        ) from exc


@dataclass(frozen=True, eq=False)
class Diagonal:
    """Diagonal covariance stored as its strictly positive variances."""

    variances: np.ndarray

    def __post_init__(self):
        variances = np.asarray(self.variances, dtype=np.float64)
        if variances.ndim != 1 or variances.size == 0:
            raise DimensionMismatchError(
                f"Diagonal variances must be a non-empty vector, got shape {variances.shape}"
            )
        if not np.all(np.isfinite(variances)) or np.any(variances <= 0.0):
            raise InvalidParameterError("Diagonal variances must be finite and > 0")
        object.__setattr__(self, "variances", variances)

    @property
    def dim(self) -> int:
        return self.variances.size

    def matrix(self) -> np.ndarray:
        return np.diag(self.variances)


@dataclass(frozen=True, eq=False)
class Full:
    """Dense symmetric positive definite covariance."""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] == 0:
            raise DimensionMismatchError(
                f"Full covariance must be a non-empty square matrix, got shape {matrix.shape}"
            )
        if not np.all(np.isfinite(matrix)):
            raise InvalidParameterError("Full covariance entries must be finite")
        asymmetry = float(np.max(np.abs(matrix - matrix.T)))
        if asymmetry > SYMMETRY_TOLERANCE:
            raise InvalidParameterError(
                f"Full covariance is not symmetric (max asymmetry {asymmetry:.3e})",
                {"asymmetry": asymmetry},
            )
        object.__setattr__(self, "matrix", matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def cholesky(self) -> np.ndarray:
        return _cholesky(self.matrix, "covariance")


Covariance = Union[Diagonal, Full]


@dataclass(frozen=True, eq=False)
class Gaussian:
    """Multivariate normal N(mean, cov) with a diagonal or full covariance."""

    mean: np.ndarray
    cov: Covariance

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 1:
            raise DimensionMismatchError(f"Gaussian mean must be a vector, got shape {mean.shape}")
        if not np.all(np.isfinite(mean)):
            raise InvalidParameterError("Gaussian mean entries must be finite")
        if mean.size != self.cov.dim:
            raise DimensionMismatchError(
                f"Mean has length {mean.size} but covariance has dimension {self.cov.dim}"
            )
        object.__setattr__(self, "mean", mean)

    @classmethod
    def diagonal(cls, mean, variances) -> "Gaussian":
        return cls(np.asarray(mean, dtype=np.float64), Diagonal(variances))

    @classmethod
    def full(cls, mean, matrix) -> "Gaussian":
        return cls(np.asarray(mean, dtype=np.float64), Full(matrix))

    @classmethod
    def standard(cls, dim: int) -> "Gaussian":
        return cls.diagonal(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def is_diagonal(self) -> bool:
        return isinstance(self.cov, Diagonal)

    def covariance_matrix(self) -> np.ndarray:
        if isinstance(self.cov, Diagonal):
            return self.cov.matrix()
        return self.cov.matrix

    @cached_property
    def logdet(self) -> float:
        if isinstance(self.cov, Diagonal):
            return float(np.sum(np.log(self.cov.variances)))
        return float(2.0 * np.sum(np.log(np.diag(self.cov.cholesky))))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Sigma^{-1} @ rhs for a vector or a (D, k) matrix."""
        rhs = np.asarray(rhs, dtype=np.float64)
        if isinstance(self.cov, Diagonal):
            variances = self.cov.variances
            return rhs / variances if rhs.ndim == 1 else rhs / variances[:, None]
        return linalg.cho_solve((self.cov.cholesky, True), rhs)

    def precision(self) -> np.ndarray:
        """Precision as a vector (diagonal) or a matrix (full)."""
        if isinstance(self.cov, Diagonal):
            return 1.0 / self.cov.variances
        return self.solve(np.eye(self.dim))

    def precision_matrix(self) -> np.ndarray:
        precision = self.precision()
        return np.diag(precision) if precision.ndim == 1 else precision

    def transform(self, standard_normals: np.ndarray) -> np.ndarray:
        """Map (n, D) standard normal draws to draws from this Gaussian."""
        if isinstance(self.cov, Diagonal):
            return self.mean + standard_normals * np.sqrt(self.cov.variances)
        return self.mean + standard_normals @ self.cov.cholesky.T


@dataclass(frozen=True)
class SkewParameter:
    """Skew weight alpha of the weighted geometric mean, in [0, 1]."""

    alpha: float

    def __post_init__(self):
        alpha = float(self.alpha)
        if not math.isfinite(alpha) or alpha < 0.0 or alpha > 1.0:
            raise InvalidParameterError(f"Skew parameter must lie in [0, 1], got {self.alpha}")
        object.__setattr__(self, "alpha", alpha)


SkewLike = Union[SkewParameter, float]


def _skew(a: SkewLike) -> SkewParameter:
    return a if isinstance(a, SkewParameter) else SkewParameter(a)


def _check_same_dim(g1: Gaussian, g2: Gaussian) -> None:
    if g1.dim != g2.dim:
        raise DimensionMismatchError(
            f"Gaussians have different dimensions ({g1.dim} vs {g2.dim})",
            {"dims": [g1.dim, g2.dim]},
        )


def _clamp(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise NonFiniteError(f"{name} evaluated to a non-finite value", {"value": repr(value)})
    if value < 0.0:
        if value < -NEGATIVE_TOLERANCE:
            raise NegativeDivergenceError(
                f"{name} is negative beyond round-off ({value:.3e})", {"value": value}
            )
        return 0.0
    return value


def log_pdf(g: Gaussian, x) -> Union[float, np.ndarray]:
    """Log density of ``g`` at a point (returns float) or at each row of an (N, D) matrix."""
    points = np.asarray(x, dtype=np.float64)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    if points.ndim != 2 or points.shape[1] != g.dim:
        raise DimensionMismatchError(
            f"Point dimension {points.shape[-1]} does not match Gaussian dimension {g.dim}"
        )
    diff = points - g.mean
    if isinstance(g.cov, Diagonal):
        mahalanobis = np.sum(diff * diff / g.cov.variances, axis=1)
    else:
        whitened = linalg.solve_triangular(g.cov.cholesky, diff.T, lower=True)
        mahalanobis = np.sum(whitened * whitened, axis=0)
    values = -0.5 * (g.dim * LOG_2PI + g.logdet + mahalanobis)
    return float(values[0]) if single else values


class _GeometricParts(NamedTuple):
    gaussian: Gaussian
    precision: np.ndarray


def _geometric_parts(g1: Gaussian, g2: Gaussian, skew: SkewParameter) -> _GeometricParts:
    a = skew.alpha
    b = 1.0 - a
    if g1.is_diagonal and g2.is_diagonal:
        v1, v2 = g1.cov.variances, g2.cov.variances
        precision = b / v1 + a / v2
        if not np.all(np.isfinite(precision)) or np.any(precision <= 0.0):
            raise NotPositiveDefiniteError("Weighted precision sum is singular")
        variances = 1.0 / precision
        mean = variances * (b * g1.mean / v1 + a * g2.mean / v2)
        return _GeometricParts(Gaussian.diagonal(mean, variances), precision)

    precision = b * g1.precision_matrix() + a * g2.precision_matrix()
    precision = 0.5 * (precision + precision.T)
    chol = _cholesky(precision, "weighted precision sum")
    cov = linalg.cho_solve((chol, True), np.eye(g1.dim))
    cov = 0.5 * (cov + cov.T)
    info = b * g1.solve(g1.mean) + a * g2.solve(g2.mean)
    mean = linalg.cho_solve((chol, True), info)
    return _GeometricParts(Gaussian.full(mean, cov), precision)


def geometric_mean(g1: Gaussian, g2: Gaussian, a: SkewLike) -> Gaussian:
    """Normalized weighted geometric mean N1^(1-a) N2^a.

    Sigma_a = ((1-a) Sigma1^-1 + a Sigma2^-1)^-1 and
    mu_a = Sigma_a ((1-a) Sigma1^-1 mu1 + a Sigma2^-1 mu2). Two diagonal inputs give a
    diagonal result; mixed inputs are promoted to full.
    """
    skew = _skew(a)
    _check_same_dim(g1, g2)
    if skew.alpha == 0.0:
        return g1
    if skew.alpha == 1.0:
        return g2
    return _geometric_parts(g1, g2, skew).gaussian


def kl(g1: Gaussian, g2: Gaussian) -> float:
    """KL(g1 || g2) in closed form."""
    _check_same_dim(g1, g2)
    diff = g2.mean - g1.mean
    if g1.is_diagonal and g2.is_diagonal:
        v1, v2 = g1.cov.variances, g2.cov.variances
        value = 0.5 * (
            np.sum(np.log(v2) - np.log(v1)) - g1.dim + np.sum(v1 / v2) + np.sum(diff * diff / v2)
        )
    else:
        trace = np.trace(g2.solve(g1.covariance_matrix()))
        mahalanobis = float(diff @ g2.solve(diff))
        value = 0.5 * (g2.logdet - g1.logdet - g1.dim + trace + mahalanobis)
    return _clamp(value, "KL divergence")


def _quadratic(precision: np.ndarray, vector: np.ndarray) -> float:
    if precision.ndim == 1:
        return float(np.sum(precision * vector * vector))
    return float(vector @ precision @ vector)


def js_geometric(g1: Gaussian, g2: Gaussian, a: SkewLike) -> float:
    """Skew-geometric JS divergence (1-a) KL(N1||Na) + a KL(N2||Na), expanded closed form."""
    skew = _skew(a)
    _check_same_dim(g1, g2)
    if skew.alpha in (0.0, 1.0):
        return 0.0
    alpha = skew.alpha
    beta = 1.0 - alpha
    parts = _geometric_parts(g1, g2, skew)
    ga, precision = parts.gaussian, parts.precision
    if precision.ndim == 1:
        trace = np.sum(precision * (beta * g1.cov.variances + alpha * g2.cov.variances))
    else:
        mixed = beta * g1.covariance_matrix() + alpha * g2.covariance_matrix()
        trace = np.sum(precision * mixed)
    value = 0.5 * (
        ga.logdet
        - beta * g1.logdet
        - alpha * g2.logdet
        - g1.dim
        + trace
        + beta * _quadratic(precision, ga.mean - g1.mean)
        + alpha * _quadratic(precision, ga.mean - g2.mean)
    )
    return _clamp(value, "JS-G divergence")


def js_geometric_dual(g1: Gaussian, g2: Gaussian, a: SkewLike) -> float:
    """Dual skew-geometric JS divergence (1-a) KL(Na||N1) + a KL(Na||N2), expanded closed form."""
    skew = _skew(a)
    _check_same_dim(g1, g2)
    if skew.alpha in (0.0, 1.0):
        return 0.0
    alpha = skew.alpha
    beta = 1.0 - alpha
    parts = _geometric_parts(g1, g2, skew)
    ga, precision = parts.gaussian, parts.precision
    value = 0.5 * (
        beta * g1.logdet
        + alpha * g2.logdet
        - ga.logdet
        + beta * float(g1.mean @ g1.solve(g1.mean))
        + alpha * float(g2.mean @ g2.solve(g2.mean))
        - _quadratic(precision, ga.mean)
    )
    return _clamp(value, "dual JS-G divergence")


def js_geometric_composed(g1: Gaussian, g2: Gaussian, a: SkewLike) -> float:
    """Two-KL composition (1-a) KL(N1||Na) + a KL(N2||Na); cross-check for js_geometric."""
    skew = _skew(a)
    ga = geometric_mean(g1, g2, skew)
    return (1.0 - skew.alpha) * kl(g1, ga) + skew.alpha * kl(g2, ga)


def js_geometric_dual_composed(g1: Gaussian, g2: Gaussian, a: SkewLike) -> float:
    skew = _skew(a)
    ga = geometric_mean(g1, g2, skew)
    return (1.0 - skew.alpha) * kl(ga, g1) + skew.alpha * kl(ga, g2)


def kl_diagonal_with_grad(
    mean_p: np.ndarray, logvar_p: np.ndarray, mean_q: np.ndarray, logvar_q: np.ndarray
) -> Tuple[float, Dict[str, np.ndarray]]:
    """KL(N_p || N_q) for diagonal Gaussians given by log-variances, with its gradients."""
    var_p = np.exp(logvar_p)
    var_q = np.exp(logvar_q)
    diff = mean_p - mean_q
    ratio = var_p / var_q
    scaled = diff * diff / var_q
    value = 0.5 * np.sum(logvar_q - logvar_p - 1.0 + ratio + scaled)
    grads = {
        "mean_p": diff / var_q,
        "mean_q": -diff / var_q,
        "logvar_p": 0.5 * (ratio - 1.0),
        "logvar_q": 0.5 * (1.0 - ratio - scaled),
    }
    return _clamp(value, "KL divergence"), grads


def js_geometric_diagonal_with_grad(
    mean1: np.ndarray, logvar1: np.ndarray, mean2: np.ndarray, logvar2: np.ndarray, alpha: float
) -> Tuple[float, Dict[str, np.ndarray]]:
    """js_geometric for diagonal Gaussians given by log-variances, with its gradients.

    Per dimension, with S = (1-a) v2 + a v1 and N = a v1^2 + (1-a) v2^2:
        2 JS_d = -log S + a log v1 + (1-a) log v2 - 1 + a^2 + (1-a)^2
                 + a (1-a) (v2/v1 + v1/v2) + a (1-a) (mu2 - mu1)^2 N / (v1 v2 S)
    """
    a = float(alpha)
    b = 1.0 - a
    v1 = np.exp(logvar1)
    v2 = np.exp(logvar2)
    delta = mean2 - mean1
    s = b * v2 + a * v1
    n = a * v1 * v1 + b * v2 * v2
    f = n / (v1 * v2 * s)
    mean_term = a * b * delta * delta * f
    per_dim = (
        -np.log(s)
        + a * logvar1
        + b * logvar2
        - 1.0
        + a * a
        + b * b
        + a * b * (v2 / v1 + v1 / v2)
        + mean_term
    )
    value = 0.5 * np.sum(per_dim)
    grad_mean2 = a * b * f * delta
    grads = {
        "mean1": -grad_mean2,
        "mean2": grad_mean2,
        "logvar1": 0.5 * (
            -a * v1 / s
            + a
            + a * b * (v1 / v2 - v2 / v1)
            + mean_term * (2.0 * a * v1 * v1 / n - 1.0 - a * v1 / s)
        ),
        "logvar2": 0.5 * (
            -b * v2 / s
            + b
            + a * b * (v2 / v1 - v1 / v2)
            + mean_term * (2.0 * b * v2 * v2 / n - 1.0 - b * v2 / s)
        ),
    }
    return _clamp(value, "JS-G divergence"), grads


def sample(g: Gaussian, n: int, seed) -> np.ndarray:
    """Draw an (n, D) matrix from ``g``; deterministic in ``seed``."""
    if n < 1:
        raise InvalidParameterError(f"Sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return g.transform(rng.standard_normal((n, g.dim)))


class MonteCarloEstimate(NamedTuple):
    value: float
    standard_error: float
    samples: int


def _standard_normals(dim: int, n: int, seed_seq, method: SamplerKind) -> np.ndarray:
    if method == "iid":
        return np.random.default_rng(seed_seq).standard_normal((n, dim))
    engine = qmc.Sobol(d=dim, scramble=True, seed=np.random.default_rng(seed_seq))
    uniforms = engine.random_base2(int(math.ceil(math.log2(n))))[:n]
    tiny = np.finfo(np.float64).tiny
    return norm.ppf(np.clip(uniforms, tiny, 1.0 - np.finfo(np.float64).epsneg))


def mc_divergence_estimate(
    g1: Gaussian,
    g2: Gaussian,
    a: SkewLike,
    kind: DivergenceKind,
    n: int,
    seed: int,
    method: SamplerKind = "sobol",
) -> MonteCarloEstimate:
    """Unbiased Monte-Carlo estimate of a divergence from log-density differences.

    kl and js sample from N1 (and N2); js_dual samples from N_alpha. The sampler is scrambled
    Sobol by default; the standard error is the iid formula std / sqrt(n).
    """
    if n < MIN_MC_SAMPLES:
        raise InvalidParameterError(f"Monte-Carlo oracle needs n >= {MIN_MC_SAMPLES}, got {n}")
    if kind not in ("js", "js_dual", "kl"):
        raise InvalidParameterError(f"Unknown divergence kind '{kind}'")
    if method not in ("sobol", "iid"):
        raise InvalidParameterError(f"Unknown sampler '{method}'")
    _check_same_dim(g1, g2)
    skew = _skew(a)
    alpha = skew.alpha
    beta = 1.0 - alpha
    first, second = np.random.SeedSequence(seed).spawn(2)

    if kind == "kl":
        x = g1.transform(_standard_normals(g1.dim, n, first, method))
        f = log_pdf(g1, x) - log_pdf(g2, x)
        return MonteCarloEstimate(float(f.mean()), float(f.std(ddof=1) / math.sqrt(n)), n)

    ga = geometric_mean(g1, g2, skew)
    if kind == "js":
        x1 = g1.transform(_standard_normals(g1.dim, n, first, method))
        x2 = g2.transform(_standard_normals(g2.dim, n, second, method))
        f1 = log_pdf(g1, x1) - log_pdf(ga, x1)
        f2 = log_pdf(g2, x2) - log_pdf(ga, x2)
        value = beta * f1.mean() + alpha * f2.mean()
        variance = (beta**2 * f1.var(ddof=1) + alpha**2 * f2.var(ddof=1)) / n
        return MonteCarloEstimate(float(value), float(math.sqrt(variance)), n)

    x = ga.transform(_standard_normals(ga.dim, n, first, method))
    log_a = log_pdf(ga, x)
    f = beta * (log_a - log_pdf(g1, x)) + alpha * (log_a - log_pdf(g2, x))
    return MonteCarloEstimate(float(f.mean()), float(f.std(ddof=1) / math.sqrt(n)), n)


def mc_divergence(
    g1: Gaussian,
    g2: Gaussian,
    a: SkewLike,
    kind: DivergenceKind,
    n: int,
    seed: int,
    method: SamplerKind = "sobol",
) -> float:
    """Monte-Carlo estimate of ``kind`` between g1 and g2 (see mc_divergence_estimate)."""
    return mc_divergence_estimate(g1, g2, a, kind, n, seed, method).value
