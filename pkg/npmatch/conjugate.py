# npmatch/conjugate.py
"""
Conjugate 1-D linear-Gaussian model with an exact marginal likelihood.

    z ~ N(0, tau2),  y_i = z * x_i + eps_i,  eps_i ~ N(0, sigma2)

The first ``context_size`` points are the context, the rest are targets. Used to check that
the ELBO objective (with its constant log p(y_context) restored) is a lower bound that is
tight at the exact posteriors.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from npmatch.errors import InvalidParameterError
from npmatch.gaussian_core import LOG_2PI, Gaussian, kl, log_pdf

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LinearGaussianToy:
    prior_var: float
    noise_var: float
    x: np.ndarray
    y: np.ndarray
    context_size: int

    def __post_init__(self):
        if self.prior_var <= 0 or self.noise_var <= 0:
            raise InvalidParameterError("Prior and noise variances must be > 0")
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 1 or x.shape != y.shape:
            raise InvalidParameterError("x and y must be vectors of equal length")
        if not 1 <= self.context_size < x.size:
            raise InvalidParameterError(
                f"Context size must satisfy 1 <= m < n, got m={self.context_size}, n={x.size}"
            )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def generate(
        cls, n: int, context_size: int, prior_var: float = 1.0, noise_var: float = 0.25, seed=0
    ) -> "LinearGaussianToy":
        rng = np.random.default_rng(seed)
        x = rng.uniform(-2.0, 2.0, n)
        z = rng.normal(0.0, math.sqrt(prior_var))
        y = z * x + rng.normal(0.0, math.sqrt(noise_var), n)
        return cls(prior_var, noise_var, x, y, context_size)

    @property
    def context_indices(self) -> np.ndarray:
        return np.arange(self.context_size)

    @property
    def target_indices(self) -> np.ndarray:
        return np.arange(self.context_size, self.x.size)


def log_marginal(toy: LinearGaussianToy, indices: Optional[Sequence[int]] = None) -> float:
    """Exact log p(y_S | x_S): y_S ~ N(0, tau2 x x^T + sigma2 I), evaluated via Cholesky."""
    idx = np.arange(toy.x.size) if indices is None else np.asarray(indices)
    x, y = toy.x[idx], toy.y[idx]
    cov = toy.prior_var * np.outer(x, x) + toy.noise_var * np.eye(x.size)
    return log_pdf(Gaussian.full(np.zeros(x.size), cov), y)


def exact_posterior(toy: LinearGaussianToy, indices: Sequence[int]) -> Gaussian:
    """p(z | y_S), a 1-D Gaussian."""
    idx = np.asarray(indices)
    x, y = toy.x[idx], toy.y[idx]
    precision = 1.0 / toy.prior_var + np.sum(x * x) / toy.noise_var
    mean = np.sum(x * y) / toy.noise_var / precision
    return Gaussian.diagonal([mean], [1.0 / precision])


def expected_log_likelihood(toy: LinearGaussianToy, q: Gaussian, indices: Sequence[int]) -> float:
    """E_{z~q} sum_i log N(y_i; z x_i, sigma2), in closed form."""
    idx = np.asarray(indices)
    x, y = toy.x[idx], toy.y[idx]
    mean, var = float(q.mean[0]), float(q.covariance_matrix()[0, 0])
    squared = (y - mean * x) ** 2 + x * x * var
    return float(np.sum(-0.5 * (LOG_2PI + math.log(toy.noise_var)) - squared / (2.0 * toy.noise_var)))


def elbo(toy: LinearGaussianToy, q_target: Gaussian, q_context: Gaussian) -> float:
    """E_{q_target} log p(y_T | z) - KL(q_target || q_context) + log p(y_C).

    Equals log_marginal(toy) when q_target = p(z | all points) and q_context = p(z | context).
    """
    return (
        expected_log_likelihood(toy, q_target, toy.target_indices)
        - kl(q_target, q_context)
        + log_marginal(toy, toy.context_indices)
    )
