# npmatch/divergence_check.py
"""Closed-form JS_G / dual JS_G against the Monte-Carlo oracle on random Gaussian pairs."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from npmatch.gaussian_core import (
    Gaussian,
    js_geometric_composed,
    js_geometric_dual_composed,
    js_geometric,
    js_geometric_dual,
    mc_divergence_estimate,
)

logger = logging.getLogger(__name__)

Formula = Callable[[Gaussian, Gaussian, float], float]

DEFAULT_FORMULAS: Dict[str, Formula] = {"js": js_geometric, "js_dual": js_geometric_dual}
COMPOSED: Dict[str, Formula] = {"js": js_geometric_composed, "js_dual": js_geometric_dual_composed}
Z_LIMIT = 3.0


def random_gaussian(dim: int, rng: np.random.Generator, full: bool) -> Gaussian:
    mean = rng.normal(0.0, 1.0, dim)
    if not full:
        return Gaussian.diagonal(mean, rng.uniform(0.3, 3.0, dim))
    a = rng.standard_normal((dim, dim))
    cov = a @ a.T / dim + 0.5 * np.eye(dim)
    return Gaussian.full(mean, 0.5 * (cov + cov.T))


def random_pair(dim: int, rng: np.random.Generator, representation: str):
    """Two Gaussians of one dimension; representation is 'diagonal', 'full' or 'mixed'."""
    first_full = representation == "full"
    second_full = representation in ("full", "mixed")
    return random_gaussian(dim, rng, first_full), random_gaussian(dim, rng, second_full)


@dataclass(frozen=True)
class DivergenceCheckRow:
    trial: int
    kind: str
    dim: int
    representation: str
    alpha: float
    closed_form: float
    monte_carlo: float
    standard_error: float
    z_score: float
    composition_gap: float
    passed: bool

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


@dataclass
class DivergenceCheckReport:
    rows: List[DivergenceCheckRow] = field(default_factory=list)
    z_limit: float = Z_LIMIT

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    @property
    def worst_z(self) -> float:
        return max((row.z_score for row in self.rows), default=0.0)

    def to_dict(self) -> Dict:
        return {
            "passed": self.passed,
            "trials": len({row.trial for row in self.rows}),
            "worst_z": self.worst_z,
            "z_limit": self.z_limit,
            "failures": sum(not row.passed for row in self.rows),
            "rows": [row.to_dict() for row in self.rows],
        }


def run_divergence_check(
    dims: Sequence[int] = (1, 2, 3, 4),
    trials: int = 50,
    samples: int = 1_000_000,
    seed: int = 0,
    formulas: Optional[Dict[str, Formula]] = None,
    z_limit: float = Z_LIMIT,
) -> DivergenceCheckReport:
    """Each trial draws a random pair, D and alpha, and checks both JS_G forms against MC.

    A row fails when |closed - mc| exceeds z_limit MC standard errors.
    """
    formulas = formulas or DEFAULT_FORMULAS
    rng = np.random.default_rng(seed)
    report = DivergenceCheckReport(z_limit=z_limit)
    representations = ("diagonal", "full", "mixed")
    for trial in range(trials):
        dim = int(rng.choice(dims))
        representation = representations[trial % len(representations)]
        g1, g2 = random_pair(dim, rng, representation)
        alpha = float(rng.uniform(0.05, 0.95))
        mc_seed = int(rng.integers(0, 2**32))
        for kind, formula in formulas.items():
            closed = formula(g1, g2, alpha)
            estimate = mc_divergence_estimate(g1, g2, alpha, kind, samples, mc_seed)
            diff = abs(closed - estimate.value)
            if estimate.standard_error > 0:
                z = diff / estimate.standard_error
            else:
                z = 0.0 if diff == 0.0 else math.inf
            composed = COMPOSED[kind](g1, g2, alpha)
            gap = abs(closed - composed) / max(abs(composed), 1e-300)
            report.rows.append(
                DivergenceCheckRow(
                    trial=trial,
                    kind=kind,
                    dim=dim,
                    representation=representation,
                    alpha=alpha,
                    closed_form=closed,
                    monte_carlo=estimate.value,
                    standard_error=estimate.standard_error,
                    z_score=z,
                    composition_gap=gap,
                    passed=z <= z_limit,
                )
            )
    logger.info(
        f"[check-divergence] {trials} trials, worst z {report.worst_z:.2f}, "
        f"{'passed' if report.passed else 'FAILED'}"
    )
    return report


def corrupted_formulas() -> Dict[str, Formula]:
    """Deliberately wrong closed forms, used as a negative control."""
    return {
        "js": lambda g1, g2, a: 1.5 * js_geometric(g1, g2, a) + 0.1,
        "js_dual": lambda g1, g2, a: 1.5 * js_geometric_dual(g1, g2, a) + 0.1,
    }
