# npmatch/gradcheck.py
"""Central finite-difference checks of every analytic gradient that feeds the training loss."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Tuple

import numpy as np

from npmatch.config import TrainConfig
from npmatch.datagen import LabeledSet
from npmatch.gaussian_core import SkewParameter
from npmatch.nn_core import Mlp
from npmatch.np_model import (
    ContextMemory,
    ModelDims,
    NpModel,
    aggregate,
    context_records,
    encode,
    encode_with_cache,
    latent_parameters,
    latent_parameters_backward,
)
from npmatch.ssl_pipeline import PseudoLabelBatch, elbo_loss, total_loss

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
TOLERANCE = 1e-4
ERROR_FLOOR = 1e-3

# toy sizes: F = L = M = 4, C = 3, five labeled samples
TOY_DIMS = ModelDims(input_dim=2, feature_dim=4, latent_dim=4, num_classes=3, hidden_dim=4)
TOY_SAMPLES = 3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||g - g_fd|| / max(||g|| + ||g_fd||, 1e-3)."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return diff / max(scale, ERROR_FLOOR)


def numerical_gradient(fn: Callable[[], float], array: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of fn() with respect to ``array``, perturbed in place and restored."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn()
        flat[i] = original - h
        minus = fn()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def compare_gradients(
    value_fn: Callable[[], float],
    analytic: Mapping[str, np.ndarray],
    params: Mapping[str, np.ndarray],
    h: float = FD_STEP,
) -> Dict[str, float]:
    """Per-tensor relative error between ``analytic`` and finite differences over ``params``."""
    return {
        name: relative_error(analytic[name], numerical_gradient(value_fn, params[name], h))
        for name in params
    }


@dataclass
class SuiteResult:
    name: str
    errors: Dict[str, float]

    @property
    def worst(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


@dataclass
class GradCheckReport:
    seed: int
    trials: int
    suites: List[SuiteResult] = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def worst_relative_error(self) -> float:
        return max((s.worst for s in self.suites), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst_relative_error < self.tolerance

    def to_dict(self) -> Dict:
        worst_by_suite: Dict[str, float] = {}
        for suite in self.suites:
            worst_by_suite[suite.name] = max(worst_by_suite.get(suite.name, 0.0), suite.worst)
        return {
            "seed": self.seed,
            "trials": self.trials,
            "tolerance": self.tolerance,
            "worst_relative_error": self.worst_relative_error,
            "worst_by_suite": worst_by_suite,
            "passed": self.passed,
        }


def _mlp_suite(rng: np.random.Generator) -> SuiteResult:
    net = Mlp.he_uniform(3, 5, 4, rng)
    for layer in net.layers:
        layer.bias += rng.normal(0.0, 0.1, layer.bias.shape)
    batch = rng.standard_normal((6, 3))
    upstream = rng.standard_normal((6, 4))

    def value() -> float:
        out, _ = net.forward_with_cache(batch)
        return float(np.sum(out * upstream))

    net.forward(batch)
    grads = net.backward(upstream)
    errors = compare_gradients(value, grads.params, net.parameters())
    errors["inputs"] = relative_error(grads.inputs, numerical_gradient(value, batch))
    return SuiteResult("nn_core.mlp", errors)


def _toy_model(rng: np.random.Generator) -> NpModel:
    model = NpModel.initialize(TOY_DIMS, rng)
    for net in model.networks.values():
        for layer in net.layers:
            layer.bias += rng.normal(0.0, 0.1, layer.bias.shape)
    return model


def _encoder_suite(model: NpModel, rng: np.random.Generator) -> SuiteResult:
    batch = rng.standard_normal((5, TOY_DIMS.input_dim))
    upstream = rng.standard_normal((5, TOY_DIMS.feature_dim))

    def value() -> float:
        return float(np.sum(encode(model, batch) * upstream))

    _, cache = encode_with_cache(model, batch)
    grads = model.encoder.backward(upstream, cache)
    return SuiteResult("np_model.encode", compare_gradients(value, grads.params, model.encoder.parameters()))


def _posterior_suite(model: NpModel, rng: np.random.Generator) -> SuiteResult:
    features = rng.standard_normal((4, TOY_DIMS.feature_dim))
    probs = rng.dirichlet(np.ones(TOY_DIMS.num_classes), size=4)
    up_mean = rng.standard_normal(TOY_DIMS.latent_dim)
    up_logvar = rng.standard_normal(TOY_DIMS.latent_dim)

    def forward():
        agg = aggregate(context_records(features, probs, TOY_DIMS))[None, :]
        return latent_parameters(model, agg)

    def value() -> float:
        head = forward()
        return float(np.sum(head.means[0] * up_mean) + np.sum(head.logvars[0] * up_logvar))

    head = forward()
    grads = latent_parameters_backward(model, head, up_mean[None, :], up_logvar[None, :])
    return SuiteResult(
        "np_model.posterior_from_context",
        compare_gradients(value, grads.params, model.latent_head.parameters()),
    )


def _toy_batches(rng: np.random.Generator) -> Tuple[LabeledSet, LabeledSet, ContextMemory, np.ndarray]:
    points = rng.standard_normal((5, TOY_DIMS.input_dim))
    labels = rng.integers(0, TOY_DIMS.num_classes, 5)
    context = LabeledSet(points[:2], labels[:2])
    target = LabeledSet(points[2:], labels[2:])
    memory = ContextMemory(
        rng.standard_normal((2, TOY_DIMS.feature_dim)),
        rng.dirichlet(np.ones(TOY_DIMS.num_classes), size=2),
    )
    strong = rng.standard_normal((4, TOY_DIMS.input_dim))
    return context, target, memory, strong


def _loss_suites(model: NpModel, rng: np.random.Generator) -> List[SuiteResult]:
    context, target, memory, strong = _toy_batches(rng)
    params = model.parameters()
    loss_seed = int(rng.integers(0, 2**32))

    def elbo_value() -> float:
        return elbo_loss(model, context, target, TOY_SAMPLES, loss_seed, memory).value

    analytic = elbo_loss(model, context, target, TOY_SAMPLES, loss_seed, memory, with_grad=True).gradients
    elbo_errors = compare_gradients(elbo_value, analytic, params)

    cfg = TrainConfig(num_samples=TOY_SAMPLES, lambda_u=1.0, beta=0.5)
    pseudo = PseudoLabelBatch(
        indices=np.array([0, 2, 3]),
        labels=rng.integers(0, TOY_DIMS.num_classes, 3),
        confidence=np.ones(3),
        uncertainty=np.zeros(3),
    )
    alpha = SkewParameter(float(rng.uniform(0.1, 0.9)))

    def total_value() -> float:
        return total_loss(model, context, target, strong, pseudo, alpha, cfg, loss_seed, memory).value

    analytic = total_loss(
        model, context, target, strong, pseudo, alpha, cfg, loss_seed, memory, with_grad=True
    ).gradients
    total_errors = compare_gradients(total_value, analytic, params)
    return [SuiteResult("ssl_pipeline.elbo_loss", elbo_errors), SuiteResult("ssl_pipeline.total_loss", total_errors)]


def run_grad_check(seed: int = 0, trials: int = 20) -> GradCheckReport:
    """Run every suite on ``trials`` toy instances derived from ``seed``."""
    report = GradCheckReport(seed=seed, trials=trials)
    for trial_seed in np.random.SeedSequence(seed).spawn(trials):
        rng = np.random.default_rng(trial_seed)
        report.suites.append(_mlp_suite(rng))
        model = _toy_model(rng)
        report.suites.append(_encoder_suite(model, rng))
        report.suites.append(_posterior_suite(model, rng))
        report.suites.extend(_loss_suites(model, rng))
    logger.info(
        f"[grad-check] seed={seed} trials={trials} worst relative error {report.worst_relative_error:.3e}"
    )
    return report
