# npmatch/nn_core.py
"""Dense-network machinery: two-layer perceptrons with analytic gradients, SGD with momentum,
the cosine learning-rate schedule and the EMA parameter shadow."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from npmatch.errors import (
    DimensionMismatchError,
    InvalidParameterError,
    MissingCacheError,
    NonFiniteError,
    ScheduleError,
)

logger = logging.getLogger(__name__)

PARAMETER_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class DenseLayer:
    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre_activation: np.ndarray
    hidden: np.ndarray


@dataclass
class MlpGradients:
    params: Dict[str, np.ndarray]
    inputs: np.ndarray


class Mlp:
    """Affine -> ReLU -> affine network. Parameters are named w1, b1, w2, b2."""

    def __init__(self, layers: List[DenseLayer]):
        if len(layers) != 2:
            raise DimensionMismatchError(f"Mlp expects exactly 2 layers, got {len(layers)}")
        first, second = layers
        if first.weight.shape[1] != second.weight.shape[0]:
            raise DimensionMismatchError(
                f"Layer shapes do not chain: {first.weight.shape} then {second.weight.shape}"
            )
        for layer in layers:
            if layer.bias.shape != (layer.weight.shape[1],):
                raise DimensionMismatchError(
                    f"Bias shape {layer.bias.shape} does not match weight {layer.weight.shape}"
                )
        self.layers = layers
        self._cache: Optional[ForwardCache] = None

    @classmethod
    def he_uniform(cls, in_dim: int, hidden_dim: int, out_dim: int, rng: np.random.Generator) -> "Mlp":
        """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
        layers = []
        for fan_in, fan_out in ((in_dim, hidden_dim), (hidden_dim, out_dim)):
            limit = math.sqrt(6.0 / fan_in)
            layers.append(
                DenseLayer(
                    weight=rng.uniform(-limit, limit, size=(fan_in, fan_out)),
                    bias=np.zeros(fan_out),
                )
            )
        return cls(layers)

    @classmethod
    def zeros(cls, in_dim: int, hidden_dim: int, out_dim: int) -> "Mlp":
        return cls(
            [
                DenseLayer(np.zeros((in_dim, hidden_dim)), np.zeros(hidden_dim)),
                DenseLayer(np.zeros((hidden_dim, out_dim)), np.zeros(out_dim)),
            ]
        )

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[1].weight.shape[1]

    def parameters(self) -> Dict[str, np.ndarray]:
        """Live references to the parameter arrays."""
        first, second = self.layers
        return {"w1": first.weight, "b1": first.bias, "w2": second.weight, "b2": second.bias}

    def set_parameters(self, params: Mapping[str, np.ndarray]) -> None:
        current = self.parameters()
        for name in PARAMETER_NAMES:
            if name not in params:
                raise DimensionMismatchError(f"Missing parameter '{name}'")
            value = np.asarray(params[name], dtype=np.float64)
            if value.shape != current[name].shape:
                raise DimensionMismatchError(
                    f"Parameter '{name}' has shape {value.shape}, expected {current[name].shape}"
                )
        first, second = self.layers
        first.weight = np.array(params["w1"], dtype=np.float64)
        first.bias = np.array(params["b1"], dtype=np.float64)
        second.weight = np.array(params["w2"], dtype=np.float64)
        second.bias = np.array(params["b2"], dtype=np.float64)
        self._cache = None

    def copy(self) -> "Mlp":
        return Mlp([DenseLayer(l.weight.copy(), l.bias.copy()) for l in self.layers])

    def forward_with_cache(self, batch: np.ndarray):
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.in_dim:
            raise DimensionMismatchError(
                f"Batch shape {batch.shape} does not match input width {self.in_dim}"
            )
        first, second = self.layers
        pre = batch @ first.weight + first.bias
        hidden = np.maximum(pre, 0.0)
        out = hidden @ second.weight + second.bias
        return out, ForwardCache(inputs=batch, pre_activation=pre, hidden=hidden)

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """Compute the output and keep the activations for a following backward()."""
        out, self._cache = self.forward_with_cache(batch)
        return out

    def backward(self, upstream: np.ndarray, cache: Optional[ForwardCache] = None) -> MlpGradients:
        """Gradients for an upstream dL/d(output); uses the last forward() cache by default."""
        cache = cache if cache is not None else self._cache
        if cache is None:
            raise MissingCacheError("backward() called before forward() on this network")
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != (cache.inputs.shape[0], self.out_dim):
            raise DimensionMismatchError(
                f"Upstream gradient shape {upstream.shape} does not match output "
                f"({cache.inputs.shape[0]}, {self.out_dim})"
            )
        first, second = self.layers
        d_hidden = upstream @ second.weight.T
        # ReLU subgradient at exactly 0 is 0
        d_pre = d_hidden * (cache.pre_activation > 0.0)
        return MlpGradients(
            params={
                "w1": cache.inputs.T @ d_pre,
                "b1": d_pre.sum(axis=0),
                "w2": cache.hidden.T @ upstream,
                "b2": upstream.sum(axis=0),
            },
            inputs=d_pre @ first.weight.T,
        )


def _check_matching(reference: Mapping[str, np.ndarray], other: Mapping[str, np.ndarray], what: str):
    if set(reference) != set(other):
        raise DimensionMismatchError(
            f"{what} names do not match parameters",
            {"missing": sorted(set(reference) - set(other)), "extra": sorted(set(other) - set(reference))},
        )
    for name, value in reference.items():
        if np.shape(other[name]) != np.shape(value):
            raise DimensionMismatchError(
                f"{what} '{name}' has shape {np.shape(other[name])}, expected {np.shape(value)}"
            )


def cosine_lr(t: int, t_max: int, lr0: float) -> float:
    """Half-cosine decay from lr0 at t = 0 to 0 at t = t_max."""
    if t_max < 1:
        raise ScheduleError(f"Schedule length must be >= 1, got {t_max}")
    if t < 0 or t > t_max:
        raise ScheduleError(f"Iteration {t} outside schedule [0, {t_max}]", {"t": t, "t_max": t_max})
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / t_max))


@dataclass
class OptimizerState:
    """SGD with momentum; weight decay is folded into the momentum buffer."""

    lr0: float
    total_iterations: int
    weight_decay: float = 0.0
    momentum: float = 0.9
    iteration: int = 0
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        return cosine_lr(self.iteration, self.total_iterations, self.lr0)


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Rescale all gradients together so their global L2 norm is at most max_norm.

    max_norm = 0 disables clipping. Returns the (possibly rescaled) gradients and the norm
    before clipping.
    """
    if max_norm < 0.0:
        raise InvalidParameterError(f"Gradient clip norm must be >= 0, got {max_norm}")
    norm = math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
    if not math.isfinite(norm):
        raise NonFiniteError("Gradient norm is non-finite", {"norm": norm})
    if max_norm == 0.0 or norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


def sgd_step(
    state: OptimizerState, params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray]
) -> Dict[str, np.ndarray]:
    """v <- momentum * v + g + wd * theta; theta <- theta - lr(t) * v; t <- t + 1.

    Parameters are updated in place (so networks holding them see the change) and returned.
    Nothing is written unless every new value is finite.
    """
    _check_matching(params, grads, "Gradient")
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(
                f"Non-finite gradient for '{name}', step aborted",
                {"parameter": name, "iteration": state.iteration},
            )
    if state.iteration >= state.total_iterations:
        raise ScheduleError(
            f"Optimizer already ran {state.iteration} of {state.total_iterations} iterations"
        )
    lr = state.current_lr()

    updated_buffers = {}
    updated_params = {}
    for name, theta in params.items():
        buffer = state.buffers.get(name)
        if buffer is None:
            buffer = np.zeros_like(theta)
        updated_buffers[name] = state.momentum * buffer + grads[name] + state.weight_decay * theta
        updated_params[name] = theta - lr * updated_buffers[name]
        if not np.all(np.isfinite(updated_params[name])):
            raise NonFiniteError(
                f"Parameter '{name}' would become non-finite, step aborted",
                {"parameter": name, "iteration": state.iteration},
            )

    for name, theta in params.items():
        theta[...] = updated_params[name]
    state.buffers = updated_buffers
    state.iteration += 1
    return params


@dataclass
class EmaShadow:
    params: Dict[str, np.ndarray]
    momentum: float = 0.999

    @classmethod
    def from_parameters(cls, params: Mapping[str, np.ndarray], momentum: float = 0.999) -> "EmaShadow":
        return cls({name: np.array(value, dtype=np.float64) for name, value in params.items()}, momentum)


def ema_update(shadow: EmaShadow, params: Mapping[str, np.ndarray]) -> EmaShadow:
    """s <- s + (1 - m)(theta - s), i.e. s <- m s + (1 - m) theta, elementwise and in place."""
    _check_matching(shadow.params, params, "Live parameter")
    rate = 1.0 - shadow.momentum
    for name, value in shadow.params.items():
        value += rate * (params[name] - value)
    return shadow
