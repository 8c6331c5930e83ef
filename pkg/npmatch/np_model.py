# npmatch/np_model.py
"""
Neural-Process predictor: feature encoder, mean aggregation of context records into a
diagonal latent Gaussian, T-sample decoding, uncertainty scores and the FIFO memory banks
that extend the context across iterations.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, Iterator, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import entr, expit, softmax

from npmatch.errors import (
    DimensionMismatchError,
    EmptyContextError,
    InvalidParameterError,
)
from npmatch.gaussian_core import Gaussian
from npmatch.nn_core import ForwardCache, Mlp

logger = logging.getLogger(__name__)

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
# latent standard deviation is squashed into [0.05, 1]
LOGVAR_FLOOR = 2.0 * math.log(0.05)
LOGVAR_CEILING = 0.0
SIMPLEX_TOLERANCE = 1e-6
BENCHMARK_BANK_CAPACITY = 2560
VARIANCE_CEILING = 0.25

UncertaintyKind = Literal["entropy", "variance"]
NETWORK_NAMES = ("encoder", "latent_head", "decoder")


@dataclass(frozen=True)
class ModelDims:
    input_dim: int = 2
    feature_dim: int = 32
    latent_dim: int = 32
    num_classes: int = 2
    hidden_dim: int = 32

    def __post_init__(self):
        for name in ("input_dim", "feature_dim", "latent_dim", "num_classes", "hidden_dim"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"Model dimension '{name}' must be >= 1")


class NpModel:
    """Encoder (d -> F), latent head (F + C -> 2L) and decoder (F + L -> C), all width M."""

    def __init__(self, dims: ModelDims, encoder: Mlp, latent_head: Mlp, decoder: Mlp):
        expected = {
            "encoder": (dims.input_dim, dims.feature_dim),
            "latent_head": (dims.feature_dim + dims.num_classes, 2 * dims.latent_dim),
            "decoder": (dims.feature_dim + dims.latent_dim, dims.num_classes),
        }
        for name, net in (("encoder", encoder), ("latent_head", latent_head), ("decoder", decoder)):
            if (net.in_dim, net.out_dim) != expected[name]:
                raise DimensionMismatchError(
                    f"{name} maps {net.in_dim} -> {net.out_dim}, expected "
                    f"{expected[name][0]} -> {expected[name][1]}"
                )
        self.dims = dims
        self.encoder = encoder
        self.latent_head = latent_head
        self.decoder = decoder

    @classmethod
    def initialize(cls, dims: ModelDims, seed) -> "NpModel":
        rng = np.random.default_rng(seed)
        d, f, l, c, m = dims.input_dim, dims.feature_dim, dims.latent_dim, dims.num_classes, dims.hidden_dim
        return cls(
            dims,
            encoder=Mlp.he_uniform(d, m, f, rng),
            latent_head=Mlp.he_uniform(f + c, m, 2 * l, rng),
            decoder=Mlp.he_uniform(f + l, m, c, rng),
        )

    @property
    def networks(self) -> Dict[str, Mlp]:
        return {"encoder": self.encoder, "latent_head": self.latent_head, "decoder": self.decoder}

    def parameters(self) -> Dict[str, np.ndarray]:
        """Flat live view named '<network>.<w1|b1|w2|b2>'."""
        return {
            f"{net_name}.{name}": value
            for net_name, net in self.networks.items()
            for name, value in net.parameters().items()
        }

    def set_parameters(self, params: Mapping[str, np.ndarray]) -> None:
        expected = set(self.parameters())
        unknown = sorted(set(params) - expected)
        if unknown:
            raise DimensionMismatchError(f"Unknown parameter names: {unknown}")
        for net_name, net in self.networks.items():
            prefix = f"{net_name}."
            net.set_parameters(
                {key[len(prefix):]: value for key, value in params.items() if key.startswith(prefix)}
            )

    def clone(self) -> "NpModel":
        return NpModel(self.dims, self.encoder.copy(), self.latent_head.copy(), self.decoder.copy())


@dataclass(frozen=True)
class LatentPosterior:
    """Diagonal Gaussian over z, kept as mean and log-variance."""

    mean: np.ndarray
    logvar: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.logvar)

    @property
    def gaussian(self) -> Gaussian:
        return Gaussian.diagonal(self.mean, self.variance)

    def sample(self, num_samples: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Reparameterized draws z = mu + sigma * eps; returns (z, eps), each (T, L)."""
        eps = rng.standard_normal((num_samples, self.mean.size))
        return self.mean + np.exp(0.5 * self.logvar) * eps, eps


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidParameterError(f"Labels must lie in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def encode(model: NpModel, batch: np.ndarray) -> np.ndarray:
    """Features (N, F) of raw inputs (N, d). Leaves the encoder's stored activations untouched."""
    features, _ = model.encoder.forward_with_cache(batch)
    return features


def encode_with_cache(model: NpModel, batch: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    return model.encoder.forward_with_cache(batch)


def aggregate(records: np.ndarray) -> np.ndarray:
    """Column mean of context records, bit-identical under any row permutation.

    Columns are sorted before summation so the floating-point result does not depend on
    record order.
    """
    records = np.asarray(records, dtype=np.float64)
    if records.ndim != 2 or records.shape[0] == 0:
        raise EmptyContextError("Context must contain at least one record")
    return np.sort(records, axis=0).sum(axis=0) / records.shape[0]


def context_records(features: np.ndarray, probs: np.ndarray, dims: ModelDims) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != dims.feature_dim:
        raise DimensionMismatchError(
            f"Context features have shape {features.shape}, expected (K, {dims.feature_dim})"
        )
    if probs.shape != (features.shape[0], dims.num_classes):
        raise DimensionMismatchError(
            f"Context probabilities have shape {probs.shape}, expected "
            f"({features.shape[0]}, {dims.num_classes})"
        )
    return np.hstack([features, probs])


@dataclass
class LatentHeadOutput:
    means: np.ndarray  # (P, L)
    logvars: np.ndarray  # (P, L), bounded then clamped
    raw_logvars: np.ndarray  # (P, L), head output before the bound
    squashed: np.ndarray  # (P, L), sigmoid of the raw output
    cache: ForwardCache


def latent_parameters(model: NpModel, aggregates: np.ndarray) -> LatentHeadOutput:
    """Map P aggregated context vectors to P diagonal posteriors.

    log sigma^2 = floor + (ceiling - floor) * sigmoid(raw), then clamped to [LOGVAR_MIN, LOGVAR_MAX].
    """
    out, cache = model.latent_head.forward_with_cache(aggregates)
    latent = model.dims.latent_dim
    raw = out[:, latent:]
    squashed = expit(raw)
    bounded = LOGVAR_FLOOR + (LOGVAR_CEILING - LOGVAR_FLOOR) * squashed
    return LatentHeadOutput(
        means=out[:, :latent],
        logvars=np.clip(bounded, LOGVAR_MIN, LOGVAR_MAX),
        raw_logvars=raw,
        squashed=squashed,
        cache=cache,
    )


def latent_parameters_backward(
    model: NpModel, head: LatentHeadOutput, d_means: np.ndarray, d_logvars: np.ndarray
):
    """Backprop through the clamp, the sigmoid bound and the latent head; returns MlpGradients."""
    inside = (head.logvars > LOGVAR_MIN) & (head.logvars < LOGVAR_MAX)
    slope = (LOGVAR_CEILING - LOGVAR_FLOOR) * head.squashed * (1.0 - head.squashed)
    upstream = np.hstack([d_means, d_logvars * inside * slope])
    return model.latent_head.backward(upstream, head.cache)


def posterior_from_context(model: NpModel, features: np.ndarray, probs: np.ndarray) -> LatentPosterior:
    """q(z | context) from (K, F) features and (K, C) label probabilities."""
    records = context_records(features, probs, model.dims)
    head = latent_parameters(model, aggregate(records)[None, :])
    return LatentPosterior(mean=head.means[0], logvar=head.logvars[0])


def pair_with_latents(features: np.ndarray, latents: np.ndarray) -> np.ndarray:
    """Rows [feature_i || z_t] ordered i-major: row i * T + t."""
    num_targets, num_samples = features.shape[0], latents.shape[0]
    return np.hstack([np.repeat(features, num_samples, axis=0), np.tile(latents, (num_targets, 1))])


def uncertainty_entropy(mean_probs) -> float:
    """Entropy -sum p ln p of a probability vector, with 0 ln 0 = 0."""
    p = np.asarray(mean_probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidParameterError(f"Expected a probability vector, got shape {p.shape}")
    if np.any(p < -SIMPLEX_TOLERANCE) or abs(float(p.sum()) - 1.0) > SIMPLEX_TOLERANCE:
        raise InvalidParameterError("Input is not on the probability simplex", {"sum": float(p.sum())})
    return float(entr(np.clip(p, 0.0, None)).sum())


def uncertainty_variance(probs) -> float:
    """Mean over classes of the population variance across the T sampled predictions."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise InvalidParameterError(f"Expected a (T, C) matrix, got shape {probs.shape}")
    if probs.shape[0] < 2:
        raise InvalidParameterError(f"Variance uncertainty needs T >= 2 samples, got {probs.shape[0]}")
    return float(np.var(probs, axis=0).mean())


@dataclass(frozen=True)
class NpPrediction:
    probs: np.ndarray  # (T, C)
    mean_probs: np.ndarray  # (C,)
    uncertainty: float
    confidence: float

    @property
    def label(self) -> int:
        return int(np.argmax(self.mean_probs))


@dataclass(frozen=True)
class NpPredictionBatch:
    """Predictions for N targets sharing one set of T latent draws."""

    probs: np.ndarray  # (N, T, C)
    mean_probs: np.ndarray  # (N, C)
    uncertainty: np.ndarray  # (N,)
    confidence: np.ndarray  # (N,)
    kind: UncertaintyKind = "entropy"

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __getitem__(self, index: int) -> NpPrediction:
        return NpPrediction(
            probs=self.probs[index],
            mean_probs=self.mean_probs[index],
            uncertainty=float(self.uncertainty[index]),
            confidence=float(self.confidence[index]),
        )

    def __iter__(self) -> Iterator[NpPrediction]:
        return (self[i] for i in range(len(self)))

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.mean_probs, axis=1)


def predict_from_posterior(
    model: NpModel,
    target_features: np.ndarray,
    posterior: LatentPosterior,
    num_samples: int,
    seed,
    uncertainty_kind: UncertaintyKind = "entropy",
) -> NpPredictionBatch:
    if num_samples < 1:
        raise InvalidParameterError(f"Number of latent samples must be >= 1, got {num_samples}")
    if uncertainty_kind not in ("entropy", "variance"):
        raise InvalidParameterError(f"Unknown uncertainty kind '{uncertainty_kind}'")
    target_features = np.asarray(target_features, dtype=np.float64)
    num_targets = target_features.shape[0]
    latents, _ = posterior.sample(num_samples, np.random.default_rng(seed))
    logits, _ = model.decoder.forward_with_cache(pair_with_latents(target_features, latents))
    probs = softmax(logits, axis=1).reshape(num_targets, num_samples, model.dims.num_classes)
    mean_probs = probs.mean(axis=1)
    if uncertainty_kind == "entropy":
        uncertainty = entr(mean_probs).sum(axis=1)
    elif num_samples == 1:
        # a single draw has no spread
        uncertainty = np.zeros(num_targets)
    else:
        uncertainty = np.var(probs, axis=1).mean(axis=1)
    return NpPredictionBatch(
        probs=probs,
        mean_probs=mean_probs,
        uncertainty=uncertainty,
        confidence=mean_probs.max(axis=1) if num_targets else np.zeros(0),
        kind=uncertainty_kind,
    )


def predict(
    model: NpModel,
    targets: np.ndarray,
    context_features: np.ndarray,
    context_probs: np.ndarray,
    num_samples: int,
    seed,
    uncertainty_kind: UncertaintyKind = "entropy",
) -> NpPredictionBatch:
    """Encode raw targets, condition on the context records and decode T latent draws."""
    if num_samples < 1:
        raise InvalidParameterError(f"Number of latent samples must be >= 1, got {num_samples}")
    posterior = posterior_from_context(model, context_features, context_probs)
    return predict_from_posterior(
        model, encode(model, targets), posterior, num_samples, seed, uncertainty_kind
    )


class MemoryBank:
    """Fixed-capacity FIFO of (feature, class-probability) records."""

    def __init__(self, capacity: int, feature_dim: int, num_classes: int):
        if capacity < 1:
            raise InvalidParameterError(f"Memory bank capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self._records: Deque[Tuple[np.ndarray, np.ndarray]] = deque(maxlen=capacity)
        self.pushes = 0
        self.evictions = 0
        self._stacked: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __len__(self) -> int:
        return len(self._records)

    @property
    def cursor(self) -> int:
        """Slot the next record would occupy in a ring buffer of size capacity."""
        return self.pushes % self.capacity

    def push(self, features: np.ndarray, probs: np.ndarray) -> "MemoryBank":
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        if features.shape[0] == 0:
            return self
        if features.shape[1] != self.feature_dim:
            raise DimensionMismatchError(
                f"Record feature dim {features.shape[1]} does not match bank dim {self.feature_dim}"
            )
        if probs.shape != (features.shape[0], self.num_classes):
            raise DimensionMismatchError(
                f"Record probabilities have shape {probs.shape}, expected "
                f"({features.shape[0]}, {self.num_classes})"
            )
        for feature, prob in zip(features, probs):
            if len(self._records) == self.capacity:
                self.evictions += 1
            self._records.append((feature.copy(), prob.copy()))
        self.pushes += features.shape[0]
        self._stacked = None
        return self

    def _stack(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._stacked is None:
            if self._records:
                features, probs = zip(*self._records)
                self._stacked = (np.vstack(features), np.vstack(probs))
            else:
                self._stacked = (np.zeros((0, self.feature_dim)), np.zeros((0, self.num_classes)))
        return self._stacked

    @property
    def features(self) -> np.ndarray:
        return self._stack()[0]

    @property
    def probs(self) -> np.ndarray:
        return self._stack()[1]

    def records(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return list(self._records)

    def restore(self, features: np.ndarray, probs: np.ndarray, pushes: int, evictions: int) -> "MemoryBank":
        """Reload saved contents without counting them as new pushes."""
        self._records.clear()
        self._stacked = None
        self.push(features, probs)
        self.pushes = pushes
        self.evictions = evictions
        return self


def bank_init(
    capacity: int = BENCHMARK_BANK_CAPACITY, feature_dim: int = 32, num_classes: int = 2, seed=None
) -> MemoryBank:
    """A bank holding one seeded random record (standard-normal feature, Dirichlet probabilities)."""
    rng = np.random.default_rng(seed)
    bank = MemoryBank(capacity, feature_dim, num_classes)
    bank.push(rng.standard_normal((1, feature_dim)), rng.dirichlet(np.ones(num_classes))[None, :])
    return bank


def bank_push(bank: MemoryBank, features: np.ndarray, probs: np.ndarray) -> MemoryBank:
    return bank.push(features, probs)


@dataclass(frozen=True)
class ContextMemory:
    """Concatenated contents of the memory banks, used as extra context records."""

    features: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_banks(cls, banks: Sequence[MemoryBank], dims: ModelDims) -> "ContextMemory":
        if not banks:
            return cls.empty(dims)
        return cls(
            np.vstack([bank.features for bank in banks]),
            np.vstack([bank.probs for bank in banks]),
        )

    @classmethod
    def empty(cls, dims: ModelDims) -> "ContextMemory":
        return cls(np.zeros((0, dims.feature_dim)), np.zeros((0, dims.num_classes)))

    def __len__(self) -> int:
        return self.features.shape[0]

    def records(self) -> np.ndarray:
        return np.hstack([self.features, self.probs])
