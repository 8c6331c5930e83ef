# npmatch/ssl_pipeline.py
"""
The semi-supervised training loop.

Per iteration the EMA teacher predicts on weak views of the unlabeled batch, the dual gate
(confidence >= tau_c and uncertainty < tau_u) admits hard pseudo-labels, and the student
minimizes

    ELBO(labeled target | labeled context) + lambda_u * CE(pseudo-labels, strong views)
        + beta * JS_G(q_context, q_all; alpha_u)

with SGD, after which the teacher follows by EMA and both memory banks are refreshed.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import log_softmax

from npmatch.config import TrainConfig
from npmatch.datagen import Dataset, LabeledSet, augment
from npmatch.errors import (
    EmptyContextError,
    InvalidParameterError,
    NonFiniteError,
    NpMatchError,
    TrainingDivergedError,
)
from npmatch.gaussian_core import (
    SkewParameter,
    js_geometric,
    js_geometric_diagonal_with_grad,
    kl,
    kl_diagonal_with_grad,
)
from npmatch.nn_core import EmaShadow, OptimizerState, clip_grad_norm, ema_update, sgd_step
from npmatch.np_model import (
    VARIANCE_CEILING,
    ContextMemory,
    LatentPosterior,
    MemoryBank,
    ModelDims,
    NpModel,
    NpPredictionBatch,
    aggregate,
    bank_init,
    encode,
    latent_parameters,
    latent_parameters_backward,
    one_hot,
    pair_with_latents,
    predict_from_posterior,
    posterior_from_context,
)

logger = logging.getLogger(__name__)

ALPHA_MIN = 0.01
ALPHA_MAX = 0.99

METRIC_FIELDS = [
    "iteration",
    "lr",
    "loss",
    "elbo_reconstruction",
    "elbo_kl",
    "unlabeled_ce",
    "js_regularizer",
    "selected",
    "selection_rate",
    "alpha",
    "mean_uncertainty",
    "grad_norm",
    "labeled_bank_size",
    "pseudo_bank_size",
    "test_accuracy",
]


# ---------------- Pseudo-labels ----------------
@dataclass(frozen=True)
class PseudoLabelBatch:
    indices: np.ndarray
    labels: np.ndarray
    confidence: np.ndarray
    uncertainty: np.ndarray

    def __len__(self) -> int:
        return self.indices.size

    @classmethod
    def empty(cls) -> "PseudoLabelBatch":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0))

    def dense(self, size: int):
        """(labels, mask) over a batch of ``size`` samples; unselected rows get label 0, mask 0."""
        labels = np.zeros(size, dtype=np.int64)
        mask = np.zeros(size)
        labels[self.indices] = self.labels
        mask[self.indices] = 1.0
        return labels, mask


def select_pseudo_labels(preds: NpPredictionBatch, cfg: TrainConfig) -> PseudoLabelBatch:
    """Samples with confidence >= tau_c AND uncertainty < tau_u, labeled by argmax."""
    if isinstance(preds, NpPredictionBatch):
        confidence, uncertainty, mean_probs = preds.confidence, preds.uncertainty, preds.mean_probs
    else:
        preds = list(preds)
        if not preds:
            return PseudoLabelBatch.empty()
        confidence = np.array([p.confidence for p in preds])
        uncertainty = np.array([p.uncertainty for p in preds])
        mean_probs = np.vstack([p.mean_probs for p in preds])
    selected = np.flatnonzero(
        (confidence >= cfg.confidence_threshold) & (uncertainty < cfg.uncertainty_threshold)
    )
    return PseudoLabelBatch(
        indices=selected,
        labels=np.argmax(mean_probs[selected], axis=1) if selected.size else np.zeros(0, dtype=np.int64),
        confidence=confidence[selected],
        uncertainty=uncertainty[selected],
    )


def skew_from_uncertainty(u: float, cfg: TrainConfig, num_classes: int) -> SkewParameter:
    """alpha_u = clamp(u / ceiling, 0.01, 0.99); ceiling is ln C (entropy) or 0.25 (variance)."""
    if not math.isfinite(u) or u < 0.0:
        raise InvalidParameterError(f"Mean uncertainty must be finite and >= 0, got {u}")
    if cfg.uncertainty_kind == "entropy":
        if num_classes < 2:
            raise InvalidParameterError("Entropy normalization needs at least 2 classes")
        ceiling = math.log(num_classes)
    else:
        ceiling = VARIANCE_CEILING
    return SkewParameter(min(max(u / ceiling, ALPHA_MIN), ALPHA_MAX))


# ---------------- Losses ----------------
@dataclass
class LossResult:
    value: float
    diagnostics: Dict[str, float]
    gradients: Optional[Dict[str, np.ndarray]] = None
    posteriors: Dict[str, LatentPosterior] = field(default_factory=dict)


def _objective(
    model: NpModel,
    context: LabeledSet,
    target: LabeledSet,
    memory: Optional[ContextMemory],
    strong_points: Optional[np.ndarray],
    pseudo: Optional[PseudoLabelBatch],
    alpha: SkewParameter,
    lambda_u: float,
    beta: float,
    num_samples: int,
    seed,
    with_grad: bool,
    include_unlabeled_terms: bool,
) -> LossResult:
    """One student forward pass (and optionally backward) over every loss term.

    Posteriors: q_context on (context split + memory), q_target on the target split, q_all on
    (whole labeled batch + memory). Targets decode with z ~ q_target, strong views with
    z ~ q_all; the same eps is shared by all rows of one group.
    """
    dims = model.dims
    m, r = len(context), len(target)
    if m == 0 or r == 0:
        raise EmptyContextError("Labeled batch must split into non-empty context and target")
    if num_samples < 1:
        raise InvalidParameterError(f"Number of latent samples must be >= 1, got {num_samples}")
    memory = memory if memory is not None else ContextMemory.empty(dims)
    strong = (
        np.asarray(strong_points, dtype=np.float64)
        if strong_points is not None
        else np.zeros((0, dims.input_dim))
    )
    u = strong.shape[0]
    if u:
        pseudo_labels, pseudo_mask = (pseudo or PseudoLabelBatch.empty()).dense(u)
    else:
        pseudo_labels, pseudo_mask = np.zeros(0, dtype=np.int64), np.zeros(0)
    t = num_samples
    f_dim, l_dim, k = dims.feature_dim, dims.latent_dim, len(memory)

    # forward
    feats, enc_cache = model.encoder.forward_with_cache(np.vstack([context.points, target.points, strong]))
    rec_ctx = np.hstack([feats[:m], one_hot(context.labels, dims.num_classes)])
    rec_tgt = np.hstack([feats[m:m + r], one_hot(target.labels, dims.num_classes)])
    rec_mem = memory.records()
    counts = (m + k, r, m + r + k)
    aggregates = np.vstack(
        [
            aggregate(np.vstack([rec_ctx, rec_mem])),
            aggregate(rec_tgt),
            aggregate(np.vstack([rec_ctx, rec_tgt, rec_mem])),
        ]
    )
    head = latent_parameters(model, aggregates)
    means, logvars = head.means, head.logvars
    std = np.exp(0.5 * logvars)

    rng = np.random.default_rng(seed)
    eps_tgt = rng.standard_normal((t, l_dim))
    eps_u = rng.standard_normal((t, l_dim))
    z_tgt = means[1] + std[1] * eps_tgt
    z_u = means[2] + std[2] * eps_u
    decoder_in = np.vstack(
        [pair_with_latents(feats[m:m + r], z_tgt), pair_with_latents(feats[m + r:], z_u)]
    )
    logits, dec_cache = model.decoder.forward_with_cache(decoder_in)
    log_probs = log_softmax(logits, axis=1)
    row_labels = np.concatenate([np.repeat(target.labels, t), np.repeat(pseudo_labels, t)])
    rows = np.arange(row_labels.size)
    nll = -log_probs[rows, row_labels]

    recon = float(np.sum(nll[:r * t]) / t)
    unlabeled = float(lambda_u * np.sum(np.repeat(pseudo_mask, t) * nll[r * t:]) / (u * t)) if u else 0.0

    q_context = LatentPosterior(means[0], logvars[0])
    q_target = LatentPosterior(means[1], logvars[1])
    q_all = LatentPosterior(means[2], logvars[2])
    kl_term = kl(q_target.gaussian, q_context.gaussian)
    js_term = beta * js_geometric(q_context.gaussian, q_all.gaussian, alpha) if beta > 0 else 0.0

    diagnostics = {"elbo_reconstruction": recon, "elbo_kl": kl_term}
    value = recon + kl_term
    if include_unlabeled_terms:
        diagnostics["unlabeled_ce"] = unlabeled
        diagnostics["js_regularizer"] = js_term
        value = value + unlabeled + js_term
    posteriors = {"context": q_context, "target": q_target, "all": q_all}
    if not with_grad:
        return LossResult(value, diagnostics, None, posteriors)

    # backward
    row_weights = np.full(r * t, 1.0 / t)
    if u:
        row_weights = np.concatenate([row_weights, np.repeat(lambda_u * pseudo_mask / (u * t), t)])
    d_logits = np.exp(log_probs)
    d_logits[rows, row_labels] -= 1.0
    d_logits *= row_weights[:, None]
    dec_grads = model.decoder.backward(d_logits, dec_cache)
    d_in = dec_grads.inputs
    d_tgt_rows, d_u_rows = d_in[:r * t], d_in[r * t:]

    d_feats = np.zeros_like(feats)
    d_feats[m:m + r] += d_tgt_rows[:, :f_dim].reshape(r, t, f_dim).sum(axis=1)
    d_means = np.zeros_like(means)
    d_logvars = np.zeros_like(logvars)
    d_z_tgt = d_tgt_rows[:, f_dim:].reshape(r, t, l_dim).sum(axis=0)
    d_means[1] += d_z_tgt.sum(axis=0)
    d_logvars[1] += 0.5 * std[1] * (d_z_tgt * eps_tgt).sum(axis=0)
    if u:
        d_feats[m + r:] += d_u_rows[:, :f_dim].reshape(u, t, f_dim).sum(axis=1)
        d_z_u = d_u_rows[:, f_dim:].reshape(u, t, l_dim).sum(axis=0)
        d_means[2] += d_z_u.sum(axis=0)
        d_logvars[2] += 0.5 * std[2] * (d_z_u * eps_u).sum(axis=0)

    _, kl_grads = kl_diagonal_with_grad(means[1], logvars[1], means[0], logvars[0])
    d_means[1] += kl_grads["mean_p"]
    d_logvars[1] += kl_grads["logvar_p"]
    d_means[0] += kl_grads["mean_q"]
    d_logvars[0] += kl_grads["logvar_q"]
    if include_unlabeled_terms and beta > 0:
        _, js_grads = js_geometric_diagonal_with_grad(means[0], logvars[0], means[2], logvars[2], alpha.alpha)
        d_means[0] += beta * js_grads["mean1"]
        d_logvars[0] += beta * js_grads["logvar1"]
        d_means[2] += beta * js_grads["mean2"]
        d_logvars[2] += beta * js_grads["logvar2"]

    head_grads = latent_parameters_backward(model, head, d_means, d_logvars)
    d_agg = head_grads.inputs[:, :f_dim] / np.array(counts, dtype=np.float64)[:, None]
    # the mean aggregate spreads its gradient evenly over member records
    d_feats[:m] += d_agg[0] + d_agg[2]
    d_feats[m:m + r] += d_agg[1] + d_agg[2]
    enc_grads = model.encoder.backward(d_feats, enc_cache)

    gradients = {}
    for net_name, grads in (
        ("encoder", enc_grads),
        ("latent_head", head_grads),
        ("decoder", dec_grads),
    ):
        for name, value_grad in grads.params.items():
            gradients[f"{net_name}.{name}"] = value_grad
    return LossResult(value, diagnostics, gradients, posteriors)


def elbo_loss(
    model: NpModel,
    context: LabeledSet,
    target: LabeledSet,
    num_samples: int = 10,
    seed=0,
    memory: Optional[ContextMemory] = None,
    with_grad: bool = False,
) -> LossResult:
    """-(sum_targets E_q log p(y_i | z, x_i) - KL(q_target || q_context)); the constant
    log p(y_context) term is left out."""
    return _objective(
        model,
        context,
        target,
        memory,
        strong_points=None,
        pseudo=None,
        alpha=SkewParameter(0.5),
        lambda_u=0.0,
        beta=0.0,
        num_samples=num_samples,
        seed=seed,
        with_grad=with_grad,
        include_unlabeled_terms=False,
    )


def total_loss(
    model: NpModel,
    context: LabeledSet,
    target: LabeledSet,
    strong_points: Optional[np.ndarray],
    pseudo: Optional[PseudoLabelBatch],
    alpha: SkewParameter,
    cfg: TrainConfig,
    seed=0,
    memory: Optional[ContextMemory] = None,
    with_grad: bool = False,
) -> LossResult:
    """ELBO + lambda_u * pseudo-label CE on strong views + beta * JS_G(q_context, q_all; alpha)."""
    return _objective(
        model,
        context,
        target,
        memory,
        strong_points=strong_points,
        pseudo=pseudo,
        alpha=alpha,
        lambda_u=cfg.lambda_u,
        beta=cfg.beta,
        num_samples=cfg.num_samples,
        seed=seed,
        with_grad=with_grad,
        include_unlabeled_terms=True,
    )


def split_labeled_batch(size: int, rng: np.random.Generator):
    """Random context/target index split, half each, at least one on each side."""
    if size < 2:
        raise EmptyContextError(f"A labeled batch of {size} cannot be split into context and target")
    order = rng.permutation(size)
    n_context = min(max(size // 2, 1), size - 1)
    return order[:n_context], order[n_context:]


# ---------------- Evaluation ----------------
@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    mean_confidence: float
    mean_uncertainty: float
    num_points: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "mean_confidence": self.mean_confidence,
            "mean_uncertainty": self.mean_uncertainty,
            "num_points": self.num_points,
        }


def evaluate(
    model: NpModel,
    test: LabeledSet,
    labeled: LabeledSet,
    memory: Optional[ContextMemory] = None,
    num_samples: int = 10,
    seed=0,
    uncertainty_kind: str = "entropy",
) -> EvaluationReport:
    """Accuracy of argmax(mean_probs) on ``test``, conditioning on the labeled set and memory."""
    if len(test) == 0:
        raise InvalidParameterError("Cannot evaluate on an empty test set")
    memory = memory if memory is not None else ContextMemory.empty(model.dims)
    context_features = np.vstack([encode(model, labeled.points), memory.features])
    context_probs = np.vstack([one_hot(labeled.labels, model.dims.num_classes), memory.probs])
    posterior = posterior_from_context(model, context_features, context_probs)
    preds = predict_from_posterior(
        model, encode(model, test.points), posterior, num_samples, seed, uncertainty_kind
    )
    return EvaluationReport(
        accuracy=float(np.mean(preds.labels == test.labels)),
        mean_confidence=float(np.mean(preds.confidence)),
        mean_uncertainty=float(np.mean(preds.uncertainty)),
        num_points=len(test),
    )


def evaluate_on_dataset(
    model: NpModel, dataset: Dataset, banks: Sequence[MemoryBank], cfg: TrainConfig
) -> EvaluationReport:
    """The evaluation used for training metrics, the final report and checkpoint eval."""
    return evaluate(
        model,
        dataset.test(),
        dataset.labeled(),
        ContextMemory.from_banks(banks, model.dims),
        num_samples=cfg.num_samples,
        seed=cfg.seed,
        uncertainty_kind=cfg.uncertainty_kind,
    )


# ---------------- Training ----------------
@dataclass
class TrainingReport:
    config: TrainConfig
    metrics: List[Dict[str, float]]
    final: EvaluationReport
    student_final: EvaluationReport
    student: NpModel
    teacher: NpModel
    shadow: EmaShadow
    banks: Dict[str, MemoryBank]
    optimizer: OptimizerState

    def to_dict(self) -> Dict:
        return {
            "config": self.config.model_dump(),
            "iterations": self.optimizer.iteration,
            "final": self.final.to_dict(),
            "student_final": self.student_final.to_dict(),
            "banks": {
                name: {
                    "capacity": bank.capacity,
                    "length": len(bank),
                    "pushes": bank.pushes,
                    "evictions": bank.evictions,
                }
                for name, bank in self.banks.items()
            },
            "metric_rows": len(self.metrics),
        }


def model_dims_for(cfg: TrainConfig, dataset: Dataset) -> ModelDims:
    return ModelDims(
        input_dim=dataset.points.shape[1],
        feature_dim=cfg.feature_dim,
        latent_dim=cfg.latent_dim,
        num_classes=dataset.num_classes,
        hidden_dim=cfg.hidden_dim,
    )


def _check_dataset(dataset: Dataset) -> None:
    labeled = dataset.labeled()
    missing = sorted(set(range(dataset.num_classes)) - set(labeled.labels.tolist()))
    if missing:
        raise InvalidParameterError(
            f"Every class needs a labeled sample; missing classes {missing}", {"missing": missing}
        )
    if not dataset.unlabeled_mask.any():
        raise InvalidParameterError("Dataset has no unlabeled points")
    if not dataset.test_mask.any():
        raise InvalidParameterError("Dataset has no test points")


def train(
    cfg: TrainConfig,
    dataset: Dataset,
    on_metrics: Optional[Callable[[Dict[str, float]], None]] = None,
) -> TrainingReport:
    """Run cfg.total_iterations iterations; fully reproducible from cfg.seed."""
    _check_dataset(dataset)
    dims = model_dims_for(cfg, dataset)
    model_seed, bank_a_seed, bank_b_seed, loop_seed = np.random.SeedSequence(cfg.seed).spawn(4)
    student = NpModel.initialize(dims, model_seed)
    shadow = EmaShadow.from_parameters(student.parameters(), cfg.ema_momentum)
    teacher = student.clone()
    labeled_bank = bank_init(cfg.bank_capacity, dims.feature_dim, dims.num_classes, bank_a_seed)
    pseudo_bank = bank_init(cfg.bank_capacity, dims.feature_dim, dims.num_classes, bank_b_seed)
    banks = {"labeled": labeled_bank, "pseudo": pseudo_bank}
    optimizer = OptimizerState(
        lr0=cfg.lr,
        total_iterations=cfg.total_iterations,
        weight_decay=cfg.weight_decay,
        momentum=cfg.momentum,
    )
    rng = np.random.default_rng(loop_seed)
    labeled_idx = np.flatnonzero(dataset.labeled_mask)
    unlabeled_idx = np.flatnonzero(dataset.unlabeled_mask)
    unlabeled_batch = cfg.batch_size * cfg.unlabeled_ratio
    teacher_predicts = cfg.lambda_u > 0 or cfg.beta > 0
    metrics: List[Dict[str, float]] = []
    totals: Dict[str, float] = {}
    steps_in_window = 0

    logger.info(
        f"[train] seed={cfg.seed} iterations={cfg.total_iterations} labeled={labeled_idx.size} "
        f"unlabeled={unlabeled_idx.size} lambda_u={cfg.lambda_u} beta={cfg.beta}"
    )
    for iteration in range(cfg.total_iterations):
        seeds = rng.integers(0, 2**32, size=5)
        batch_l = rng.choice(labeled_idx, size=cfg.batch_size, replace=True)
        batch_u = rng.choice(unlabeled_idx, size=unlabeled_batch, replace=unlabeled_idx.size < unlabeled_batch)
        context_idx, target_idx = split_labeled_batch(cfg.batch_size, rng)
        lr = optimizer.current_lr()
        dump: Dict[str, Any] = {"iteration": iteration, "lr": lr}
        try:
            x_l = augment(dataset.points[batch_l], "weak", int(seeds[0]), weak_sigma=cfg.weak_sigma)
            y_l = dataset.labels[batch_l]
            memory = ContextMemory.from_banks([labeled_bank, pseudo_bank], dims)
            teacher_feats_l = encode(teacher, x_l)

            pseudo = PseudoLabelBatch.empty()
            alpha = SkewParameter(ALPHA_MIN)
            mean_uncertainty = 0.0
            strong = None
            teacher_feats_u = None
            if teacher_predicts:
                x_weak = augment(dataset.points[batch_u], "weak", int(seeds[1]), weak_sigma=cfg.weak_sigma)
                teacher_feats_u = encode(teacher, x_weak)
                posterior = posterior_from_context(
                    teacher,
                    np.vstack([teacher_feats_l, memory.features]),
                    np.vstack([one_hot(y_l, dims.num_classes), memory.probs]),
                )
                preds = predict_from_posterior(
                    teacher, teacher_feats_u, posterior, cfg.num_samples, int(seeds[2]), cfg.uncertainty_kind
                )
                mean_uncertainty = float(preds.uncertainty.mean())
                dump["mean_uncertainty"] = mean_uncertainty
                if not (np.all(np.isfinite(preds.mean_probs)) and math.isfinite(mean_uncertainty)):
                    raise NonFiniteError("Teacher predictions on the unlabeled batch are non-finite")
                alpha = skew_from_uncertainty(mean_uncertainty, cfg, dims.num_classes)
                if cfg.lambda_u > 0:
                    pseudo = select_pseudo_labels(preds, cfg)
                    strong = augment(
                        dataset.points[batch_u],
                        "strong",
                        int(seeds[3]),
                        strong_sigma=cfg.strong_sigma,
                        dropout=cfg.strong_dropout,
                    )
            dump.update(selected=len(pseudo), alpha=alpha.alpha)

            result = total_loss(
                student,
                LabeledSet(x_l[context_idx], y_l[context_idx]),
                LabeledSet(x_l[target_idx], y_l[target_idx]),
                strong,
                pseudo,
                alpha,
                cfg,
                seed=int(seeds[4]),
                memory=memory,
                with_grad=True,
            )
            dump.update(loss=result.value, diagnostics=result.diagnostics)
            if not all(math.isfinite(v) for v in (result.value, *result.diagnostics.values())):
                raise NonFiniteError("Training loss is non-finite")
            gradients, grad_norm = clip_grad_norm(result.gradients, cfg.grad_clip_norm)
            dump["grad_norm"] = grad_norm
            sgd_step(optimizer, student.parameters(), gradients)
        except NpMatchError as e:
            logger.error(f"[train] diverged at iteration {iteration}: {e.message} {dump}")
            raise TrainingDivergedError(
                f"Training diverged at iteration {iteration}: {e.message}", {**dump, "cause": e.to_dict()}
            ) from e
        ema_update(shadow, student.parameters())
        teacher.set_parameters(shadow.params)

        labeled_bank.push(teacher_feats_l, one_hot(y_l, dims.num_classes))
        if cfg.lambda_u > 0 and len(pseudo):
            pseudo_bank.push(teacher_feats_u[pseudo.indices], one_hot(pseudo.labels, dims.num_classes))

        window = {
            "lr": lr,
            "loss": result.value,
            **result.diagnostics,
            "selected": float(len(pseudo)),
            "selection_rate": len(pseudo) / unlabeled_batch,
            "alpha": alpha.alpha,
            "mean_uncertainty": mean_uncertainty,
            "grad_norm": grad_norm,
        }
        for key, value in window.items():
            totals[key] = totals.get(key, 0.0) + value
        steps_in_window += 1

        done = iteration + 1
        if done % cfg.log_interval == 0 or done == cfg.total_iterations:
            evaluation = evaluate_on_dataset(teacher, dataset, [labeled_bank, pseudo_bank], cfg)
            row: Dict[str, float] = {"iteration": done}
            for key in METRIC_FIELDS[1:-3]:
                row[key] = totals[key] / steps_in_window
            row["labeled_bank_size"] = len(labeled_bank)
            row["pseudo_bank_size"] = len(pseudo_bank)
            row["test_accuracy"] = evaluation.accuracy
            metrics.append(row)
            totals, steps_in_window = {}, 0
            logger.info(
                f"[train] it={done} loss={row['loss']:.4f} selected={row['selection_rate']:.3f} "
                f"acc={row['test_accuracy']:.4f}"
            )
            if on_metrics is not None:
                on_metrics(row)

    final = evaluate_on_dataset(teacher, dataset, [labeled_bank, pseudo_bank], cfg)
    student_final = evaluate_on_dataset(student, dataset, [labeled_bank, pseudo_bank], cfg)
    logger.info(f"[train] finished: teacher acc={final.accuracy:.4f} student acc={student_final.accuracy:.4f}")
    return TrainingReport(
        config=cfg,
        metrics=metrics,
        final=final,
        student_final=student_final,
        student=student,
        teacher=teacher,
        shadow=shadow,
        banks=banks,
        optimizer=optimizer,
    )


# ---------------- Seed comparison ----------------
@dataclass(frozen=True)
class ArmSummary:
    accuracies: List[float]

    @property
    def median(self) -> float:
        return float(np.median(self.accuracies))

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    def to_dict(self) -> Dict:
        return {"accuracies": self.accuracies, "median": self.median, "mean": self.mean, "std": self.std}


@dataclass(frozen=True)
class ComparisonReport:
    seeds: List[int]
    npmatch: ArmSummary
    supervised: ArmSummary

    @property
    def median_gain(self) -> float:
        """Median of the per-seed accuracy differences."""
        gains = np.array(self.npmatch.accuracies) - np.array(self.supervised.accuracies)
        return float(np.median(gains))

    def to_dict(self) -> Dict:
        return {
            "seeds": self.seeds,
            "npmatch": self.npmatch.to_dict(),
            "supervised": self.supervised.to_dict(),
            "median_gain": self.median_gain,
        }


def supervised_ablation(cfg: TrainConfig) -> TrainConfig:
    return cfg.model_copy(update={"lambda_u": 0.0, "beta": 0.0})


def compare_runs(
    cfg: TrainConfig, dataset_factory: Callable[[int], Dataset], seeds: Sequence[int]
) -> ComparisonReport:
    """Train the full method and the supervised-only ablation on the same seeds and data."""
    if not seeds:
        raise InvalidParameterError("compare_runs needs at least one seed")
    full_acc, sup_acc = [], []
    for seed in seeds:
        dataset = dataset_factory(seed)
        seeded = cfg.model_copy(update={"seed": seed})
        full_acc.append(train(seeded, dataset).final.accuracy)
        sup_acc.append(train(supervised_ablation(seeded), dataset).final.accuracy)
        logger.info(f"[compare] seed={seed} npmatch={full_acc[-1]:.4f} supervised={sup_acc[-1]:.4f}")
    return ComparisonReport(list(seeds), ArmSummary(full_acc), ArmSummary(sup_acc))
