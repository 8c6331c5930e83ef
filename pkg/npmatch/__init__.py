from npmatch.commands import AbstractCommand, COMMANDS
from npmatch.config import PRESETS, RunConfigFile, TrainConfig, load_run_config
from npmatch.datagen import Dataset, LabeledSet, augment, export_csv, gaussian_blobs, split, two_moons
from npmatch.errors import NpMatchError
from npmatch.gaussian_core import (
    Gaussian,
    SkewParameter,
    geometric_mean,
    js_geometric,
    js_geometric_dual,
    kl,
    log_pdf,
    mc_divergence,
    sample,
)
from npmatch.nn_core import EmaShadow, Mlp, OptimizerState, cosine_lr, ema_update, sgd_step
from npmatch.np_model import (
    MemoryBank,
    NpModel,
    NpPrediction,
    bank_init,
    bank_push,
    encode,
    posterior_from_context,
    predict,
    uncertainty_entropy,
    uncertainty_variance,
)
from npmatch.ssl_pipeline import (
    PseudoLabelBatch,
    compare_runs,
    elbo_loss,
    evaluate,
    select_pseudo_labels,
    skew_from_uncertainty,
    total_loss,
    train,
)

__all__ = [
    "AbstractCommand",
    "COMMANDS",
    "PRESETS",
    "RunConfigFile",
    "TrainConfig",
    "load_run_config",
    "Dataset",
    "LabeledSet",
    "augment",
    "export_csv",
    "gaussian_blobs",
    "split",
    "two_moons",
    "NpMatchError",
    "Gaussian",
    "SkewParameter",
    "geometric_mean",
    "js_geometric",
    "js_geometric_dual",
    "kl",
    "log_pdf",
    "mc_divergence",
    "sample",
    "EmaShadow",
    "Mlp",
    "OptimizerState",
    "cosine_lr",
    "ema_update",
    "sgd_step",
    "MemoryBank",
    "NpModel",
    "NpPrediction",
    "bank_init",
    "bank_push",
    "encode",
    "posterior_from_context",
    "predict",
    "uncertainty_entropy",
    "uncertainty_variance",
    "PseudoLabelBatch",
    "compare_runs",
    "elbo_loss",
    "evaluate",
    "select_pseudo_labels",
    "skew_from_uncertainty",
    "total_loss",
    "train",
]
