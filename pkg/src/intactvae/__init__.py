"""Intact-VAE: identifiable VAE estimation of treatment effects under
unobserved confounding, with a numpy training engine, synthetic and
IHDP-style benchmarks, and a seeded experiment harness."""

from .dataset import CausalDataset
from .estimate import (
    EvalReport,
    affine_recovery_fit,
    ate_error,
    naive_regression_baseline,
    pehe,
    predict_outcomes_post,
    predict_outcomes_pre,
)
from .model import ElboTerms, IntactVae, VaeConfig, apply_affine_equivalence
from .synth import SynthSpec, build_generating_model, generate, true_cate
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CausalDataset", "ElboTerms", "EvalReport", "IntactVae", "SynthSpec", "TrainConfig", "VaeConfig",
    "affine_recovery_fit", "apply_affine_equivalence", "ate_error", "build_generating_model", "generate",
    "naive_regression_baseline", "pehe", "predict_outcomes_post", "predict_outcomes_pre", "train", "true_cate",
]
