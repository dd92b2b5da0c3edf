"""Long-tailed semi-supervised learning with controllable pseudo-labels.

A labeled pool grows with reliably filtered, majority-voted pseudo-labels;
a logit-adjusted classifier is fit to the pool's evolving class distribution;
minority classes are reinforced with synthesized representations. Baselines,
metrics, and a config-driven experiment harness come along.
"""

from .augment import ClassStats, minority_classes, synthesize, update_class_stats
from .cycle import (
    LabeledPool,
    PseudoRegistry,
    ViewPrediction,
    class_distribution,
    predict_views,
    reliability_mask,
    update_pool,
)
from .datasets import (
    AugmentationPolicy,
    DatasetSpec,
    SplitBundle,
    generate_splits,
    load_csv,
    long_tailed_counts,
    shape_counts,
    strong_view,
    weak_view,
)
from .losses import ClassPrior, LossSpec, aux_loss, la_loss, overall_loss
from .metrics import (
    PseudoLabelAudit,
    RiskLedger,
    accuracy,
    kl_divergence,
    macro_f1,
    per_class_accuracy,
    pseudo_audit,
    welch_t_test,
)
from .network import (
    ModelConfig,
    ModelState,
    OptimizerConfig,
    cosine_lr,
    encode,
    head_logits,
    init,
    sgd_step,
)
from .training import RunHistory, TrainConfig, predict, run_baseline, train

__version__ = "0.1.0"

__all__ = [
    "AugmentationPolicy",
    "ClassPrior",
    "ClassStats",
    "DatasetSpec",
    "LabeledPool",
    "LossSpec",
    "ModelConfig",
    "ModelState",
    "OptimizerConfig",
    "PseudoLabelAudit",
    "PseudoRegistry",
    "RiskLedger",
    "RunHistory",
    "SplitBundle",
    "TrainConfig",
    "ViewPrediction",
    "accuracy",
    "aux_loss",
    "class_distribution",
    "cosine_lr",
    "encode",
    "generate_splits",
    "head_logits",
    "init",
    "kl_divergence",
    "la_loss",
    "load_csv",
    "long_tailed_counts",
    "macro_f1",
    "minority_classes",
    "overall_loss",
    "per_class_accuracy",
    "predict",
    "predict_views",
    "pseudo_audit",
    "reliability_mask",
    "run_baseline",
    "sgd_step",
    "shape_counts",
    "strong_view",
    "synthesize",
    "train",
    "update_class_stats",
    "update_pool",
    "weak_view",
    "welch_t_test",
]
