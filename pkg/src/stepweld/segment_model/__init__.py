from .losses import (
    LossError,
    LossValue,
    loss_dist_match,
    loss_step_ce,
    loss_step_nce,
)
from .model import (
    ForwardPass,
    ModelError,
    SegmentModel,
    SegmentModelConfig,
    load_model,
    log_softmax,
    save_model,
)
from .train import (
    AdamW,
    OptimizerConfig,
    SGD,
    Targets,
    TrainConfig,
    TrainResult,
    make_optimizer,
    targets_from_distributions,
    targets_from_result,
    train,
)

__all__ = [
    "LossError",
    "LossValue",
    "loss_dist_match",
    "loss_step_ce",
    "loss_step_nce",
    "ForwardPass",
    "ModelError",
    "SegmentModel",
    "SegmentModelConfig",
    "load_model",
    "log_softmax",
    "save_model",
    "AdamW",
    "OptimizerConfig",
    "SGD",
    "Targets",
    "TrainConfig",
    "TrainResult",
    "make_optimizer",
    "targets_from_distributions",
    "targets_from_result",
    "train",
]
