"""Character-level recurrent language model, built from scratch on numpy."""

from .checkpoint import load_checkpoint, save_checkpoint
from .network import (
    backward,
    backward_batch,
    batch_loss,
    forward,
    forward_batch,
    loss,
    predict_probs,
    softmax,
)
from .params import (
    DEFAULT_PRESET,
    PRESETS,
    ModelParams,
    ModelSpec,
    init_params,
    parameter_count,
    preset_jump,
    preset_spec,
    zeros_like_params,
)
from .training import (
    AdamState,
    Checkpoint,
    EvalMetrics,
    TrainResult,
    adam_step,
    best_checkpoint,
    evaluate,
    train,
)

__all__ = [
    "AdamState",
    "Checkpoint",
    "DEFAULT_PRESET",
    "EvalMetrics",
    "ModelParams",
    "ModelSpec",
    "PRESETS",
    "TrainResult",
    "adam_step",
    "backward",
    "backward_batch",
    "batch_loss",
    "best_checkpoint",
    "evaluate",
    "forward",
    "forward_batch",
    "init_params",
    "load_checkpoint",
    "loss",
    "parameter_count",
    "predict_probs",
    "preset_jump",
    "preset_spec",
    "save_checkpoint",
    "softmax",
    "train",
    "zeros_like_params",
]
