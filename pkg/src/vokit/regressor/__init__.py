"""Transformer regressor from keypoint matches to relative pose."""
from .model import (
    Forward,
    KeypointBatch,
    Losses,
    RegressorConfig,
    RegressorParams,
    backward,
    forward,
    init_params,
    loss_and_grad,
    param_count,
    param_shapes,
    pose_loss,
    positional_encoding,
)
from .train import (
    AdamState,
    Normalizer,
    StepRecord,
    TrainConfig,
    TrainResult,
    adamw_update,
    batch_indices,
    build_batch,
    canonical_order,
    evaluate,
    predict_relative_pose,
    train,
)
from .checkpoint import Checkpoint, load_checkpoint, read_log, save_checkpoint, write_log
