"""Model, loss, optimizer, training and checkpoint I/O."""
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .infer import predict_audio, predict_tensor, tile_channels, untile
from .model import (
    LOSS_WEIGHTS,
    METRICS,
    MosraNet,
    Normalizer,
    ShapeError,
    flop_count,
    loss,
    loss_terms,
    parameter_count,
    single_channel_config,
)
from .optim import AdamState, adam_step
from .train import PlateauSchedule, SceneFeatures, TrainingError, TrainResult, load_features, sample_channels, train

__all__ = [
    "LOSS_WEIGHTS",
    "METRICS",
    "AdamState",
    "Checkpoint",
    "CheckpointError",
    "MosraNet",
    "Normalizer",
    "PlateauSchedule",
    "SceneFeatures",
    "ShapeError",
    "TrainResult",
    "TrainingError",
    "adam_step",
    "flop_count",
    "load_checkpoint",
    "load_features",
    "loss",
    "loss_terms",
    "parameter_count",
    "predict_audio",
    "predict_tensor",
    "sample_channels",
    "save_checkpoint",
    "single_channel_config",
    "tile_channels",
    "train",
    "untile",
]
