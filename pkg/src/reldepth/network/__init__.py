from .blocks import ResidualBlock
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import ChannelNorm, Conv2d, MaxPool2, ReLU, Tensor
from .model import (
    CLASSIFICATION,
    RANKING,
    REGRESSION,
    DepthNet,
    NetConfig,
    predict_depth,
    predict_relative,
    predict_scores,
    stack_images,
)
from .training import (
    AugmentConfig,
    TrainSchedule,
    finetune_classification,
    finetune_regression,
    l2_regression_loss,
    map_pairs_to_grid,
    pretrain_ranking,
)

__all__ = [
    "AugmentConfig",
    "CLASSIFICATION",
    "ChannelNorm",
    "CheckpointError",
    "Conv2d",
    "DepthNet",
    "MaxPool2",
    "NetConfig",
    "RANKING",
    "REGRESSION",
    "ReLU",
    "ResidualBlock",
    "Tensor",
    "TrainSchedule",
    "finetune_classification",
    "finetune_regression",
    "l2_regression_loss",
    "load_checkpoint",
    "map_pairs_to_grid",
    "predict_depth",
    "predict_relative",
    "predict_scores",
    "pretrain_ranking",
    "save_checkpoint",
    "stack_images",
]
