"""Small numpy neural-network core shared by the gesture and movement classifiers."""

from .layers import (
    LSTM,
    Conv1d,
    Dense,
    ShapeError,
    forward_conv1d,
    forward_dense,
    forward_lstm,
    softmax,
    softmax_xent,
)
from .models import LstmFcn, MLP, build_model, gesture_architecture, movement_architecture
from .training import (
    BundleError,
    ModelBundle,
    TrainingDivergedError,
    UnsupportedVersionError,
    load,
    loads,
    save,
    train,
)

__all__ = [
    "LSTM",
    "Conv1d",
    "Dense",
    "ShapeError",
    "forward_conv1d",
    "forward_dense",
    "forward_lstm",
    "softmax",
    "softmax_xent",
    "LstmFcn",
    "MLP",
    "build_model",
    "gesture_architecture",
    "movement_architecture",
    "BundleError",
    "ModelBundle",
    "TrainingDivergedError",
    "UnsupportedVersionError",
    "load",
    "loads",
    "save",
    "train",
]
