"""Autoregressive model abstraction, toy models and the bridge client."""

from .base import (
    AutoregressiveModel,
    AxisKind,
    AxisPoint,
    ModelError,
    TokenSequence,
    softmax_temperature,
)
from .remote import ModelEndpoint, RemoteModel
from .tabular import TabularModel

__all__ = [
    "AutoregressiveModel",
    "AxisKind",
    "AxisPoint",
    "ModelError",
    "TokenSequence",
    "softmax_temperature",
    "ModelEndpoint",
    "RemoteModel",
    "TabularModel",
]
