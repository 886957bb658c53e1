"""Compress images into coordinate networks, stream them layer by layer,
and measure how they degrade when parameters are lost."""

from .models import CoordGrid, ModelSpec, build_model, render
from .nn import ParamSet
from .trainer import StageSchedule, TrainConfig, fit, fit_spinr

__version__ = "0.1.0"

__all__ = [
    "CoordGrid",
    "ModelSpec",
    "ParamSet",
    "StageSchedule",
    "TrainConfig",
    "build_model",
    "fit",
    "fit_spinr",
    "render",
]
