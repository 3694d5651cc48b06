"""Respiration rate estimation from exhalation evidence in synchronized audio/frame streams."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AudioTrack,
    BreathState,
    LabeledFrame,
    RespirationEstimate,
    seeded_rng,
)
from .tracker import predict_respiration_rate  # noqa: E402

__all__ = [
    "AudioTrack",
    "BreathState",
    "LabeledFrame",
    "RespirationEstimate",
    "predict_respiration_rate",
    "seeded_rng",
]
