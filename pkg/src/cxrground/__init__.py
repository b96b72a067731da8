"""Chest X-ray lesion grounding and instruction-answer dataset toolkit."""

from .core import (
    AnatomicalLabel,
    Certainty,
    DetectionBox,
    GroundedLesion,
    ImageGray,
    InstructionAnswerPair,
    LesionType,
    Polarity,
    Presence,
    RasterMask,
    Split,
    StructuredFinding,
    Study,
    TemplateType,
    ThresholdSet,
)

__version__ = "0.1.0"

__all__ = [
    "AnatomicalLabel",
    "Certainty",
    "DetectionBox",
    "GroundedLesion",
    "ImageGray",
    "InstructionAnswerPair",
    "LesionType",
    "Polarity",
    "Presence",
    "RasterMask",
    "Split",
    "StructuredFinding",
    "Study",
    "TemplateType",
    "ThresholdSet",
    "__version__",
]
