"""Waltz figure recognition from a single wrist-worn IMU."""

from .core import (
    AXES,
    LABELS,
    SHORT_NAMES,
    DanceSequence,
    Dataset,
    FigureLabel,
    FigureSample,
    ProbVector,
    argmax_label,
    label_from_short_name,
)
from .correction import CorrectionResult, correct_sequence, correct_stream
from .transitions import TransitionMatrix, trained_matrix, unbiased_matrix

__version__ = "0.1.0"

__all__ = [
    "AXES",
    "LABELS",
    "SHORT_NAMES",
    "CorrectionResult",
    "DanceSequence",
    "Dataset",
    "FigureLabel",
    "FigureSample",
    "ProbVector",
    "TransitionMatrix",
    "argmax_label",
    "correct_sequence",
    "correct_stream",
    "label_from_short_name",
    "trained_matrix",
    "unbiased_matrix",
]
