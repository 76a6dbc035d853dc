"""Hand pressure estimation from sEMG and hand pose."""

from ._pimforce import (
    Error,
    InvalidInput,
    ShapeError,
    canonicalize,
    evaluate,
    forward_kinematics,
    infer,
    is_canonical,
    metrics,
    parameter_counts,
    predict,
    preprocess,
    stft,
    synth,
    train,
    voxelize,
)

__version__ = "1.0.0"

__all__ = [
    "Error",
    "InvalidInput",
    "ShapeError",
    "canonicalize",
    "evaluate",
    "forward_kinematics",
    "infer",
    "is_canonical",
    "metrics",
    "parameter_counts",
    "predict",
    "preprocess",
    "stft",
    "synth",
    "train",
    "voxelize",
]
