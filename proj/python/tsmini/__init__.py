"""Trajectory similarity learning with a compact transformer encoder."""

from ._tsmini import (
    Encoder,
    FormatError,
    NumericError,
    UsageError,
    compute_gt,
    evaluate,
    evaluate_embeddings,
    evaluate_oracle,
    ground_truth,
    hr_at_k,
    knn_loss,
    measure,
    preprocess,
    r10_at_50,
    read_trajectories,
    synth,
    train,
    weighted_mse,
)

__all__ = [
    "Encoder",
    "FormatError",
    "NumericError",
    "UsageError",
    "compute_gt",
    "evaluate",
    "evaluate_embeddings",
    "evaluate_oracle",
    "ground_truth",
    "hr_at_k",
    "knn_loss",
    "measure",
    "preprocess",
    "r10_at_50",
    "read_trajectories",
    "synth",
    "train",
    "weighted_mse",
]
