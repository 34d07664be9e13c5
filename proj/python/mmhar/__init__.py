"""Multimodal IMU activity recognition: transforms, fusion and metrics."""

from ._mmhar import (
    Error,
    axis_angle_quat,
    config_hash,
    config_json,
    confusion,
    decide,
    dft2d,
    expansion_plan,
    f1_score,
    freq_image,
    fuse,
    informativity,
    load_dataset,
    load_feature_set,
    metrics,
    mirror_vec,
    och_image,
    qconj,
    qmul,
    rotate_vec,
    synth_dataset,
    transition_quat,
)

__all__ = [
    "Error",
    "axis_angle_quat",
    "config_hash",
    "config_json",
    "confusion",
    "decide",
    "dft2d",
    "expansion_plan",
    "f1_score",
    "freq_image",
    "fuse",
    "informativity",
    "load_dataset",
    "load_feature_set",
    "metrics",
    "mirror_vec",
    "och_image",
    "qconj",
    "qmul",
    "rotate_vec",
    "synth_dataset",
    "transition_quat",
]
