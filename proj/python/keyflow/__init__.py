"""Keyframe-conditioned sign motion synthesis."""

from ._core import (
    NUM_JOINTS,
    POSE_DIM,
    FlowModel,
    KeyflowError,
    decode_sprk,
    dtw_jpe,
    encode_sprk,
    load_sprk,
    matrix_to_rot6d,
    repair_bio,
    rot6d_to_matrix,
    save_sprk,
    segments,
    select_keyframes,
    slerp_inbetween,
    slerp_rot6d,
    synth_items,
)

__all__ = [
    "NUM_JOINTS",
    "POSE_DIM",
    "FlowModel",
    "KeyflowError",
    "decode_sprk",
    "dtw_jpe",
    "encode_sprk",
    "load_sprk",
    "matrix_to_rot6d",
    "repair_bio",
    "rot6d_to_matrix",
    "save_sprk",
    "segments",
    "select_keyframes",
    "slerp_inbetween",
    "slerp_rot6d",
    "synth_items",
]
