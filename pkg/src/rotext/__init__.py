"""Rotated scene-text detection core: box geometry, target generation,
losses, rotated RoI Align, inference post-processing and evaluation."""

__version__ = "0.1.0"

from .evaluation import EvalReport, evaluate
from .geometry import (
    RBoxCenter,
    RBoxDist,
    angle_diff,
    box_vertices,
    center_to_dist,
    dist_to_center,
    normalize_angle,
    rotated_iou,
)
from .postprocess import (
    Detection,
    FilterConfig,
    LevelMaps,
    decode_appn,
    greedy_decode,
    infer_pipeline,
    joint_filter,
    rec_score,
    refine,
    rotated_nms,
)
from .targets import (
    GroundTruth,
    LevelSpec,
    RegressionTarget,
    assign_level,
    decode_target,
    encode_target,
    frcnn_sample,
    shrink_box,
)

__all__ = [
    "Detection",
    "EvalReport",
    "FilterConfig",
    "GroundTruth",
    "LevelMaps",
    "LevelSpec",
    "RBoxCenter",
    "RBoxDist",
    "RegressionTarget",
    "angle_diff",
    "assign_level",
    "box_vertices",
    "center_to_dist",
    "decode_appn",
    "decode_target",
    "dist_to_center",
    "encode_target",
    "evaluate",
    "frcnn_sample",
    "greedy_decode",
    "infer_pipeline",
    "joint_filter",
    "normalize_angle",
    "rec_score",
    "refine",
    "rotated_iou",
    "rotated_nms",
    "shrink_box",
]
