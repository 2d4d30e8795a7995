"""Input validation helpers shared by the estimator wrappers."""
from __future__ import annotations

import numbers

import numpy as np

from .postprocess import LevelMaps
from .targets import GroundTruth


def check_unit(value, name):
    if not isinstance(value, numbers.Real) or not 0 <= value <= 1:
        raise ValueError(f"{name} must be a number in [0, 1], got {value!r}")
    return float(value)


def check_image_size(size):
    try:
        h, w = (int(s) for s in size)
    except (TypeError, ValueError):
        raise ValueError(f"image_size must be (height, width), got {size!r}") from None
    if h < 1 or w < 1:
        raise ValueError(f"image_size must be positive, got {size!r}")
    return h, w


def check_gt_list(gts):
    gts = list(gts)
    for g in gts:
        if not isinstance(g, GroundTruth):
            raise TypeError(f"expected GroundTruth, got {type(g).__name__}")
    return gts


def check_level_maps(levels):
    levels = list(levels)
    for lv in levels:
        if not isinstance(lv, LevelMaps):
            raise TypeError(f"expected LevelMaps, got {type(lv).__name__}")
        if not (np.all(np.isfinite(lv.regression)) and not np.any(np.isnan(lv.objectness))):
            raise ValueError(f"non-finite values in level with stride {lv.stride}")
    return levels


def check_probseq(seq, atol=1e-6):
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ValueError(f"probability sequence must be (T, C) with T >= 1, got {seq.shape}")
    if np.any(seq < 0) or np.any(seq > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if not np.allclose(seq.sum(axis=1), 1.0, rtol=0, atol=atol):
        raise ValueError("each probability row must sum to 1")
    return seq
