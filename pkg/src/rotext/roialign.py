"""Rotated RoI Align and the legacy max-pooling variant.

Feature maps are ``(C, H, W)`` arrays. Pixel ``(i, j)`` holds the value at
feature coordinate ``(x=j, y=i)``; image coordinates are multiplied by
``spatial_scale`` to reach feature coordinates. Interpolation treats the map
as zero-padded outside its extent.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import RBoxCenter


@dataclass
class FeatureMap:
    data: np.ndarray
    spatial_scale: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim == 2:
            self.data = self.data[None]
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"feature map must be (C, H, W) with C, H, W >= 1, got {self.data.shape}")
        if not self.spatial_scale > 0:
            raise ValueError("spatial_scale must be positive")


def bilinear(data: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``(C, H, W)`` at points ``(x, y)``; returns ``(C,) + x.shape``."""
    _, H, W = data.shape
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0

    def corner(dy, dx):
        yi, xi = y0 + dy, x0 + dx
        ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        vals = data[:, np.clip(yi, 0, H - 1), np.clip(xi, 0, W - 1)].astype(np.float64)
        return np.where(ok, vals, 0.0)

    # lerp form keeps constant regions exact
    v00, v01, v10, v11 = corner(0, 0), corner(0, 1), corner(1, 0), corner(1, 1)
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return top + fy * (bot - top)


def sample_grid(box: RBoxCenter, out_h: int, out_w: int, samples: int, spatial_scale: float = 1.0):
    """Feature-space sample coordinates of shape ``(out_h, out_w, s, s)``.

    Bin ``(i, j)`` spans rows along the box height axis and columns along its
    width axis; sample ``(a, b)`` sits at fractional offset ``((a+.5)/s, (b+.5)/s)``
    inside the bin.
    """
    if out_h < 1 or out_w < 1 or samples < 1:
        raise ValueError("output size and samples per bin must be >= 1")
    frac = (np.arange(samples) + 0.5) / samples
    v = (np.arange(out_h)[:, None] + frac[None, :]) / out_h - 0.5  # (out_h, s)
    u = (np.arange(out_w)[:, None] + frac[None, :]) / out_w - 0.5  # (out_w, s)
    v = v[:, None, :, None] * box.h
    u = u[None, :, None, :] * box.w
    c, s = math.cos(box.theta), math.sin(box.theta)
    x = (box.cx + c * u - s * v) * spatial_scale
    y = (box.cy + s * u + c * v) * spatial_scale
    return x, y


def _samples(fmap: FeatureMap, box: RBoxCenter, out_h, out_w, samples):
    if not (box.w > 0 and box.h > 0):
        raise ValueError(f"degenerate box: {box}")
    x, y = sample_grid(box, out_h, out_w, samples, fmap.spatial_scale)
    return bilinear(fmap.data, x, y)  # (C, out_h, out_w, s, s)


def rroi_align(
    fmap: FeatureMap, box: RBoxCenter, out_h: int, out_w: int, samples_per_bin_axis: int = 2
) -> np.ndarray:
    """Mean of bilinear samples per rotated bin; ``(C, out_h, out_w)``."""
    vals = _samples(fmap, box, out_h, out_w, samples_per_bin_axis)
    return vals.mean(axis=(-2, -1))


def rroi_pool_max(
    fmap: FeatureMap, box: RBoxCenter, out_h: int, out_w: int, samples_per_bin_axis: int = 2
) -> np.ndarray:
    """Max of bilinear samples per rotated bin; ``(C, out_h, out_w)``."""
    vals = _samples(fmap, box, out_h, out_w, samples_per_bin_axis)
    return vals.max(axis=(-2, -1))


def rroi_align_batch(
    fmap: FeatureMap,
    boxes: Sequence[RBoxCenter],
    out_h: int,
    out_w: int,
    samples_per_bin_axis: int = 2,
    n_jobs: int = 1,
) -> np.ndarray:
    """Align every box; ``(N, C, out_h, out_w)``. Output order follows ``boxes``."""
    C = fmap.data.shape[0]
    if not boxes:
        return np.zeros((0, C, out_h, out_w))

    def one(box):
        return rroi_align(fmap, box, out_h, out_w, samples_per_bin_axis)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, boxes))
    else:
        results = [one(b) for b in boxes]
    return np.stack(results)
