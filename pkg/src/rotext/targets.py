"""Ground-truth generation for the anchor-free proposal head and the
second-stage sampler with its regression-target encoding."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .geometry import (
    RBoxCenter,
    angle_diff,
    box_frame_offsets,
    iou_matrix,
    normalize_angle,
)

LEVEL_STRIDES = {"P2": 4, "P3": 8, "P4": 16, "P5": 32}
LEVELS = tuple(LEVEL_STRIDES)
AREA_BOUNDS = (64.0**2, 128.0**2, 256.0**2)

DEFAULT_SHRINK = 0.7
POS_IOU = 0.6
POS_ANGLE = math.pi / 6
BATCH_SIZE = 256
MAX_POSITIVES = BATCH_SIZE // 4


@dataclass(frozen=True)
class GroundTruth:
    box: RBoxCenter
    transcript: str = ""


@dataclass(frozen=True)
class LevelSpec:
    level_id: str
    stride: int
    height: int
    width: int

    def __post_init__(self):
        if LEVEL_STRIDES.get(self.level_id) != self.stride:
            raise ValueError(f"stride {self.stride} does not match level {self.level_id}")
        if self.height < 1 or self.width < 1:
            raise ValueError("level grid must be at least 1x1")

    def cell_centers(self):
        """Image-space centers ``(gx, gy)`` of every cell, each of shape (H, W)."""
        xs = (np.arange(self.width) + 0.5) * self.stride
        ys = (np.arange(self.height) + 0.5) * self.stride
        return np.meshgrid(xs, ys)


def level_specs(image_height: int, image_width: int) -> List[LevelSpec]:
    return [
        LevelSpec(lvl, s, max(1, math.ceil(image_height / s)), max(1, math.ceil(image_width / s)))
        for lvl, s in LEVEL_STRIDES.items()
    ]


@dataclass
class LevelTargets:
    """Per-level ground truth: binary ``cls`` (H, W) and ``reg`` (5, H, W)."""

    spec: LevelSpec
    cls: np.ndarray
    reg: np.ndarray


@dataclass(frozen=True)
class RegressionTarget:
    vx: float
    vy: float
    vw: float
    vh: float
    vtheta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vw, self.vh, self.vtheta])

    @classmethod
    def from_array(cls, a) -> "RegressionTarget":
        a = np.asarray(a, dtype=np.float64).reshape(5)
        return cls(*map(float, a))

    @classmethod
    def zero(cls) -> "RegressionTarget":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


def assign_level(box: RBoxCenter) -> str:
    area = box.w * box.h
    for lvl, bound in zip(LEVELS, AREA_BOUNDS):
        if area <= bound:
            return lvl
    return LEVELS[-1]


def shrink_box(box: RBoxCenter, factor: float = DEFAULT_SHRINK) -> RBoxCenter:
    if not 0 < factor <= 1:
        raise ValueError(f"shrink factor must be in (0, 1], got {factor}")
    return RBoxCenter(box.cx, box.cy, box.w * factor, box.h * factor, box.theta)


def _positive_mask(box: RBoxCenter, gx: np.ndarray, gy: np.ndarray, shrink: float) -> np.ndarray:
    u, v = box_frame_offsets(box, gx, gy)
    return (np.abs(u) <= box.w * shrink / 2) & (np.abs(v) <= box.h * shrink / 2)


def _overlap_order(gts: Sequence[GroundTruth]) -> List[GroundTruth]:
    # painted largest first so the smallest box owns contested cells
    return sorted(gts, key=lambda g: (-g.box.area, g.box.as_tuple()))


def generate_level_targets(
    gts: Sequence[GroundTruth], level: LevelSpec, shrink: float = DEFAULT_SHRINK
) -> LevelTargets:
    """Classification and regression maps of one pyramid level."""
    if not 0 < shrink <= 1:
        raise ValueError(f"shrink factor must be in (0, 1], got {shrink}")
    cls = np.zeros((level.height, level.width), dtype=np.float64)
    reg = np.zeros((5, level.height, level.width), dtype=np.float64)
    gx, gy = level.cell_centers()
    for gt in _overlap_order([g for g in gts if assign_level(g.box) == level.level_id]):
        box = gt.box
        mask = _positive_mask(box, gx, gy, shrink)
        if not mask.any():
            continue
        u, v = box_frame_offsets(box, gx[mask], gy[mask])
        hw, hh = box.w / 2, box.h / 2
        cls[mask] = 1.0
        reg[0][mask] = hw + u
        reg[1][mask] = hh + v
        reg[2][mask] = hw - u
        reg[3][mask] = hh - v
        reg[4][mask] = box.theta
    return LevelTargets(level, cls, reg)


def gen_cls_map(gts: Sequence[GroundTruth], level: LevelSpec, shrink: float = DEFAULT_SHRINK) -> np.ndarray:
    return generate_level_targets(gts, level, shrink).cls


def gen_reg_map(gts: Sequence[GroundTruth], level: LevelSpec, shrink: float = DEFAULT_SHRINK) -> np.ndarray:
    return generate_level_targets(gts, level, shrink).reg


def generate_targets(
    gts: Sequence[GroundTruth], image_height: int, image_width: int, shrink: float = DEFAULT_SHRINK
) -> List[LevelTargets]:
    return [generate_level_targets(gts, spec, shrink) for spec in level_specs(image_height, image_width)]


def encode_target(proposal: RBoxCenter, gt: RBoxCenter) -> RegressionTarget:
    return RegressionTarget(
        (gt.cx - proposal.cx) / proposal.w,
        (gt.cy - proposal.cy) / proposal.h,
        math.log(gt.w / proposal.w),
        math.log(gt.h / proposal.h),
        angle_diff(gt.theta, proposal.theta),
    )


def decode_target(proposal: RBoxCenter, v: RegressionTarget) -> RBoxCenter:
    vals = (v.vx, v.vy, v.vw, v.vh, v.vtheta)
    if not all(math.isfinite(x) for x in vals):
        raise ValueError(f"non-finite regression target: {v}")
    try:
        w = proposal.w * math.exp(v.vw)
        h = proposal.h * math.exp(v.vh)
    except OverflowError as exc:
        raise OverflowError(f"regression target overflows box size: {v}") from exc
    if math.isinf(w) or math.isinf(h):
        raise OverflowError(f"regression target overflows box size: {v}")
    return RBoxCenter(
        proposal.cx + v.vx * proposal.w,
        proposal.cy + v.vy * proposal.h,
        w,
        h,
        normalize_angle(proposal.theta + v.vtheta),
    )


@dataclass(frozen=True)
class SampleEntry:
    proposal_index: int
    proposal: RBoxCenter
    positive: bool
    gt_index: Optional[int] = None
    target: Optional[RegressionTarget] = None
    transcript: Optional[str] = None


@dataclass
class SampleBatch:
    entries: List[SampleEntry] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def n_plus(self) -> int:
        return sum(e.positive for e in self.entries)


def is_positive(iou: float, dtheta: float) -> bool:
    return iou > POS_IOU and abs(dtheta) < POS_ANGLE


def frcnn_sample(
    proposals: Sequence[RBoxCenter],
    gts: Sequence[GroundTruth],
    rng_seed=None,
    batch_size: int = BATCH_SIZE,
    max_positives: int = MAX_POSITIVES,
) -> SampleBatch:
    """Label proposals against ground truth and draw a balanced batch.

    Positives need IoU > 0.6 with their best-matching GT *and* an angle
    difference below pi/6. Positives come first in the batch, then negatives,
    each group in proposal order.
    """
    if not proposals:
        return SampleBatch()
    rng = np.random.default_rng(rng_seed)
    n_prop = len(proposals)
    matched = np.full(n_prop, -1)
    pos = np.zeros(n_prop, dtype=bool)
    if gts:
        ious = iou_matrix(proposals, [g.box for g in gts])
        matched = ious.argmax(axis=1)
        for i in range(n_prop):
            j = matched[i]
            dtheta = angle_diff(gts[j].box.theta, proposals[i].theta)
            pos[i] = is_positive(ious[i, j], dtheta)

    pos_idx = np.flatnonzero(pos)
    neg_idx = np.flatnonzero(~pos)
    n_pos = min(len(pos_idx), max_positives, batch_size)
    if len(pos_idx) > n_pos:
        pos_idx = np.sort(rng.choice(pos_idx, size=n_pos, replace=False))
    n_neg = min(len(neg_idx), batch_size - n_pos)
    if len(neg_idx) > n_neg:
        neg_idx = np.sort(rng.choice(neg_idx, size=n_neg, replace=False))

    entries = []
    for i in pos_idx:
        j = int(matched[i])
        entries.append(
            SampleEntry(
                int(i), proposals[i], True, j, encode_target(proposals[i], gts[j].box), gts[j].transcript
            )
        )
    for i in neg_idx:
        entries.append(SampleEntry(int(i), proposals[i], False))
    return SampleBatch(entries)
