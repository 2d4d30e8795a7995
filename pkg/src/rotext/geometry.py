"""Rotated-box representations, conversions and exact rotated IoU.

Angles are radians, image coordinates (x right, y down). A rotation by
``theta`` maps the box-frame vector ``(u, v)`` to
``(u cos - v sin, u sin + v cos)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

PI = math.pi
ANGLE_MIN = -PI / 4
ANGLE_MAX = 3 * PI / 4

CLIP_EPS = 1e-9

Point = Tuple[float, float]
QuadBox = Tuple[Point, Point, Point, Point]


def normalize_angle(theta: float) -> float:
    """Wrap ``theta`` by multiples of pi into ``[-pi/4, 3pi/4)``."""
    t = theta - PI * math.floor((theta - ANGLE_MIN) / PI)
    if t >= ANGLE_MAX:
        t -= PI
    elif t < ANGLE_MIN:
        t += PI
    return t


def normalize_angle_array(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    t = theta - PI * np.floor((theta - ANGLE_MIN) / PI)
    t = np.where(t >= ANGLE_MAX, t - PI, t)
    return np.where(t < ANGLE_MIN, t + PI, t)


def angle_diff(a: float, b: float) -> float:
    """Return ``a - b`` wrapped by multiples of pi into ``[-pi/2, pi/2)``."""
    d = a - b
    d -= PI * math.floor((d + PI / 2) / PI)
    if d >= PI / 2:
        d -= PI
    elif d < -PI / 2:
        d += PI
    return d


@dataclass(frozen=True)
class RBoxCenter:
    """Rotated box as center, size and angle.

    ``theta`` is normalized into ``[-pi/4, 3pi/4)`` on construction.
    """

    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box parameters: {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box size must be positive, got w={self.w}, h={self.h}")
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h, self.theta)


@dataclass(frozen=True)
class RBoxDist:
    """Box given as distances from a grid point to its four edges, plus angle."""

    l: float
    t: float
    r: float
    b: float
    theta: float = 0.0

    def __post_init__(self):
        if min(self.l, self.t, self.r, self.b) < 0:
            raise ValueError(f"edge distances must be non-negative: {self}")

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return (self.l, self.t, self.r, self.b, self.theta)


def gamma_matrix(theta: float, gx: float, gy: float) -> np.ndarray:
    """The 5x6 map taking ``(l, t, r, b, theta, 1)`` to ``(x, y, w, h, theta)``."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array(
        [
            [-c / 2, s / 2, c / 2, -s / 2, 0.0, gx],
            [-s / 2, -c / 2, s / 2, c / 2, 0.0, gy],
            [1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        ]
    )


def dist_to_center(d: RBoxDist, gx: float, gy: float) -> RBoxCenter:
    if d.l + d.r <= 0 or d.t + d.b <= 0:
        raise ValueError(f"degenerate box: {d}")
    c, s = math.cos(d.theta), math.sin(d.theta)
    du = (d.r - d.l) / 2
    dv = (d.b - d.t) / 2
    return RBoxCenter(
        gx + c * du - s * dv,
        gy + s * du + c * dv,
        d.l + d.r,
        d.t + d.b,
        d.theta,
    )


def dist_to_center_array(ltrbt: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Vectorized ``dist_to_center``: ``(N, 5)`` distances -> ``(N, 5)`` boxes.

    No degeneracy check; callers filter rows with zero extent.
    """
    ltrbt = np.asarray(ltrbt, dtype=np.float64)
    l, t, r, b, th = ltrbt.T
    c, s = np.cos(th), np.sin(th)
    du = (r - l) / 2
    dv = (b - t) / 2
    out = np.empty_like(ltrbt)
    out[:, 0] = gx + c * du - s * dv
    out[:, 1] = gy + s * du + c * dv
    out[:, 2] = l + r
    out[:, 3] = t + b
    out[:, 4] = normalize_angle_array(th)
    return out


def box_frame_offsets(box: RBoxCenter, gx, gy):
    """Grid point(s) expressed in the box frame (rotate by -theta about center)."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx = np.asarray(gx, dtype=np.float64) - box.cx
    dy = np.asarray(gy, dtype=np.float64) - box.cy
    return c * dx + s * dy, -s * dx + c * dy


def center_to_dist(box: RBoxCenter, gx: float, gy: float) -> RBoxDist:
    u, v = box_frame_offsets(box, gx, gy)
    u, v = float(u), float(v)
    hw, hh = box.w / 2, box.h / 2
    if not (abs(u) < hw and abs(v) < hh):
        raise ValueError(f"grid point ({gx}, {gy}) is not strictly inside {box}")
    return RBoxDist(hw + u, hh + v, hw - u, hh - v, box.theta)


def box_vertices(box: RBoxCenter) -> QuadBox:
    """Corners in order (-w/2,-h/2), (w/2,-h/2), (w/2,h/2), (-w/2,h/2) of the box frame.

    Positive signed shoelace area in image coordinates.
    """
    c, s = math.cos(box.theta), math.sin(box.theta)
    hw, hh = box.w / 2, box.h / 2
    out = []
    for u, v in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)):
        out.append((box.cx + c * u - s * v, box.cy + s * u + c * v))
    return tuple(out)


def polygon_area(poly: Sequence[Point]) -> float:
    """Signed shoelace area."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    x0, y0 = poly[-1]
    for x1, y1 in poly:
        acc += x0 * y1 - x1 * y0
        x0, y0 = x1, y1
    return acc / 2


def clip_convex(subject: Sequence[Point], clip: Sequence[Point]) -> list:
    """Sutherland-Hodgman clipping of ``subject`` by a convex, positively oriented ``clip``."""
    output = list(subject)
    cx1, cy1 = clip[-1]
    for cx2, cy2 in clip:
        if not output:
            break
        ex, ey = cx2 - cx1, cy2 - cy1
        inp = output
        output = []
        sx, sy = inp[-1]
        s_side = ex * (sy - cy1) - ey * (sx - cx1)
        for px, py in inp:
            p_side = ex * (py - cy1) - ey * (px - cx1)
            if p_side >= -CLIP_EPS:
                if s_side < -CLIP_EPS:
                    t = s_side / (s_side - p_side)
                    output.append((sx + t * (px - sx), sy + t * (py - sy)))
                output.append((px, py))
            elif s_side >= -CLIP_EPS:
                t = s_side / (s_side - p_side)
                output.append((sx + t * (px - sx), sy + t * (py - sy)))
            sx, sy, s_side = px, py, p_side
        cx1, cy1 = cx2, cy2
    return output


def rotated_iou(a: RBoxCenter, b: RBoxCenter) -> float:
    """Exact IoU of two rotated rectangles."""
    # quick reject on circumscribed circles
    dx, dy = a.cx - b.cx, a.cy - b.cy
    ra = math.hypot(a.w, a.h) / 2
    rb = math.hypot(b.w, b.h) / 2
    if dx * dx + dy * dy >= (ra + rb) ** 2:
        return 0.0
    area_a, area_b = a.w * a.h, b.w * b.h
    inter = polygon_area(clip_convex(box_vertices(a), box_vertices(b)))
    if inter <= 0.0:
        return 0.0
    inter = min(inter, area_a, area_b)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_matrix(boxes_a: Sequence[RBoxCenter], boxes_b: Sequence[RBoxCenter]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = rotated_iou(a, b)
    return out


def min_area_rect(quad: Sequence[Point]) -> RBoxCenter:
    """Minimum-area rectangle enclosing a quadrilateral.

    Among the optimal rectangles, the one whose width axis is closest to the
    direction of the first edge (``p1 -> p2``, the reading direction in ICDAR
    annotations) is returned.
    """
    pts = np.asarray(quad, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < 3:
        raise ValueError("need at least 3 points")
    hull = _convex_hull(pts)
    if len(hull) < 3:
        raise ValueError(f"degenerate quadrilateral: {pts.tolist()}")
    first = pts[1] - pts[0]
    ref = math.atan2(first[1], first[0])

    best = None
    for i in range(len(hull)):
        e = hull[(i + 1) % len(hull)] - hull[i]
        ang = math.atan2(e[1], e[0])
        c, s = math.cos(ang), math.sin(ang)
        u = hull[:, 0] * c + hull[:, 1] * s
        v = -hull[:, 0] * s + hull[:, 1] * c
        area = (u.max() - u.min()) * (v.max() - v.min())
        if best is None or area < best[0] * (1 - 1e-12):
            best = (area, ang, u.min(), u.max(), v.min(), v.max())
    _, ang, u0, u1, v0, v1 = best
    uc, vc = (u0 + u1) / 2, (v0 + v1) / 2
    c, s = math.cos(ang), math.sin(ang)
    cx, cy = uc * c - vc * s, uc * s + vc * c
    w, h = u1 - u0, v1 - v0
    # pick the axis (of 4 candidates) closest to the first edge direction
    candidates = []
    for k in range(4):
        a_k = ang + k * PI / 2
        diff = abs(math.remainder(ref - a_k, 2 * PI))
        candidates.append((diff, k))
    _, k = min(candidates)
    if k % 2 == 1:
        w, h = h, w
    return RBoxCenter(cx, cy, w, h, ang + k * PI / 2)


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Monotone chain hull, counterclockwise in (x, y) order."""
    p = sorted(set(map(tuple, pts.tolist())))
    if len(p) <= 2:
        return np.asarray(p)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for q in p:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    for q in reversed(p):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    return np.asarray(lower[:-1] + upper[:-1])
