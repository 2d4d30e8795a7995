"""Inference: proposal decoding, rotated NMS, second-stage refinement,
recognition scoring and joint score filtering."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .geometry import ANGLE_MIN, PI, RBoxCenter, dist_to_center_array, rotated_iou
from .targets import RegressionTarget, decode_target


@dataclass
class LevelMaps:
    """Raw head outputs of one pyramid level: objectness ``(H, W)`` and regression ``(5, H, W)`` logits."""

    stride: int
    objectness: np.ndarray
    regression: np.ndarray

    def __post_init__(self):
        obj = np.asarray(self.objectness, dtype=np.float64)
        if obj.ndim == 3 and obj.shape[0] == 1:
            obj = obj[0]
        reg = np.asarray(self.regression, dtype=np.float64)
        if obj.ndim != 2:
            raise ValueError(f"objectness must be (H, W) or (1, H, W), got {obj.shape}")
        if reg.shape != (5,) + obj.shape:
            raise ValueError(f"regression must be (5, {obj.shape[0]}, {obj.shape[1]}), got {reg.shape}")
        if self.stride not in (4, 8, 16, 32):
            raise ValueError(f"unsupported stride {self.stride}")
        self.objectness = obj
        self.regression = reg


@dataclass(frozen=True)
class FilterConfig:
    t_d: float = 0.7
    t_r: float = 0.8
    nms_iou: float = 0.3
    score_thresh: float = 0.5
    topk: int = 1000
    base_size: float = 640.0
    final_nms: bool = True

    def __post_init__(self):
        for name in ("t_d", "t_r", "nms_iou", "score_thresh"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.base_size <= 0:
            raise ValueError("base_size must be positive")
        if self.topk < 1:
            raise ValueError("topk must be >= 1")


@dataclass(frozen=True)
class Detection:
    box: RBoxCenter
    s_d: float
    s_r: float = 0.0
    transcript: str = ""

    def sort_key(self):
        return (-self.s_d,) + self.box.as_tuple()


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def decode_level(level: LevelMaps, cfg: FilterConfig = FilterConfig()) -> List[Tuple[RBoxCenter, float]]:
    score = sigmoid(level.objectness)
    ii, jj = np.nonzero(score > cfg.score_thresh)
    if ii.size == 0:
        return []
    s = score[ii, jj]
    # stable: ties keep row-major cell order
    order = np.argsort(-s, kind="stable")[: cfg.topk]
    ii, jj, s = ii[order], jj[order], s[order]
    raw = level.regression[:, ii, jj].T  # (n, 5)
    ltrb = sigmoid(raw[:, :4]) * cfg.base_size
    theta = sigmoid(raw[:, 4]) * PI + ANGLE_MIN
    gx = (jj + 0.5) * level.stride
    gy = (ii + 0.5) * level.stride
    boxes = dist_to_center_array(np.column_stack([ltrb, theta]), gx, gy)
    out = []
    for row, sc in zip(boxes, s):
        if row[2] > 0 and row[3] > 0:
            out.append((RBoxCenter(*row), float(sc)))
    return out


def decode_appn(levels: Sequence[LevelMaps], cfg: FilterConfig = FilterConfig()) -> List[Tuple[RBoxCenter, float]]:
    """Proposals from every level (top-k per level), concatenated in level order."""
    out = []
    for level in levels:
        out.extend(decode_level(level, cfg))
    return out


def rotated_nms(boxes: Sequence[RBoxCenter], scores: Sequence[float], iou_thresh: float) -> List[int]:
    """Greedy NMS; returns kept indices in descending score order (ties by index).

    A box is suppressed when its IoU with an already kept box exceeds ``iou_thresh``.
    """
    if len(boxes) != len(scores):
        raise ValueError("need one score per box")
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept: List[int] = []
    for i in order:
        bi = boxes[i]
        if all(rotated_iou(boxes[k], bi) <= iou_thresh for k in kept):
            kept.append(i)
    return kept


def refine(proposal: RBoxCenter, v: RegressionTarget) -> RBoxCenter:
    return decode_target(proposal, v)


def _check_probseq(seq) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise ValueError(f"probability sequence must be (T, C), got {seq.shape}")
    if seq.shape[0] == 0:
        raise ValueError("probability sequence has no timesteps")
    return seq


def rec_score(seq) -> float:
    """Mean over timesteps of the largest class probability (blank included)."""
    seq = _check_probseq(seq)
    return float(seq.max(axis=1).mean())


def greedy_decode(seq, alphabet: str, blank: int = 0) -> str:
    """Best-path decoding: argmax per frame, collapse repeats, drop blanks."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        return ""
    best = seq.argmax(axis=1)
    chars = []
    prev = None
    for k in best:
        k = int(k)
        if k != prev and k != blank:
            pos = k - 1 if k > blank else k
            if pos >= len(alphabet):
                raise ValueError(f"class column {k} has no alphabet entry (alphabet size {len(alphabet)})")
            chars.append(alphabet[pos])
        prev = k
    return "".join(chars)


def joint_filter(dets: Sequence[Detection], cfg: FilterConfig = FilterConfig()) -> List[Detection]:
    """Keep detections with ``s_r > t_r`` or ``s_d > t_d``, ordered by ``s_d`` descending."""
    keep = [i for i, d in enumerate(dets) if d.s_r > cfg.t_r or d.s_d > cfg.t_d]
    keep.sort(key=lambda i: (-dets[i].s_d, i))
    return [dets[i] for i in keep]


class SecondStageProvider(Protocol):
    """Second-stage outputs for the proposals that survive the first NMS.

    ``detect`` is called on the proposal and returns its regression and
    detection score; ``recognize`` is then called on the *refined* box and
    returns a ``(T, C)`` probability sequence, or ``None`` when no
    recognition output is available.
    """

    def detect(self, index: int, proposal: RBoxCenter) -> Tuple[RegressionTarget, float]: ...

    def recognize(self, index: int, refined: RBoxCenter) -> Optional[np.ndarray]: ...


@dataclass
class StubProvider:
    """Identity refinement with fixed scores; recognition emits all-blank one-hot rows."""

    s_d: float = 1.0
    seq_len: int = 1
    n_classes: int = 2
    recognition: bool = True

    def detect(self, index, proposal):
        return RegressionTarget.zero(), self.s_d

    def recognize(self, index, refined):
        if not self.recognition:
            return None
        seq = np.zeros((self.seq_len, self.n_classes))
        seq[:, 0] = 1.0
        return seq


@dataclass
class ArrayProvider:
    """Second-stage outputs dumped as arrays, indexed by surviving-proposal order.

    ``regression`` is ``(N, 5)``; ``scores`` is ``(N,)`` text probabilities or
    ``(N, 2)`` (background, text) pairs; ``sequences`` is ``(N, T, C)`` or None.
    """

    regression: np.ndarray
    scores: np.ndarray
    sequences: Optional[np.ndarray] = None
    _text_prob: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.regression = np.asarray(self.regression, dtype=np.float64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim == 2:
            if scores.shape[1] != 2:
                raise ValueError(f"scores must be (N,) or (N, 2), got {scores.shape}")
            scores = scores[:, 1]
        self._text_prob = scores
        n = self.regression.shape[0]
        if self.regression.shape != (n, 5):
            raise ValueError(f"regression must be (N, 5), got {self.regression.shape}")
        if scores.shape != (n,):
            raise ValueError(f"{scores.shape[0]} scores for {n} regression rows")
        if self.sequences is not None:
            self.sequences = np.asarray(self.sequences, dtype=np.float64)
            if self.sequences.ndim != 3 or self.sequences.shape[0] != n:
                raise ValueError(f"sequences must be ({n}, T, C), got {self.sequences.shape}")

    def __len__(self):
        return self.regression.shape[0]

    def detect(self, index, proposal):
        return RegressionTarget.from_array(self.regression[index]), float(self._text_prob[index])

    def recognize(self, index, refined):
        if self.sequences is None:
            return None
        return self.sequences[index]


def first_stage(levels: Sequence[LevelMaps], cfg: FilterConfig = FilterConfig()) -> List[Tuple[RBoxCenter, float]]:
    """Decoded proposals after NMS, in the order the second stage indexes them."""
    props = decode_appn(levels, cfg)
    kept = rotated_nms([p[0] for p in props], [p[1] for p in props], cfg.nms_iou)
    return [props[i] for i in kept]


def infer_pipeline(
    levels: Sequence[LevelMaps],
    provider: SecondStageProvider,
    cfg: FilterConfig = FilterConfig(),
    alphabet: str = "",
    n_jobs: int = 1,
) -> List[Detection]:
    """decode -> NMS -> detect -> refine -> recognize -> joint filter -> NMS.

    Output is sorted by ``s_d`` descending, then box parameters.
    """
    proposals = first_stage(levels, cfg)

    def second(idx):
        box, _ = proposals[idx]
        v, s_d = provider.detect(idx, box)
        refined = refine(box, v)
        seq = provider.recognize(idx, refined)
        if seq is None:
            return Detection(refined, float(s_d), 0.0, "")
        return Detection(refined, float(s_d), rec_score(seq), greedy_decode(seq, alphabet))

    if n_jobs > 1 and len(proposals) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            dets = list(pool.map(second, range(len(proposals))))
    else:
        dets = [second(i) for i in range(len(proposals))]

    dets = joint_filter(dets, cfg)
    if cfg.final_nms and dets:
        kept = rotated_nms([d.box for d in dets], [d.s_d for d in dets], cfg.nms_iou)
        dets = [dets[i] for i in kept]
    return sorted(dets, key=Detection.sort_key)
