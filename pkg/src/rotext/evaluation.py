"""Detection evaluation by IoU-thresholded one-to-one matching."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

from .geometry import rotated_iou
from .postprocess import Detection
from .targets import GroundTruth


@dataclass(frozen=True)
class EvalReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f_measure: float

    def to_dict(self):
        return asdict(self)


def f_measure(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def evaluate(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thresh: float = 0.5) -> EvalReport:
    """Greedy matching in descending detection score.

    Each detection claims the unmatched GT of highest IoU, provided that IoU
    is at least ``iou_thresh``.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].s_d, i))
    matched = [False] * len(gts)
    tp = 0
    for i in order:
        best, best_iou = -1, -1.0
        for j, gt in enumerate(gts):
            if matched[j]:
                continue
            iou = rotated_iou(dets[i].box, gt.box)
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= iou_thresh:
            matched[best] = True
            tp += 1
    fp = len(dets) - tp
    fn = len(gts) - tp
    if dets:
        precision = tp / len(dets)
    else:
        precision = 1.0 if not gts else 0.0
    recall = tp / len(gts) if gts else 1.0
    return EvalReport(tp, fp, fn, precision, recall, f_measure(precision, recall))
