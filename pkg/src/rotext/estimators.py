"""scikit-learn compatible wrappers.

Nothing here is learned; ``fit`` only validates parameters so the objects
slot into pipelines, ``clone`` and parameter searches.
"""
from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_gt_list, check_image_size, check_level_maps, check_unit
from .evaluation import evaluate
from .postprocess import FilterConfig, StubProvider, decode_appn, infer_pipeline
from .targets import DEFAULT_SHRINK, generate_targets


class TargetEncoder(TransformerMixin, BaseEstimator):
    """Turn per-image ground-truth lists into per-level target maps.

    Parameters
    ----------
    image_size : tuple of int, default=(640, 640)
        ``(height, width)`` of the input images.
    shrink : float, default=0.7
        Scale applied to each box before marking positive cells.
    """

    def __init__(self, image_size=(640, 640), shrink=DEFAULT_SHRINK):
        self.image_size = image_size
        self.shrink = shrink

    def fit(self, X=None, y=None):
        self.image_size_ = check_image_size(self.image_size)
        if not 0 < self.shrink <= 1:
            raise ValueError(f"shrink must be in (0, 1], got {self.shrink}")
        return self

    def transform(self, X):
        """``X`` is a sequence of GroundTruth lists; returns one list of LevelTargets per image."""
        check_is_fitted(self, "image_size_")
        h, w = self.image_size_
        return [generate_targets(check_gt_list(gts), h, w, self.shrink) for gts in X]


class RotatedTextDetector(BaseEstimator):
    """Two-stage inference over raw head outputs.

    Parameters mirror :class:`rotext.postprocess.FilterConfig`. ``predict``
    takes one list of LevelMaps per image and, optionally, a matching list of
    second-stage providers (identity stubs otherwise).
    """

    def __init__(
        self,
        t_d=0.7,
        t_r=0.8,
        nms_iou=0.3,
        score_thresh=0.5,
        topk=1000,
        base_size=640.0,
        final_nms=True,
        alphabet="",
        n_jobs=1,
    ):
        self.t_d = t_d
        self.t_r = t_r
        self.nms_iou = nms_iou
        self.score_thresh = score_thresh
        self.topk = topk
        self.base_size = base_size
        self.final_nms = final_nms
        self.alphabet = alphabet
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        for name in ("t_d", "t_r", "nms_iou", "score_thresh"):
            check_unit(getattr(self, name), name)
        self.config_ = FilterConfig(
            self.t_d, self.t_r, self.nms_iou, self.score_thresh, self.topk, self.base_size, self.final_nms
        )
        return self

    def propose(self, X):
        check_is_fitted(self, "config_")
        return [decode_appn(check_level_maps(levels), self.config_) for levels in X]

    def predict(self, X, providers=None):
        check_is_fitted(self, "config_")
        if providers is None:
            providers = [StubProvider() for _ in X]
        if len(providers) != len(X):
            raise ValueError("need one provider per image")
        return [
            infer_pipeline(check_level_maps(levels), prov, self.config_, self.alphabet, self.n_jobs)
            for levels, prov in zip(X, providers)
        ]

    def score(self, X, y, providers=None, iou_thresh=0.5):
        """Micro-averaged F-measure over all images."""
        preds = self.predict(X, providers)
        tp = fp = fn = 0
        for dets, gts in zip(preds, y):
            r = evaluate(dets, gts, iou_thresh)
            tp, fp, fn = tp + r.true_positives, fp + r.false_positives, fn + r.false_negatives
        p = tp / (tp + fp) if tp + fp else float(fn == 0)
        r = tp / (tp + fn) if tp + fn else 1.0
        return 2 * p * r / (p + r) if p + r else 0.0
