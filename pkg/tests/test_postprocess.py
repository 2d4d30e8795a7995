import math

import numpy as np
import pytest

from conftest import random_box
from oracles import joint_filter_reference, nms_reference
from rotext.geometry import RBoxCenter, rotated_iou
from rotext.postprocess import (
    ArrayProvider,
    Detection,
    FilterConfig,
    LevelMaps,
    StubProvider,
    decode_appn,
    first_stage,
    greedy_decode,
    infer_pipeline,
    joint_filter,
    rec_score,
    refine,
    rotated_nms,
)
from rotext.targets import RegressionTarget, decode_target, encode_target


def empty_level(stride=8, H=6, W=7):
    return LevelMaps(stride, np.full((H, W), -50.0), np.zeros((5, H, W)))


def test_decode_zero_logits():
    lvl = empty_level()
    lvl.objectness[2, 3] = 5.0
    props = decode_appn([lvl])
    assert len(props) == 1
    box, score = props[0]
    assert score == pytest.approx(1 / (1 + math.exp(-5)))
    assert box.as_tuple() == pytest.approx((28, 20, 640, 640, math.pi / 4))


def test_decode_negative_objectness_is_empty():
    assert decode_appn([empty_level(4), empty_level(8)]) == []


def test_decode_one_proposal_per_cell(rng):
    levels = [
        LevelMaps(s, rng.normal(2, 1, (h, w)), rng.normal(-2, 1, (5, h, w)))
        for s, h, w in ((4, 10, 12), (8, 5, 6), (16, 3, 3), (32, 2, 2))
    ]
    props = decode_appn(levels, FilterConfig(score_thresh=0.0))
    assert len(props) == sum(lv.objectness.size for lv in levels)
    for box, s in props:
        assert box.w > 0 and box.h > 0
        assert -math.pi / 4 <= box.theta < 3 * math.pi / 4


def test_decode_topk_per_level(rng):
    lvl = LevelMaps(4, rng.normal(3, 1, (10, 10)), np.zeros((5, 10, 10)))
    props = decode_appn([lvl, lvl], FilterConfig(topk=7))
    assert len(props) == 14
    scores = [s for _, s in props[:7]]
    assert scores == sorted(scores, reverse=True)


def test_decode_base_size_and_angle():
    lvl = empty_level(4, 3, 3)
    lvl.objectness[1, 1] = 3.0
    # logit(0.25) on left/top, logit(0.75) on angle
    lvl.regression[:, 1, 1] = [math.log(1 / 3), math.log(1 / 3), 0, 0, math.log(3)]
    (box, _), = decode_appn([lvl], FilterConfig(base_size=100))
    # l=t=25, r=b=50, theta = 0.75*pi - pi/4 = pi/2
    assert (box.w, box.h) == pytest.approx((75, 75))
    assert box.theta == pytest.approx(math.pi / 2)
    # offset ((r-l)/2, (b-t)/2) = (12.5, 12.5) rotated 90 degrees -> (-12.5, 12.5)
    assert (box.cx, box.cy) == pytest.approx((6 - 12.5, 6 + 12.5))


def test_level_maps_validation():
    with pytest.raises(ValueError):
        LevelMaps(8, np.zeros((3, 3)), np.zeros((4, 3, 3)))
    with pytest.raises(ValueError):
        LevelMaps(5, np.zeros((3, 3)), np.zeros((5, 3, 3)))
    assert LevelMaps(8, np.zeros((1, 3, 3)), np.zeros((5, 3, 3))).objectness.shape == (3, 3)


def test_nms_examples():
    a = RBoxCenter(0, 0, 10, 10, 0)
    assert rotated_nms([a], [0.5], 0.5) == [0]
    assert rotated_nms([a, a], [0.8, 0.9], 0.5) == [1]
    far = RBoxCenter(100, 0, 10, 10, 0)
    assert rotated_nms([a, far], [0.1, 0.2], 0.5) == [1, 0]
    assert rotated_nms([], [], 0.5) == []


def test_nms_tie_break_by_index():
    a = RBoxCenter(0, 0, 10, 10, 0)
    assert rotated_nms([a, a, a], [0.5, 0.5, 0.5], 0.3) == [0]


def _random_set(rng):
    n = int(rng.integers(1, 25))
    boxes = [random_box(rng, center=(0, 80), size=(5, 40)) for _ in range(n)]
    scores = list(np.round(rng.random(n), 2))  # rounding forces ties
    return boxes, scores


def test_nms_matches_reference(rng):
    for _ in range(200):
        boxes, scores = _random_set(rng)
        thr = float(rng.uniform(0.1, 0.7))
        assert rotated_nms(boxes, scores, thr) == nms_reference(boxes, scores, thr, rotated_iou)


def test_nms_idempotent(rng):
    for _ in range(100):
        boxes, scores = _random_set(rng)
        kept = rotated_nms(boxes, scores, 0.3)
        again = rotated_nms([boxes[i] for i in kept], [scores[i] for i in kept], 0.3)
        assert [kept[i] for i in again] == kept


def test_refine_delegates_and_round_trips(rng):
    p = RBoxCenter(10, 10, 20, 5, 0.2)
    assert refine(p, RegressionTarget.zero()) == p
    for _ in range(100):
        v = RegressionTarget(*rng.normal(0, 0.3, 4), rng.uniform(-1.5, 1.5))
        r = refine(p, v)
        assert r == decode_target(p, v)
        assert encode_target(p, r).as_array() == pytest.approx(v.as_array(), abs=1e-9)


def test_rec_score_examples():
    assert rec_score(np.eye(4)) == pytest.approx(1.0)
    assert rec_score(np.full((3, 4), 0.25)) == pytest.approx(0.25)
    assert rec_score([[0.9, 0.1], [0.3, 0.7]]) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        rec_score(np.zeros((0, 3)))


def test_rec_score_bounds(rng):
    for _ in range(100):
        C = int(rng.integers(2, 6))
        x = rng.normal(0, 2, (int(rng.integers(1, 10)), C))
        seq = np.exp(x) / np.exp(x).sum(axis=1, keepdims=True)
        assert 1 / C - 1e-12 <= rec_score(seq) <= 1.0


def _onehot(path, C):
    seq = np.zeros((len(path), C))
    seq[np.arange(len(path)), path] = 1.0
    return seq


def test_greedy_decode():
    alphabet = "ab"
    assert greedy_decode(_onehot([1, 1, 0, 2], 3), alphabet) == "ab"
    assert greedy_decode(_onehot([0, 0, 0], 3), alphabet) == ""
    assert greedy_decode(_onehot([1, 0, 1], 3), alphabet) == "aa"
    with pytest.raises(ValueError):
        greedy_decode(_onehot([3], 4), alphabet)


def _det(s_d, s_r, x=0.0):
    return Detection(RBoxCenter(x, 0, 10, 10, 0), s_d, s_r, "")


def test_joint_filter_examples():
    cfg = FilterConfig(t_d=0.7, t_r=0.8)
    assert joint_filter([_det(0.9, 0.1)], cfg) == [_det(0.9, 0.1)]
    assert joint_filter([_det(0.5, 0.9)], cfg) == [_det(0.5, 0.9)]
    assert joint_filter([_det(0.5, 0.5)], cfg) == []
    # strict inequality
    assert joint_filter([_det(0.7, 0.8)], cfg) == []


def test_joint_filter_matches_set_construction(rng):
    for _ in range(300):
        dets = [_det(float(a), float(b), float(i)) for i, (a, b) in enumerate(np.round(rng.random((int(rng.integers(0, 15)), 2)), 1))]
        t_d, t_r = (float(x) for x in np.round(rng.random(2), 1))
        cfg = FilterConfig(t_d=t_d, t_r=t_r)
        out = joint_filter(dets, cfg)
        ids = [int(d.box.cx) for d in out]
        assert set(ids) == joint_filter_reference(dets, t_d, t_r)
        assert len(ids) == len(set(ids))
        assert [d.s_d for d in out] == sorted((d.s_d for d in out), reverse=True)
        bigger = FilterConfig(t_d=min(1.0, t_d + 0.1), t_r=min(1.0, t_r + 0.1))
        assert {int(d.box.cx) for d in joint_filter(dets, bigger)} <= set(ids)


def _two_box_levels():
    # two separated positive cells on P3 -> two distinct proposals
    lvl = LevelMaps(8, np.full((8, 8), -20.0), np.full((5, 8, 8), -3.0))
    lvl.objectness[1, 1] = 4.0
    lvl.objectness[6, 6] = 3.0
    return [lvl]


def test_pipeline_empty():
    assert infer_pipeline([empty_level()], StubProvider()) == []


def test_pipeline_identity_stub_returns_nms_proposals():
    levels = _two_box_levels()
    dets = infer_pipeline(levels, StubProvider(), FilterConfig())
    props = first_stage(levels, FilterConfig())
    assert len(dets) == 2
    assert {d.box for d in dets} == {p[0] for p in props}
    assert all(d.s_r == 1.0 and d.s_d == 1.0 and d.transcript == "" for d in dets)


def test_pipeline_without_recognition_uses_detection_threshold():
    levels = _two_box_levels()
    prov = ArrayProvider(np.zeros((2, 5)), np.array([0.9, 0.6]))
    dets = infer_pipeline(levels, prov, FilterConfig(t_d=0.7))
    assert [d.s_d for d in dets] == [0.9]
    assert dets[0].s_r == 0.0


class _RecordingProvider:
    def __init__(self):
        self.calls = []

    def detect(self, index, proposal):
        self.calls.append(("detect", index, proposal))
        return RegressionTarget(0.1, 0, 0, 0, 0), 0.95

    def recognize(self, index, refined):
        self.calls.append(("recognize", index, refined))
        return _onehot([1, 0, 2], 3)


def test_pipeline_recognizes_refined_box():
    levels = _two_box_levels()
    prov = _RecordingProvider()
    dets = infer_pipeline(levels, prov, FilterConfig(), alphabet="xy")
    for i in range(0, len(prov.calls), 2):
        kind, idx, proposal = prov.calls[i]
        kind2, idx2, refined = prov.calls[i + 1]
        assert (kind, kind2) == ("detect", "recognize") and idx == idx2
        assert refined == refine(proposal, RegressionTarget(0.1, 0, 0, 0, 0))
    assert all(d.transcript == "xy" for d in dets)


def test_pipeline_rescue_by_recognition_and_threads():
    levels = _two_box_levels()
    seqs = np.stack([_onehot([1, 0], 3), np.full((2, 3), 1 / 3)])
    prov = ArrayProvider(np.zeros((2, 5)), np.array([[0.5, 0.5], [0.6, 0.4]]), seqs)
    dets = infer_pipeline(levels, prov, FilterConfig(t_d=0.7, t_r=0.8), alphabet="ab")
    assert len(dets) == 1 and dets[0].transcript == "a" and dets[0].s_r == 1.0
    assert infer_pipeline(levels, prov, FilterConfig(), "ab", n_jobs=8) == dets


def test_array_provider_validation():
    with pytest.raises(ValueError):
        ArrayProvider(np.zeros((2, 5)), np.zeros(3))
    with pytest.raises(ValueError):
        ArrayProvider(np.zeros((2, 4)), np.zeros(2))
    with pytest.raises(ValueError):
        ArrayProvider(np.zeros((2, 5)), np.zeros((2, 3)))


def test_filter_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(t_d=1.5)
    with pytest.raises(ValueError):
        FilterConfig(base_size=0)
