import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from highlightnet.errors import InvalidArgumentError, TrackingLostError
from highlightnet.synthetic import translating_square
from highlightnet.tracking import (
    BoundingBox, center_error, iou, ncc_track, one_pass_eval, read_ground_truth, write_ground_truth,
)

boxes = st.builds(BoundingBox, st.integers(0, 50), st.integers(0, 50), st.integers(1, 30), st.integers(1, 30))


def textured(seed, size=80):
    return np.random.default_rng(seed).uniform(size=(size, size, 3)).astype(np.float32)


def test_static_sequence_keeps_box():
    frame = textured(0)
    init = BoundingBox(20, 25, 12, 10)
    out = ncc_track([frame] * 5, init)
    assert out == [init] * 5


def test_translating_square_is_exact():
    frames, gt = translating_square()
    pred = ncc_track(frames, gt[0])
    assert [center_error(p, g) for p, g in zip(pred, gt)] == [0.0] * len(gt)


@settings(max_examples=10, deadline=None)
@given(st.integers(-6, 6), st.integers(-6, 6))
def test_translation_consistency(dy, dx):
    base = np.random.default_rng(1).uniform(size=(120, 120, 3))
    seq = [base[20 + 2 * k:100 + 2 * k, 20 + k:100 + k] for k in range(4)]
    shifted = [base[20 + 2 * k - dy:100 + 2 * k - dy, 20 + k - dx:100 + k - dx] for k in range(4)]
    init = BoundingBox(30, 30, 12, 12)
    a = ncc_track(seq, init)
    b = ncc_track(shifted, init.shifted(dx, dy))
    assert [x.shifted(dx, dy) for x in a] == b


def test_tracker_errors():
    frame = textured(2)
    with pytest.raises(InvalidArgumentError):
        ncc_track([frame], BoundingBox(0, 0, 5, 5))
    with pytest.raises(TrackingLostError):
        ncc_track([frame, frame], BoundingBox(200, 200, 5, 5))


def test_enhancer_hook_is_applied():
    frames, gt = translating_square(n_frames=4)
    calls = []
    ncc_track(frames, gt[0], enhancer=lambda f: calls.append(1) or f)
    assert len(calls) == 4


def test_one_pass_perfect():
    gt = [BoundingBox(10 + k, 5, 8, 8) for k in range(5)]
    rep = one_pass_eval(gt, gt)
    assert rep.precision == 1.0
    # IoU = 1 clears every threshold t < 1; the last one needs IoU > 1.
    assert rep.success_auc == pytest.approx(50 / 51)


def test_one_pass_total_miss():
    gt = [BoundingBox(0, 0, 10, 10)] * 3
    rep = one_pass_eval([b.shifted(30, 0) for b in gt], gt)
    assert rep.precision == 0.0 and rep.success_auc == 0.0


def test_one_pass_counts():
    gt = [BoundingBox(0, 0, 10, 10)] * 3
    pred = [gt[0], gt[0].shifted(6, 8), gt[0].shifted(15, 20)]
    rep = one_pass_eval(pred, gt)
    assert rep.cle == pytest.approx([0, 10, 25])
    assert rep.precision == pytest.approx(2 / 3)


def test_one_pass_length_mismatch():
    with pytest.raises(InvalidArgumentError):
        one_pass_eval([BoundingBox(0, 0, 1, 1)], [])


@settings(max_examples=100)
@given(boxes, boxes)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0 <= v <= 1
    assert v == iou(b, a)
    assert (v == 1) == (a == b)


def test_box_validation():
    with pytest.raises(InvalidArgumentError):
        BoundingBox(0, 0, 0, 5)


def test_ground_truth_round_trip(tmp_path):
    gt = [BoundingBox(1.5, 2, 3, 4), BoundingBox(10, 20, 30, 40)]
    write_ground_truth(tmp_path / "gt.txt", gt)
    assert read_ground_truth(tmp_path / "gt.txt") == gt
    (tmp_path / "bad.txt").write_text("1,2,3\n")
    with pytest.raises(InvalidArgumentError):
        read_ground_truth(tmp_path / "bad.txt")
