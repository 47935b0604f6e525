import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from petalsearch.errors import EmptyInputError, ShapeError
from petalsearch.features import PetalFeature
from petalsearch.metrics import (EvalRecord, angle_loss, contrastive_metric, early_stop, level_contrastive,
                                 level_hits, matched_crop, reconstruction_l2, report_markdown, report_rows,
                                 sample_mask, summarize)
from petalsearch.synthworld import GroundTruth

_angles = st.floats(-1e4, 1e4, allow_nan=False)


def _gt(y=10.0, x=10.0, theta=0.0):
    return GroundTruth((y, x), theta, (y, x), theta, (0.0, 0.0))


@pytest.mark.parametrize("a,b,want", [(10, 10, 0.0), (0, 180, 1.0), (350, 10, 20 / 180), (-10, 10, 20 / 180),
                                      (720, 90, 0.5)])
def test_angle_loss_examples(a, b, want):
    assert angle_loss(a, b) == pytest.approx(want, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(_angles, _angles)
def test_angle_loss_properties(a, b):
    v = angle_loss(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(angle_loss(b, a), abs=1e-9)
    assert v == pytest.approx(angle_loss(a + 360.0, b), abs=1e-9)


def test_contrastive_examples():
    assert contrastive_metric([1.0, 0.5], 0) == pytest.approx(-math.log(1 / (1 + math.exp(-10))), rel=1e-9)
    assert contrastive_metric([1.0, 0.5], 0) == pytest.approx(4.54e-5, abs=1e-7)
    for n in (1, 4, 57):
        assert contrastive_metric(np.full(n, 0.3), n - 1) == pytest.approx(math.log(n), abs=1e-9)
    assert contrastive_metric([2.0, 0.0, 0.5], 0) < 1e-8
    # saturated negatives stay finite
    assert math.isfinite(contrastive_metric([100.0, -100.0], 1))
    with pytest.raises(IndexError):
        contrastive_metric([1.0, 2.0], 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=20), st.floats(-5, 5), st.data())
def test_contrastive_shift_invariant(scores, c, data):
    k = data.draw(st.integers(0, len(scores) - 1))
    shifted = [s + c for s in scores]
    assert contrastive_metric(scores, k) == pytest.approx(contrastive_metric(shifted, k), abs=1e-9)


def test_reconstruction_l2():
    a = PetalFeature(np.ones((8, 2, 3)), 10.0, "street", 80.0)
    b = PetalFeature(np.zeros((8, 2, 3)), 10.0, "street", 80.0)
    assert reconstruction_l2(a, a) == 0.0
    assert reconstruction_l2(a, b) == pytest.approx(math.sqrt(48))
    with pytest.raises(ShapeError):
        reconstruction_l2(a, PetalFeature(np.zeros((36, 2, 3)), 10.0))


def test_matched_crop():
    sat = PetalFeature(np.arange(36.0).reshape(36, 1, 1), 10.0)
    crop = matched_crop(sat, 50.0, 80.0)
    assert crop.data.ravel().tolist() == [5, 6, 7, 8, 9, 10, 11, 12]
    assert matched_crop(sat, 355.0, 360.0).data.ravel()[0] in (35.0, 0.0)


def test_level_mask_and_early_stop():
    assert sample_mask([True, True, True]) == [True, True, True]
    assert sample_mask([False, True, True]) == [True, False, False]
    assert sample_mask([True, False, True]) == [True, True, False]
    batch = [[False, True], [True, False]]
    assert not early_stop(batch, 0)
    # sample 0 is masked at level 1; sample 1 misses there
    assert early_stop(batch, 1)
    assert early_stop([[False], [False]], 0)


def test_level_hits_and_contrastive():
    anchors = [np.array([[2, 2], [2, 6], [6, 2], [6, 6]]), np.array([[5, 5], [5, 7], [7, 5], [7, 7]])]
    spacings = [4, 2]
    scores = [np.array([0.1, 0.2, 0.3, 0.9]), np.array([0.9, 0.1, 0.1, 0.1])]
    assert level_hits(anchors, [3, 0], spacings, (5, 5)) == [True, True]
    assert level_hits(anchors, [0, 0], spacings, (5, 5)) == [False, True]
    v = level_contrastive(anchors, scores, spacings, (5, 5))
    want = (contrastive_metric(scores[0], 3) + contrastive_metric(scores[1], 0)) / 2
    assert v == pytest.approx(want)
    # a miss at level 0 masks level 1
    bad = [np.array([0.9, 0.2, 0.3, 0.1]), scores[1]]
    assert level_contrastive(anchors, bad, spacings, (5, 5)) == pytest.approx(contrastive_metric(bad[0], 3))
    assert level_contrastive(anchors, scores, spacings, (50, 50)) is None


def test_record_errors():
    r = EvalRecord.build("a", _gt(10, 10, 350), 13, 14, 10, 0.5)
    assert (r.err_lat_m, r.err_lon_m) == (1.5, 2.0)
    assert r.err_loc_m == pytest.approx(2.5)
    assert r.err_theta_deg == pytest.approx(20.0)


def test_summarize_perfect():
    recs = [EvalRecord.build(str(i), _gt(5, 5, 30), 5, 5, 30, 1.0, con=0.0, l2=0.0) for i in range(4)]
    rep = summarize(recs)
    assert rep["count"] == 4
    assert all(v == 100.0 for v in rep["recall"].values())
    assert all(v == 0.0 for v in rep["errors"].values())
    assert rep["losses"]["total"] == 0.0


def test_summarize_examples():
    rep = summarize([EvalRecord.build("a", _gt(0, 0), 3, 0, 0, 1.0)])
    assert rep["recall"]["loc@1m"] == 0.0 and rep["recall"]["loc@5m"] == 100.0
    recs = [EvalRecord.build("a", _gt(theta=0), 10, 10, 0.4, 1.0), EvalRecord.build("b", _gt(theta=0), 10, 10, 3, 1.0)]
    rep = summarize(recs)
    assert rep["recall"]["theta@1deg"] == 50.0 and rep["recall"]["theta@5deg"] == 100.0
    assert rep["errors"]["theta_mean"] == pytest.approx(1.7)
    assert rep["losses"]["con"] is None and rep["losses"]["l2"] is None
    assert rep["losses"]["total"] == pytest.approx(1.7 / 180)


def test_summarize_weights():
    recs = [EvalRecord.build("a", _gt(0, 0, 0), 0, 2, 90, 1.0, con=1.0, l2=1.0)]
    rep = summarize(recs)
    assert rep["losses"]["total"] == pytest.approx(2.0 + 0.5 + 5.0 + 0.2)


def test_summarize_empty():
    with pytest.raises(EmptyInputError):
        summarize([])


def test_recall_monotone_in_threshold():
    rng = np.random.default_rng(0)
    recs = [EvalRecord.build(str(i), _gt(), 10 + rng.normal(scale=4), 10 + rng.normal(scale=4),
                             rng.uniform(0, 20), 1.0) for i in range(50)]
    thr = (0.5, 1, 2, 5, 10)
    rep = summarize(recs, thr, thr)
    for axis, unit in (("lat", "m"), ("lon", "m"), ("loc", "m"), ("theta", "deg")):
        vals = [rep["recall"][f"{axis}@{t:g}{unit}"] for t in thr]
        assert vals == sorted(vals)


def test_report_formats():
    rep = summarize([EvalRecord.build("a", _gt(), 10, 10, 0, 1.0)])
    rows = dict(report_rows(rep))
    assert rows["count"] == "1" and rows["r_loc@1m"] == "100.00" and rows["loss_con"] == ""
    md = report_markdown(rep).splitlines()
    assert len(md) == 3 and md[0].count("|") == md[2].count("|")
