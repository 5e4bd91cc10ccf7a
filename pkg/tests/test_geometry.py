import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vtspot import autograd as ag
from vtspot.geometry import (RoIParams, RotatedBox, affine_point, angle_loss, bounding_rects, box_l1, giou,
                             giou_tensor, normalize_angle, pairwise_giou, pairwise_iou, rotated_roi_align)

finite = st.floats(-50, 50, allow_nan=False)
angle = st.floats(-20, 20, allow_nan=False)


def roi_at(cx, cy, alpha, w=4.0, h=2.0, oh=2, ow=4):
    return RoIParams(RotatedBox(cx, cy, w, h, alpha), oh, ow, alpha=alpha)


# -- normalize_angle ---------------------------------------------------------------

def test_normalize_angle_examples():
    assert normalize_angle(0.0) == 0.0
    assert normalize_angle(math.pi) == pytest.approx(0.0, abs=1e-15)
    assert normalize_angle(3 * math.pi / 4) == pytest.approx(-math.pi / 4, abs=1e-15)
    assert normalize_angle(math.pi / 2) == -math.pi / 2


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_normalize_angle_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        normalize_angle(bad)


@given(angle)
def test_normalize_angle_range_and_congruence(t):
    n = normalize_angle(t)
    assert -math.pi / 2 <= n < math.pi / 2
    k = (t - n) / math.pi
    assert abs(k - round(k)) < 1e-9


def test_rotated_box_validation():
    with pytest.raises(ValueError):
        RotatedBox(0.5, 0.5, 0.0, 0.1)
    with pytest.raises(ValueError):
        RotatedBox(0.5, 0.5, 0.1, -0.1)
    assert RotatedBox(0.5, 0.5, 0.2, 0.1, math.pi).theta == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        RoIParams(RotatedBox(1, 1, 1, 1), 0, 3)


# -- affine_point ------------------------------------------------------------------

@given(finite, finite, angle)
def test_affine_center_maps_to_origin(cx, cy, a):
    x, y = affine_point(cx, cy, roi_at(cx, cy, a))
    assert abs(x) <= 1e-12 and abs(y) <= 1e-12


def test_affine_worked_examples():
    assert affine_point(13.0, 5.0, roi_at(10.0, 7.0, 0.0)) == (3.0, -2.0)
    x, y = affine_point(11.0, 7.0, roi_at(10.0, 7.0, math.pi / 2))
    assert abs(x - 0.0) <= 1e-12 and abs(y + 1.0) <= 1e-12


@given(finite, finite, finite, finite, finite, finite, angle)
def test_affine_is_rigid(x1, y1, x2, y2, cx, cy, a):
    roi = roi_at(cx, cy, a)
    p, q = affine_point(x1, y1, roi), affine_point(x2, y2, roi)
    d0 = math.hypot(x1 - x2, y1 - y2)
    d1 = math.hypot(p[0] - q[0], p[1] - q[1])
    assert abs(d0 - d1) <= 1e-12 * max(1.0, d0)


# -- rotated_roi_align -------------------------------------------------------------

def test_roi_align_constant_map():
    fmap = np.full((3, 20, 24), 2.5)
    roi = RoIParams(RotatedBox(11.3, 9.7, 8.0, 4.0, 0.6), 4, 8)
    out = rotated_roi_align(ag.Tensor(fmap), roi).data
    assert out.shape == (3, 4, 8)
    assert np.max(np.abs(out - 2.5)) <= 1e-10


def test_roi_align_identity_crop():
    rng = np.random.default_rng(0)
    c, h, w = 2, 5, 7
    fmap = rng.normal(size=(c, h, w))
    # pixel-centre convention: pixel i spans [i - 0.5, i + 0.5]
    roi = RoIParams(RotatedBox((w - 1) / 2, (h - 1) / 2, float(w), float(h), 0.0), h, w)
    out = rotated_roi_align(ag.Tensor(fmap), roi).data
    assert np.max(np.abs(out - fmap)) <= 1e-10


@given(st.floats(-1.5, 1.5))
def test_roi_align_pi_invariance(a):
    rng = np.random.default_rng(1)
    fmap = ag.Tensor(rng.normal(size=(2, 16, 16)))
    r1 = RoIParams(RotatedBox(7.2, 8.1, 9.0, 3.0, a), 3, 6)
    r2 = RoIParams(RotatedBox(7.2, 8.1, 9.0, 3.0, a + math.pi), 3, 6)
    np.testing.assert_allclose(rotated_roi_align(fmap, r1).data, rotated_roi_align(fmap, r2).data, atol=1e-12)


def test_roi_align_inverts_affine_point():
    roi = RoIParams(RotatedBox(10.0, 8.0, 6.0, 2.0, 0.4), 2, 3)
    from vtspot.geometry import roi_sample_grid
    xs, ys = roi_sample_grid(roi)
    local = np.array([affine_point(x, y, roi) for x, y in zip(xs, ys)])
    u = (np.arange(3) + 0.5) / 3 * 6 - 3
    v = (np.arange(2) + 0.5) / 2 * 2 - 1
    np.testing.assert_allclose(local[:, 0], np.tile(u, 2), atol=1e-12)
    np.testing.assert_allclose(local[:, 1], np.repeat(v, 3), atol=1e-12)


# -- box measures ------------------------------------------------------------------

def test_giou_examples():
    a = RotatedBox(0.25, 0.25, 0.2, 0.2)
    b = RotatedBox(0.75, 0.75, 0.2, 0.2)
    assert giou(a, a) == pytest.approx(1.0, abs=1e-15)
    oracle = 0.0 - (0.49 - 0.08) / 0.49
    assert abs(giou(a, b) - oracle) <= 1e-4
    assert giou(a, b) == pytest.approx(-0.8367, abs=1e-4)
    outer, inner = RotatedBox(0.5, 0.5, 0.4, 0.4), RotatedBox(0.55, 0.45, 0.2, 0.1)
    iou = 0.02 / 0.16
    assert giou(outer, inner) == pytest.approx(iou, abs=1e-12)
    assert pairwise_iou(outer.as_array(), inner.as_array())[0, 0] == pytest.approx(iou, abs=1e-12)


def test_giou_monte_carlo_cross_check():
    rng = np.random.default_rng(5)
    a, b = np.array([0.25, 0.25, 0.2, 0.2]), np.array([0.75, 0.75, 0.2, 0.2])
    pts = rng.random((400_000, 2)) * 0.7 + 0.15   # enclosing box [0.15, 0.85]^2
    ina = np.all(np.abs(pts - a[:2]) <= a[2:] / 2, axis=1)
    inb = np.all(np.abs(pts - b[:2]) <= b[2:] / 2, axis=1)
    encl = 0.49
    union = encl * np.mean(ina | inb)
    inter = encl * np.mean(ina & inb)
    mc = inter / union - (encl - union) / encl
    assert abs(mc - giou(RotatedBox(*a), RotatedBox(*b))) < 0.01


boxes = st.tuples(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.01, 0.6), st.floats(0.01, 0.6))


@given(boxes, boxes)
def test_giou_symmetric_and_bounded(a, b):
    g1 = pairwise_giou(np.array(a), np.array(b))[0, 0]
    g2 = pairwise_giou(np.array(b), np.array(a))[0, 0]
    assert g1 == pytest.approx(g2, abs=1e-14)
    assert -1 < g1 <= 1 + 1e-15


@given(boxes, boxes)
def test_giou_tensor_matches_numpy(a, b):
    t = giou_tensor(ag.Tensor(np.array([a])), np.array([b])).data[0]
    assert t == pytest.approx(pairwise_giou(np.array(a), np.array(b))[0, 0], abs=1e-12)


def test_box_l1_examples():
    a = RotatedBox(0.5, 0.5, 0.2, 0.1)
    assert box_l1(a, a) == 0.0
    assert box_l1(a, RotatedBox(0.6, 0.5, 0.2, 0.1)) == pytest.approx(0.1, abs=1e-15)
    assert box_l1(a, RotatedBox(0.6, 0.6, 0.3, 0.2)) == pytest.approx(0.4, abs=1e-15)


def test_angle_loss_examples():
    assert angle_loss(0.0, 0.0) == 0.0
    assert angle_loss(0.0, math.pi / 2) == pytest.approx(1.0, abs=1e-15)
    assert angle_loss(math.pi / 4, -math.pi / 4) == pytest.approx(1.0, abs=1e-15)


@given(st.floats(-10, 10), st.integers(-5, 5))
def test_angle_loss_periodic(a, k):
    assert angle_loss(a, a + 2 * math.pi * k) == pytest.approx(0.0, abs=1e-12)


def test_bounding_rects():
    r = bounding_rects([[0.5, 0.5, 0.4, 0.1, math.pi / 2 - 1e-12]])[0]
    np.testing.assert_allclose(r, [0.5, 0.5, 0.1, 0.4], atol=1e-9)
    r = RotatedBox(0.5, 0.5, 0.4, 0.2, 0.3).bounding_rect()
    c, s = math.cos(0.3), math.sin(0.3)
    assert (r.w, r.h) == pytest.approx((0.4 * c + 0.2 * s, 0.4 * s + 0.2 * c))
