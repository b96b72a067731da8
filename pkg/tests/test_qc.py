import random

import pytest

from cxrground.core import RasterMask
from cxrground.qc import compute_ctr, cross_check_masks


def _rect(w, h, r0, r1, c0, c1):
    return RasterMask.from_members(
        w, h, [(r, c) for r in range(r0, r1) for c in range(c0, c1)]
    )


def _organs(w=100, h=100):
    return {
        "right_lung": _rect(w, h, 10, 90, 5, 25),
        "left_lung": _rect(w, h, 10, 90, 75, 95),
        "heart": _rect(w, h, 50, 85, 40, 60),
    }


def test_cross_check_identical_masks_pass():
    organs = _organs()
    result = cross_check_masks(organs, dict(organs), rel_tol=0.05)
    assert result.passed and result.reasons == ()


def test_cross_check_lung_outer_edge_failure():
    primary = _organs()
    secondary = dict(primary)
    # right lung outer (leftmost) edge shifted by 20% of width
    secondary["right_lung"] = _rect(100, 100, 10, 90, 25, 45)
    result = cross_check_masks(primary, secondary, rel_tol=0.05)
    assert not result.passed
    assert any("right_lung" in r for r in result.reasons)


def test_cross_check_heart_small_shift_passes():
    primary = _organs(512, 512)
    primary["heart"] = _rect(512, 512, 250, 420, 200, 300)
    secondary = dict(primary)
    secondary["heart"] = _rect(512, 512, 250, 421, 200, 300)  # 1 px lower
    assert cross_check_masks(primary, secondary, rel_tol=0.05).passed


def test_cross_check_heart_large_shift_fails():
    primary = _organs()
    secondary = dict(primary)
    secondary["heart"] = _rect(100, 100, 30, 65, 40, 60)  # 20 px higher
    result = cross_check_masks(primary, secondary, rel_tol=0.05)
    assert not result.passed
    assert any("heart" in r for r in result.reasons)


def test_cross_check_empty_mask_fails():
    primary = _organs()
    secondary = dict(primary)
    secondary["left_lung"] = RasterMask.empty(100, 100)
    result = cross_check_masks(primary, secondary, rel_tol=0.05)
    assert not result.passed
    assert any("empty mask" in r for r in result.reasons)


def test_ctr_worked_example():
    # heart spans cols 20-28 (width 9), lungs span cols 5-24 -> CTR = 9/20
    w = h = 40
    lung_r = _rect(w, h, 5, 35, 5, 13)
    lung_l = _rect(w, h, 5, 35, 17, 25)
    heart = _rect(w, h, 20, 35, 20, 29)
    assert compute_ctr(lung_r, lung_l, heart) == pytest.approx(0.45)


def test_ctr_extremes():
    w = h = 30
    lung_r = _rect(w, h, 2, 28, 2, 10)
    lung_l = _rect(w, h, 2, 28, 16, 24)
    full_width_heart = _rect(w, h, 14, 28, 2, 24)
    assert compute_ctr(lung_r, lung_l, full_width_heart) == pytest.approx(1.0)
    half_heart = _rect(w, h, 14, 28, 7, 18)  # 11 cols of the 22-col thorax
    assert compute_ctr(lung_r, lung_l, half_heart) == pytest.approx(0.5)


def test_ctr_empty_mask_errors():
    w = h = 30
    lung_r = _rect(w, h, 2, 28, 2, 10)
    lung_l = _rect(w, h, 2, 28, 16, 24)
    with pytest.raises(ValueError, match="heart"):
        compute_ctr(lung_r, lung_l, RasterMask.empty(w, h))


def test_ctr_translation_invariance():
    rng = random.Random(5)
    w, h = 60, 40
    for _ in range(20):
        c0 = rng.randint(0, 10)
        lung_r = _rect(w, h, 5, 35, c0, c0 + 12)
        lung_l = _rect(w, h, 5, 35, c0 + 25, c0 + 37)
        heart = _rect(w, h, 20, 35, c0 + 10, c0 + 24)
        base = compute_ctr(lung_r, lung_l, heart)
        for shift in (1, 5, 9):
            sr = _rect(w, h, 5, 35, c0 + shift, c0 + 12 + shift)
            sl = _rect(w, h, 5, 35, c0 + 25 + shift, c0 + 37 + shift)
            sh = _rect(w, h, 20, 35, c0 + 10 + shift, c0 + 24 + shift)
            assert compute_ctr(sr, sl, sh) == pytest.approx(base)
