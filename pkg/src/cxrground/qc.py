"""Study-level quality control: mask cross-checks and cardiothoracic ratio."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import RasterMask


@dataclass(frozen=True)
class CrossCheckResult:
    passed: bool
    reasons: tuple[str, ...] = ()


def _col_extent(m: RasterMask) -> tuple[int, int]:
    cols = np.nonzero(m.pixels.any(axis=0))[0]
    return int(cols.min()), int(cols.max())


def _lowermost_row(m: RasterMask) -> int:
    rows = np.nonzero(m.pixels.any(axis=1))[0]
    return int(rows.max())


def cross_check_masks(
    primary_masks: Mapping[str, RasterMask],
    secondary_masks: Mapping[str, RasterMask],
    rel_tol: float = 0.05,
) -> CrossCheckResult:
    """Compare two providers' organ masks.

    Fails when the outermost x of either lung (image-left edge of the right
    lung, image-right edge of the left lung) differs by more than
    rel_tol × width, or the lowermost y of the heart differs by more than
    rel_tol × height. Keys absent from either side are skipped; empty masks
    fail outright.
    """
    reasons: list[str] = []
    checked = [k for k in ("right_lung", "left_lung", "heart") if k in primary_masks and k in secondary_masks]
    for key in checked:
        for side, m in (("primary", primary_masks[key]), ("secondary", secondary_masks[key])):
            if m.is_empty():
                reasons.append(f"empty mask: {side} {key}")
    if reasons:
        return CrossCheckResult(passed=False, reasons=tuple(reasons))

    for key in checked:
        p, s = primary_masks[key], secondary_masks[key]
        if not p.same_grid(s):
            reasons.append(
                f"{key}: mask dimensions differ: {p.width}x{p.height} vs {s.width}x{s.height}"
            )
            continue
        if key == "heart":
            diff = abs(_lowermost_row(p) - _lowermost_row(s))
            tol = rel_tol * p.height
            if diff > tol:
                reasons.append(f"heart lowermost y differs by {diff} px (tol {tol:.1f})")
        else:
            # right lung: outer edge is the minimum column; left lung: the maximum.
            idx = 0 if key == "right_lung" else 1
            diff = abs(_col_extent(p)[idx] - _col_extent(s)[idx])
            tol = rel_tol * p.width
            if diff > tol:
                reasons.append(f"{key} outermost x differs by {diff} px (tol {tol:.1f})")
    return CrossCheckResult(passed=not reasons, reasons=tuple(reasons))


def compute_ctr(
    lung_r: RasterMask, lung_l: RasterMask, heart: RasterMask
) -> float:
    """Cardiothoracic ratio: heart column span over combined lung column span."""
    for name, m in (("right lung", lung_r), ("left lung", lung_l), ("heart", heart)):
        if m.is_empty():
            raise ValueError(f"compute_ctr: {name} mask is empty")
    h_min, h_max = _col_extent(heart)
    r_min, r_max = _col_extent(lung_r)
    l_min, l_max = _col_extent(lung_l)
    t_min, t_max = min(r_min, l_min), max(r_max, l_max)
    return (h_max - h_min + 1) / (t_max - t_min + 1)
