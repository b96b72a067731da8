"""Pure pixel-set algebra: ratios, components, morphology, intensity expansion.

All functions are stateless and safe for unlimited parallel invocation.
Connectivity is 8-neighborhood throughout; the image border is background.
"""

from __future__ import annotations

from typing import Iterable, Literal

import numpy as np
from scipy import ndimage

from .core import DetectionBox, ImageGray, RasterMask

_FULL_3X3 = np.ones((3, 3), dtype=bool)


def _require_same_grid(a: RasterMask, b: RasterMask, what: str) -> None:
    if not a.same_grid(b):
        raise ValueError(
            f"{what}: mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def overlap_area(a: RasterMask, b: RasterMask) -> int:
    _require_same_grid(a, b, "overlap_area")
    return int(np.count_nonzero(a.pixels & b.pixels))


def iou(a: RasterMask, b: RasterMask) -> float:
    """|a∩b| / |a∪b|; 0.0 when both masks are empty."""
    _require_same_grid(a, b, "iou")
    inter = int(np.count_nonzero(a.pixels & b.pixels))
    union = int(np.count_nonzero(a.pixels | b.pixels))
    return inter / union if union else 0.0


def containment_ratio(inner: RasterMask, outer: RasterMask) -> float:
    """|inner∩outer| / |inner|."""
    _require_same_grid(inner, outer, "containment_ratio")
    denom = inner.area
    if denom == 0:
        raise ValueError("containment_ratio: inner mask is empty")
    return int(np.count_nonzero(inner.pixels & outer.pixels)) / denom


def mask_union(masks: Iterable[RasterMask], width: int, height: int) -> RasterMask:
    acc = np.zeros((height, width), dtype=bool)
    for m in masks:
        if m.width != width or m.height != height:
            raise ValueError(
                f"mask_union: mask dimensions differ: {m.width}x{m.height} vs {width}x{height}"
            )
        acc |= m.pixels
    return RasterMask(acc)


def connected_components(m: RasterMask) -> list[RasterMask]:
    """Maximal 8-connected components, ordered by topmost-then-leftmost member."""
    if m.is_empty():
        return []
    labels, n = ndimage.label(m.pixels, structure=_FULL_3X3)
    comps = []
    for i in range(1, n + 1):
        comp = labels == i
        rows, cols = np.nonzero(comp)
        top = rows.min()
        left = cols[rows == top].min()
        comps.append(((int(top), int(left)), RasterMask(comp)))
    comps.sort(key=lambda item: item[0])
    return [c for _, c in comps]


def morph(
    m: RasterMask, kind: Literal["erode", "dilate"], iterations: int
) -> RasterMask:
    """Binary morphology with the full 3×3 structuring element.

    iterations = 0 is identity; out-of-grid pixels count as background.
    """
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations}")
    if iterations == 0 or m.is_empty():
        return m
    if kind == "erode":
        out = ndimage.binary_erosion(
            m.pixels, structure=_FULL_3X3, iterations=iterations, border_value=0
        )
    elif kind == "dilate":
        out = ndimage.binary_dilation(
            m.pixels, structure=_FULL_3X3, iterations=iterations, border_value=0
        )
    else:
        raise ValueError(f"unknown morphology kind: {kind!r}")
    return RasterMask(out)


def opening(m: RasterMask, iterations: int) -> RasterMask:
    return morph(morph(m, "erode", iterations), "dilate", iterations)


def intensity_expand(
    m: RasterMask, image: ImageGray, delta: float, max_rounds: int
) -> RasterMask:
    """Grow the mask into 8-adjacent pixels of similar intensity.

    Each round adds non-members adjacent to the mask whose intensity differs
    from the mean intensity of the *current* members by at most delta; the
    mean is recomputed every round. Stops at a fixpoint or after max_rounds.
    """
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    if m.width != image.width or m.height != image.height:
        raise ValueError(
            f"intensity_expand: mask is {m.width}x{m.height}, "
            f"image is {image.width}x{image.height}"
        )
    if m.is_empty() or max_rounds <= 0:
        return m
    current = m.pixels.copy()
    intens = image.pixels.astype(np.float64)
    for _ in range(max_rounds):
        mean = intens[current].mean()
        ring = ndimage.binary_dilation(current, structure=_FULL_3X3) & ~current
        add = ring & (np.abs(intens - mean) <= delta)
        if not add.any():
            break
        current |= add
    return RasterMask(current)


def box_to_mask(box: DetectionBox, width: int, height: int) -> RasterMask:
    """Rasterize the inclusive rectangle enclosed by a bounding box."""
    box.check_bounds(width, height)
    arr = np.zeros((height, width), dtype=bool)
    arr[box.y_min : box.y_max + 1, box.x_min : box.x_max + 1] = True
    return RasterMask(arr)
