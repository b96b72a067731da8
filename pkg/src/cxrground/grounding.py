"""Spatial grounding: anomaly map, box filtering, component extraction,
refinement, and location verification.

The box filter keeps a detection only when all four conditions hold:
  c1  IoU(box, union of the finding's anatomy masks) >= tau_anatomy
  c2  detector confidence >= tau_conf
  c3  |box ∩ anomaly set| / |box| >= tau_signal
  c4  IoU(box, right lung) >= tau_size  or  IoU(box, left lung) >= tau_size
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import (
    ALL_LABELS,
    AnatomicalLabel,
    DetectionBox,
    GroundedLesion,
    ImageGray,
    LesionType,
    RasterMask,
    StructuredFinding,
    ThresholdSet,
)
from .raster import (
    box_to_mask,
    connected_components,
    intensity_expand,
    iou,
    mask_union,
    opening,
    overlap_area,
)


@dataclass(frozen=True)
class AnomalyMap:
    """Signed difference field (source − edited)/I_max with its thresholded set."""

    raw: np.ndarray
    tau_ano: float
    thresholded: RasterMask

    def __post_init__(self):
        expected = self.raw >= self.tau_ano
        if not np.array_equal(expected, self.thresholded.pixels):
            raise ValueError("thresholded set inconsistent with raw field and tau_ano")


@dataclass(frozen=True)
class BoxFilterVerdict:
    box_index: int
    c1: bool
    c2: bool
    c3: bool
    c4: bool
    accepted: bool

    def __post_init__(self):
        if self.accepted != (self.c1 and self.c2 and self.c3 and self.c4):
            raise ValueError("accepted must equal c1 ∧ c2 ∧ c3 ∧ c4")


@dataclass(frozen=True)
class RefineConfig:
    """Post-processing knobs; unspecified upstream, calibrated here."""

    noise_iterations: int = 2
    min_area_fraction: float = 0.001
    intensity_delta: float = 10.0
    max_rounds: int = 8
    base_fraction: float = 0.15


def compute_anomaly_map(x: ImageGray, x_edit: ImageGray, tau_ano: float) -> AnomalyMap:
    """raw = (x − x_edit)/I_max; thresholded = {raw >= tau_ano}.

    Negative values (lesion darker than the edit) stay in raw for inspection
    but never enter the thresholded set for tau_ano > 0.
    """
    if not x.same_grid(x_edit) or x.bit_depth != x_edit.bit_depth:
        raise ValueError(
            f"anomaly map inputs differ: {x.width}x{x.height}@{x.bit_depth}bit vs "
            f"{x_edit.width}x{x_edit.height}@{x_edit.bit_depth}bit"
        )
    raw = (x.pixels.astype(np.float64) - x_edit.pixels.astype(np.float64)) / x.i_max
    raw.setflags(write=False)
    return AnomalyMap(raw=raw, tau_ano=tau_ano, thresholded=RasterMask(raw >= tau_ano))


def _anomaly_set(anomaly: AnomalyMap | RasterMask) -> RasterMask:
    return anomaly.thresholded if isinstance(anomaly, AnomalyMap) else anomaly


def filter_boxes(
    boxes: Sequence[DetectionBox],
    anatomy_union: RasterMask,
    anomaly: AnomalyMap | RasterMask,
    lungs: tuple[RasterMask, RasterMask],
    thresholds: ThresholdSet,
) -> list[BoxFilterVerdict]:
    """Evaluate the four acceptance conditions for every detection box."""
    a = _anomaly_set(anomaly)
    lung_r, lung_l = lungs
    verdicts = []
    for j, box in enumerate(boxes):
        bm = box_to_mask(box, a.width, a.height)
        c1 = iou(bm, anatomy_union) >= thresholds.tau_anatomy
        c2 = box.confidence >= thresholds.tau_conf
        c3 = (overlap_area(bm, a) / bm.area) >= thresholds.tau_signal
        c4 = (iou(bm, lung_r) >= thresholds.tau_size) or (
            iou(bm, lung_l) >= thresholds.tau_size
        )
        verdicts.append(
            BoxFilterVerdict(
                box_index=j, c1=c1, c2=c2, c3=c3, c4=c4, accepted=c1 and c2 and c3 and c4
            )
        )
    return verdicts


def extract_lesion_mask(
    accepted_boxes: Sequence[RasterMask],
    anomaly: AnomalyMap | RasterMask,
    refine_fn: Callable[[RasterMask], RasterMask] | None = None,
) -> RasterMask:
    """Union of the anomaly-set components intersecting any accepted box.

    A component intersecting several boxes is refined and included once.
    With refine_fn=None the raw component union is returned.
    """
    a = _anomaly_set(anomaly)
    out = RasterMask.empty(a.width, a.height)
    if not accepted_boxes:
        return out
    acc = np.zeros((a.height, a.width), dtype=bool)
    hit_union = mask_union(accepted_boxes, a.width, a.height)
    for comp in connected_components(a):
        if overlap_area(comp, hit_union) == 0:
            continue
        refined = refine_fn(comp) if refine_fn is not None else comp
        acc |= refined.pixels
    return RasterMask(acc)


def lung_base_band(lung: RasterMask, base_fraction: float) -> RasterMask:
    """Lowest base_fraction of the lung's row span, restricted to the lung mask."""
    if lung.is_empty():
        return lung
    rows = np.nonzero(lung.pixels.any(axis=1))[0]
    top, bottom = int(rows.min()), int(rows.max())
    span = bottom - top + 1
    band_rows = math.ceil(span * base_fraction)
    start = bottom - band_rows + 1
    band = np.zeros_like(lung.pixels)
    band[start : bottom + 1, :] = True
    return RasterMask(band & lung.pixels)


def refine(
    c: RasterMask,
    image: ImageGray,
    lesion: LesionType,
    lungs: tuple[RasterMask, RasterMask],
    cfg: RefineConfig,
) -> RasterMask:
    """Post-process one component: opening, small-residue drop, intensity
    expansion, and (for effusion at a lung base) extension to the base band."""
    lung_r, lung_l = lungs
    result = opening(c, cfg.noise_iterations)

    if not result.is_empty():
        keep = np.zeros_like(result.pixels)
        for comp in connected_components(result):
            r_ov = overlap_area(comp, lung_r)
            l_ov = overlap_area(comp, lung_l)
            if r_ov == 0 and l_ov == 0:
                lung_area = lung_r.area + lung_l.area
            elif r_ov >= l_ov:
                lung_area = lung_r.area
            else:
                lung_area = lung_l.area
            if comp.area >= cfg.min_area_fraction * lung_area:
                keep |= comp.pixels
        result = RasterMask(keep)

    result = intensity_expand(result, image, cfg.intensity_delta, cfg.max_rounds)

    if lesion is LesionType.EFFUSION and not result.is_empty():
        acc = result.pixels.copy()
        for lung in (lung_r, lung_l):
            band = lung_base_band(lung, cfg.base_fraction)
            if not band.is_empty() and overlap_area(result, band) > 0:
                acc |= band.pixels
        result = RasterMask(acc)

    return result


def verify_locations(
    finding: StructuredFinding,
    lesion_mask: RasterMask,
    anatomy_masks: Mapping[AnatomicalLabel, RasterMask],
    all_reported_labels_in_study: frozenset[AnatomicalLabel],
) -> GroundedLesion | None:
    """Confirm grounding and derive empty locations; None when nothing grounds.

    A reported location is grounded when its anatomy mask shares at least one
    pixel with the lesion mask. A label is empty when its anatomy mask overlaps
    no anatomy mask of any reported label of any finding in the study.
    """
    lesion = finding.effective_lesion
    if lesion is None:
        raise ValueError(f"finding {finding.entity!r} has no lesion class to ground")
    grounded = frozenset(
        l
        for l in finding.reported_locations
        if l in anatomy_masks and overlap_area(anatomy_masks[l], lesion_mask) >= 1
    )
    if not grounded:
        return None
    empty = compute_empty_locations(anatomy_masks, all_reported_labels_in_study)
    return GroundedLesion(
        lesion=lesion,
        certainty=finding.certainty,
        mask=lesion_mask,
        reported_locations=finding.reported_locations,
        grounded_locations=grounded,
        empty_locations=empty - finding.reported_locations,
        source_finding_index=finding.sentence_index,
    )


def compute_empty_locations(
    anatomy_masks: Mapping[AnatomicalLabel, RasterMask],
    all_reported_labels_in_study: frozenset[AnatomicalLabel],
) -> frozenset[AnatomicalLabel]:
    """Labels whose anatomy mask overlaps no reported label's anatomy mask.

    Computed against every reported label in the study (all findings, not just
    the seven major lesion classes). Labels with empty anatomy masks never
    qualify.
    """
    some = next(iter(anatomy_masks.values()), None)
    if some is None:
        return frozenset()
    blocked = mask_union(
        [anatomy_masks[l] for l in all_reported_labels_in_study if l in anatomy_masks],
        some.width,
        some.height,
    )
    empty = set()
    for label in ALL_LABELS:
        m = anatomy_masks.get(label)
        if m is None or m.is_empty():
            continue
        if overlap_area(m, blocked) == 0:
            empty.add(label)
    return frozenset(empty) - all_reported_labels_in_study
