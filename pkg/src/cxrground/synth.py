"""Synthetic studies with known ground truth.

A phantom thorax: two lung rectangles (each split into four equal-height zone
bands), a heart rectangle sized by a target cardiothoracic ratio, and a smooth
vertical background gradient so intensity-guided expansion is exercised
non-trivially. Lesions are injected as intensity bumps; the edited image is
the bare background, so the difference image recovers each lesion exactly.
Reports are composed from the constrained grammar; detections are the blob
bounding boxes with optional jitter and confidence noise.

Blob sizes are calibrated against the box-filter thresholds so that a
zero-jitter corpus grounds every placement exactly; see build_corpus.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import (
    ALL_LESIONS,
    INFERENCE_LESIONS,
    ZONE_LABELS,
    AnatomicalLabel,
    Certainty,
    DetectionBox,
    ImageGray,
    LesionType,
    ProviderArtifacts,
    RasterMask,
    Split,
    Study,
    sort_labels,
)
from .storage import (
    atomic_write_json,
    atomic_write_text,
    mask_filename,
    save_detections,
    save_image_png,
    save_mask_png,
    write_manifest,
)


class SynthSpecError(ValueError):
    """The requested placements cannot yield an unambiguous oracle."""


@dataclass(frozen=True)
class LesionPlacement:
    lesion: LesionType
    zones: tuple[AnatomicalLabel, ...] = ()
    shape: str = "ellipse"  # "ellipse" or "rect"
    delta: int = 60
    certainty: Certainty = Certainty.DEFINITIVE
    confidence: float = 0.9
    via_opacity: bool = False  # report as "The <zone> opacity is <lesion>."


@dataclass(frozen=True)
class DetectorNoise:
    box_jitter: int = 0
    confidence_noise: float = 0.0
    false_positives: int = 0


@dataclass(frozen=True)
class SyntheticStudySpec:
    study_id: str
    placements: tuple[LesionPlacement, ...] = ()
    width: int = 96
    height: int = 96
    detector: DetectorNoise = field(default_factory=DetectorNoise)
    seed: int = 0
    split: Split = Split.TRAIN
    ctr: float = 0.40
    negated: tuple[LesionType, ...] = ()
    distractors: tuple[tuple[str, AnatomicalLabel], ...] = ()
    corrupt_secondary_heart: bool = False  # force a QC cross-check failure


@dataclass(frozen=True)
class Rect:
    """Half-open [r0, r1) × [c0, c1) rectangle."""

    r0: int
    r1: int
    c0: int
    c1: int

    def mask(self, width: int, height: int) -> RasterMask:
        arr = np.zeros((height, width), dtype=bool)
        arr[self.r0 : self.r1, self.c0 : self.c1] = True
        return RasterMask(arr)

    def intersects(self, other: "Rect") -> bool:
        return not (
            self.r1 <= other.r0
            or other.r1 <= self.r0
            or self.c1 <= other.c0
            or other.c1 <= self.c0
        )


@dataclass(frozen=True)
class PhantomGeometry:
    width: int
    height: int
    lung_r: Rect
    lung_l: Rect
    heart: Rect
    zones: dict[AnatomicalLabel, Rect]

    def lung_for(self, label: AnatomicalLabel) -> Rect:
        return self.lung_r if label.value.startswith("right") else self.lung_l


def build_geometry(width: int, height: int, ctr: float) -> PhantomGeometry:
    margin_x = round(width / 16)
    lung_w = round(width * 0.28)
    r0, r1 = round(height * 0.10), round(height * 0.90)
    lung_r = Rect(r0, r1, margin_x, margin_x + lung_w)
    lung_l = Rect(r0, r1, width - margin_x - lung_w, width - margin_x)

    thorax_span = lung_l.c1 - lung_r.c0
    heart_w = max(4, round(ctr * thorax_span))
    heart_c0 = (width - heart_w) // 2
    heart = Rect(round(height * 0.45), r1, heart_c0, heart_c0 + heart_w)

    span = r1 - r0
    edges = [r0 + round(k * span / 4) for k in range(5)]
    zones: dict[AnatomicalLabel, Rect] = {
        AnatomicalLabel.RIGHT_LUNG: lung_r,
        AnatomicalLabel.LEFT_LUNG: lung_l,
    }
    zone_rows = list(zip(edges[:-1], edges[1:]))
    for lung, labels in (
        (lung_r, (AnatomicalLabel.RIGHT_APICAL, AnatomicalLabel.RIGHT_UPPER,
                  AnatomicalLabel.RIGHT_MID, AnatomicalLabel.RIGHT_BASE)),
        (lung_l, (AnatomicalLabel.LEFT_APICAL, AnatomicalLabel.LEFT_UPPER,
                  AnatomicalLabel.LEFT_MID, AnatomicalLabel.LEFT_BASE)),
    ):
        for label, (zr0, zr1) in zip(labels, zone_rows):
            zones[label] = Rect(zr0, zr1, lung.c0, lung.c1)
    return PhantomGeometry(width, height, lung_r, lung_l, heart, zones)


_ROW_MARGIN = 3
_COL_MARGIN = 2
_BASE_FRACTION = 0.15  # must mirror the refine default for exact recovery


def _ellipse(arr: np.ndarray, cy: int, cx: int, ry: int, rx: int) -> None:
    rows = np.arange(arr.shape[0])[:, None]
    cols = np.arange(arr.shape[1])[None, :]
    arr |= ((rows - cy) * rx) ** 2 + ((cols - cx) * ry) ** 2 <= (rx * ry) ** 2


def _blob_in_rect(arr: np.ndarray, rect: Rect, shape: str, ry: int, rx: int) -> None:
    cy = (rect.r0 + rect.r1 - 1) // 2
    cx = (rect.c0 + rect.c1 - 1) // 2
    if shape == "rect":
        arr[cy - ry : cy + ry + 1, cx - rx : cx + rx + 1] = True
    else:
        _ellipse(arr, cy, cx, ry, rx)


def max_blob_radii(geom: PhantomGeometry, zone: AnatomicalLabel) -> tuple[int, int]:
    """Largest (ry, rx) that keeps a blob _ROW_MARGIN/_COL_MARGIN inside its zone."""
    rect = geom.zones[zone]
    ry = (rect.r1 - rect.r0 - 2 * _ROW_MARGIN - 1) // 2
    rx = (rect.c1 - rect.c0 - 2 * _COL_MARGIN - 1) // 2
    return ry, rx


def placement_mask(
    geom: PhantomGeometry, placement: LesionPlacement, radii: dict | None = None
) -> RasterMask:
    """Injected pixel set for one placement (one blob per named zone).

    Broad lung labels place the blob across the middle two zone bands.
    Effusion blobs in a base zone are unioned with the lowest base fraction of
    that lung so the injected truth includes the costophrenic pool.
    """
    arr = np.zeros((geom.height, geom.width), dtype=bool)
    for zone in placement.zones:
        rect = geom.zones[zone]
        if zone in (AnatomicalLabel.RIGHT_LUNG, AnatomicalLabel.LEFT_LUNG):
            span = rect.r1 - rect.r0
            band = span // 4
            inner = Rect(rect.r0 + band + _ROW_MARGIN, rect.r1 - band - _ROW_MARGIN,
                         rect.c0, rect.c1)
            ry = (inner.r1 - inner.r0 - 1) // 2
            rx = (rect.c1 - rect.c0 - 2 * _COL_MARGIN - 1) // 2
            _blob_in_rect(arr, inner, placement.shape, ry, rx)
        else:
            ry_max, rx_max = max_blob_radii(geom, zone)
            ry, rx = (radii or {}).get(zone, (ry_max, rx_max))
            _blob_in_rect(arr, rect, placement.shape, ry, rx)
        if placement.lesion is LesionType.EFFUSION and zone in (
            AnatomicalLabel.RIGHT_BASE,
            AnatomicalLabel.LEFT_BASE,
        ):
            lung = geom.lung_for(zone)
            wedge_rows = math.ceil((lung.r1 - lung.r0) * _BASE_FRACTION)
            arr[lung.r1 - wedge_rows : lung.r1, lung.c0 : lung.c1] = True
    return RasterMask(arr)


def _touching(a: RasterMask, b: RasterMask) -> bool:
    from scipy import ndimage

    grown = ndimage.binary_dilation(a.pixels, structure=np.ones((3, 3), dtype=bool))
    return bool((grown & b.pixels).any())


def _report_sentences(spec: SyntheticStudySpec, rng: random.Random) -> tuple[list[str], list[int]]:
    """Compose the report; returns sentences plus the placement sentence indices."""
    sentences: list[str] = []
    placement_idx: list[int] = []
    for p in spec.placements:
        if p.lesion is LesionType.CARDIOMEGALY:
            text = "Cardiomegaly" if p.certainty is Certainty.DEFINITIVE else "Possibly cardiomegaly"
        elif p.via_opacity and len(p.zones) == 1:
            zone = p.zones[0].value
            if p.certainty is Certainty.DEFINITIVE:
                text = f"The {zone} opacity is {p.lesion.value}"
            else:
                text = f"The {zone} opacity may represent {p.lesion.value}"
        else:
            ordered = sort_labels(p.zones)
            phrase = " and ".join(z.value for z in ordered)
            bases = {AnatomicalLabel.RIGHT_BASE, AnatomicalLabel.LEFT_BASE}
            if set(p.zones) == bases and rng.random() < 0.5:
                text = f"Bibasilar {p.lesion.value}"
            elif len(p.zones) == 1 and rng.random() < 0.3:
                text = f"{p.zones[0].value} {p.lesion.value}"
            else:
                text = f"{p.lesion.value} in the {phrase}"
            if p.certainty is Certainty.TENTATIVE:
                text = f"Possibly {text[0].lower() + text[1:]}"
        placement_idx.append(len(sentences) + 1)
        sentences.append(text[0].upper() + text[1:] + ".")
    for lesion in spec.negated:
        sentences.append(f"No {lesion.value}.")
    for entity, zone in spec.distractors:
        sentences.append(f"{entity.capitalize()} in the {zone.value}.")
    if not sentences:
        sentences.append("No acute findings.")
    return sentences, placement_idx


def _jittered_box(
    bbox: tuple[int, int, int, int],
    label: str,
    confidence: float,
    noise: DetectorNoise,
    rng: random.Random,
    width: int,
    height: int,
) -> DetectionBox:
    x0, y0, x1, y1 = bbox
    j = noise.box_jitter
    if j:
        x0j, x1j = x0 + rng.randint(-j, j), x1 + rng.randint(-j, j)
        y0j, y1j = y0 + rng.randint(-j, j), y1 + rng.randint(-j, j)
        x0, x1 = sorted((x0j, x1j))
        y0, y1 = sorted((y0j, y1j))
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(width - 1, x1), min(height - 1, y1)
    conf = confidence
    if noise.confidence_noise:
        conf += rng.uniform(-noise.confidence_noise, noise.confidence_noise)
    return DetectionBox(
        label=label,
        confidence=min(1.0, max(0.01, conf)),
        x_min=x0,
        y_min=y0,
        x_max=x1,
        y_max=y1,
    )


def _mask_bbox(m: RasterMask) -> tuple[int, int, int, int]:
    rows, cols = np.nonzero(m.pixels)
    return int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max())


def _expected_empty(
    geom: PhantomGeometry, reported: Iterable[AnatomicalLabel]
) -> list[str]:
    """Zero-overlap labels computed with plain rectangle arithmetic."""
    reported = list(reported)
    empty = []
    for label in AnatomicalLabel:
        if label in reported:
            continue
        rect = geom.zones[label]
        if not any(rect.intersects(geom.zones[r]) for r in reported):
            empty.append(label.value)
    return empty


def make_study(spec: SyntheticStudySpec, root: str | Path) -> tuple[Study, dict]:
    """Write all study artifacts under root; return the manifest record and
    the oracle truth (also written to oracle/<study_id>.json)."""
    root = Path(root)
    rng = random.Random(f"{spec.seed}|{spec.study_id}")
    geom = build_geometry(spec.width, spec.height, spec.ctr)
    sid = spec.study_id

    # Per-placement injected masks, with the ambiguity guard.
    masks: list[RasterMask] = []
    for p in spec.placements:
        if p.lesion is LesionType.CARDIOMEGALY:
            if p.zones:
                raise SynthSpecError("cardiomegaly placements take no zones")
            masks.append(geom.heart.mask(spec.width, spec.height))
            continue
        if not p.zones:
            raise SynthSpecError(f"{p.lesion.value} placement needs at least one zone")
        if p.delta < 0:
            raise SynthSpecError("delta must be >= 0")
        masks.append(placement_mask(geom, p))
    blob_placements = [
        (p, m) for p, m in zip(spec.placements, masks)
        if p.lesion is not LesionType.CARDIOMEGALY
    ]
    for i, (pa, ma) in enumerate(blob_placements):
        for pb, mb in blob_placements[i + 1 :]:
            if _touching(ma, mb):
                raise SynthSpecError(
                    f"placements {pa.lesion.value} and {pb.lesion.value} merge; "
                    "the oracle would be ambiguous"
                )

    # Image = gradient background + intensity bumps; edit = background.
    rows = np.arange(spec.height, dtype=np.float64)[:, None]
    background = np.round(40.0 + 40.0 * rows / (spec.height - 1)).astype(np.int64)
    background = np.broadcast_to(background, (spec.height, spec.width)).copy()
    image = background.copy()
    for p, m in blob_placements:
        image[m.pixels] += p.delta
    image = np.clip(image, 0, 255)
    x = ImageGray(image.astype(np.uint8))
    x_edit = ImageGray(background.astype(np.uint8))

    save_image_png(x, root / "images" / f"{sid}.png")
    save_image_png(x_edit, root / "edits" / f"{sid}.png")

    organ_dir = root / "organs" / sid
    organ_masks = {
        "right_lung": geom.lung_r.mask(spec.width, spec.height),
        "left_lung": geom.lung_l.mask(spec.width, spec.height),
        "heart": geom.heart.mask(spec.width, spec.height),
    }
    for key, m in organ_masks.items():
        save_mask_png(m, organ_dir / f"{key}.png")

    anatomy_dir = root / "anatomy" / sid
    for label, rect in geom.zones.items():
        save_mask_png(rect.mask(spec.width, spec.height), anatomy_dir / mask_filename(label))
    secondary_heart = geom.heart
    if spec.corrupt_secondary_heart:
        shift = round(0.2 * spec.height)
        secondary_heart = Rect(
            max(0, geom.heart.r0 - shift), max(1, geom.heart.r1 - shift),
            geom.heart.c0, geom.heart.c1,
        )
    save_mask_png(secondary_heart.mask(spec.width, spec.height), anatomy_dir / "heart.png")

    boxes: list[DetectionBox] = []
    for p, m in blob_placements:
        for zone in p.zones:
            zone_rect = geom.zones[zone]
            zone_mask = zone_rect.mask(spec.width, spec.height)
            part = RasterMask(m.pixels & zone_mask.pixels)
            if part.is_empty():
                continue
            boxes.append(
                _jittered_box(
                    _mask_bbox(part), p.lesion.value, p.confidence,
                    spec.detector, rng, spec.width, spec.height,
                )
            )
    for _ in range(spec.detector.false_positives):
        # Spurious low-confidence detections in the inter-lung gap.
        gap_c0, gap_c1 = geom.lung_r.c1 + 1, geom.lung_l.c0 - 1
        cx = rng.randint(gap_c0 + 3, gap_c1 - 3)
        cy = rng.randint(geom.lung_r.r0 + 3, geom.heart.r0 - 3)
        boxes.append(
            DetectionBox(
                label="other", confidence=round(rng.uniform(0.05, 0.15), 3),
                x_min=cx - 3, y_min=cy - 3, x_max=cx + 3, y_max=cy + 3,
            )
        )
    save_detections(boxes, root / "detections" / f"{sid}.json")

    sentences, placement_idx = _report_sentences(spec, rng)
    atomic_write_text(root / "reports" / f"{sid}.txt", " ".join(sentences) + "\n")

    # Oracle truth: per-placement masks and the rule walk for expected pairs.
    truth_lesions = []
    reported_labels: set[AnatomicalLabel] = set()
    for (p, m), sentence_index in zip(
        [(p, m) for p, m in zip(spec.placements, masks)], placement_idx
    ):
        mask_rel = f"oracle/masks/{sid}__f{sentence_index}.png"
        save_mask_png(m, root / mask_rel)
        reported_labels.update(p.zones)
        truth_lesions.append(
            {
                "sentence_index": sentence_index,
                "lesion": p.lesion.value,
                "certainty": p.certainty.value,
                "zones": [z.value for z in sort_labels(p.zones)],
                "mask_path": mask_rel,
                "expect_basic": p.lesion is not LesionType.CARDIOMEGALY,
                "expect_global": True,
                "expect_inference": p.lesion in INFERENCE_LESIONS,
            }
        )
    reported_labels.update(z for _, z in spec.distractors)

    thorax_span = geom.lung_l.c1 - geom.lung_r.c0
    truth = {
        "study_id": sid,
        "split": spec.split.value,
        "seed": spec.seed,
        "ctr_nominal": spec.ctr,
        "ctr_exact": (geom.heart.c1 - geom.heart.c0) / thorax_span,
        "lesions": truth_lesions,
        "expected_empty_locations": _expected_empty(geom, reported_labels),
        "negated": [l.value for l in spec.negated],
        "distractors": [[e, z.value] for e, z in spec.distractors],
    }
    atomic_write_json(root / "oracle" / f"{sid}.json", truth)

    study = Study(
        study_id=sid,
        image=f"images/{sid}.png",
        report=f"reports/{sid}.txt",
        split=spec.split,
        provider_artifacts=ProviderArtifacts(
            edited_image=f"edits/{sid}.png",
            anatomy_mask_directory=f"anatomy/{sid}",
            detections_file=f"detections/{sid}.json",
            organ_masks={
                "right_lung": f"organs/{sid}/right_lung.png",
                "left_lung": f"organs/{sid}/left_lung.png",
                "heart": f"organs/{sid}/heart.png",
            },
        ),
    )
    return study, truth


# --- corpus generation ----------------------------------------------------------

_ZONE_SLOTS = {
    "right": (AnatomicalLabel.RIGHT_APICAL, AnatomicalLabel.RIGHT_UPPER,
              AnatomicalLabel.RIGHT_MID, AnatomicalLabel.RIGHT_BASE),
    "left": (AnatomicalLabel.LEFT_APICAL, AnatomicalLabel.LEFT_UPPER,
             AnatomicalLabel.LEFT_MID, AnatomicalLabel.LEFT_BASE),
}


def _draw_placements(rng: random.Random) -> tuple[list[LesionPlacement], float]:
    free: set[AnatomicalLabel] = {z for side in _ZONE_SLOTS.values() for z in side}
    broad_used: set[str] = set()
    placements: list[LesionPlacement] = []
    ctr = round(rng.uniform(0.32, 0.43), 3)
    n = rng.choice([0, 1, 1, 1, 2, 2, 3])
    lesions = rng.sample(ALL_LESIONS, k=len(ALL_LESIONS))
    for lesion in lesions:
        if len(placements) >= n:
            break
        certainty = Certainty.TENTATIVE if rng.random() < 0.2 else Certainty.DEFINITIVE
        if lesion is LesionType.CARDIOMEGALY:
            ctr = round(rng.uniform(0.50, 0.62), 3)
            placements.append(LesionPlacement(lesion=lesion, certainty=certainty))
            continue
        if lesion is LesionType.EDEMA:
            delta = rng.randint(15, 22)
            confidence = round(rng.uniform(0.05, 0.15), 3) if rng.random() < 0.5 else round(rng.uniform(0.5, 0.95), 3)
        else:
            delta = rng.randint(45, 95)
            confidence = round(rng.uniform(0.5, 0.95), 3)

        if lesion is LesionType.EDEMA and rng.random() < 0.4:
            # Widespread edema: a whole-lung placement on a side with all zones free.
            sides = [s for s, zs in _ZONE_SLOTS.items()
                     if s not in broad_used and all(z in free for z in zs[1:3])]
            if sides:
                side = rng.choice(sides)
                broad_used.add(side)
                free -= set(_ZONE_SLOTS[side][1:3])
                label = AnatomicalLabel.RIGHT_LUNG if side == "right" else AnatomicalLabel.LEFT_LUNG
                # A tall blob spans ~13 intensity units of background gradient;
                # keep the bump clear of the expansion delta at the blob floor
                # yet still under the general anomaly threshold (0.10 * 255).
                placements.append(LesionPlacement(
                    lesion=lesion, zones=(label,), delta=rng.randint(20, 24),
                    certainty=certainty, confidence=confidence,
                ))
                continue

        if lesion is LesionType.EFFUSION:
            zone_pool = [z for z in (AnatomicalLabel.RIGHT_BASE, AnatomicalLabel.LEFT_BASE) if z in free]
            if not zone_pool:
                zone_pool = sorted(free, key=list(AnatomicalLabel).index)
        else:
            zone_pool = sorted(free, key=list(AnatomicalLabel).index)
        if not zone_pool:
            continue
        zones: tuple[AnatomicalLabel, ...]
        both_bases = (AnatomicalLabel.RIGHT_BASE, AnatomicalLabel.LEFT_BASE)
        if (
            lesion in (LesionType.ATELECTASIS, LesionType.EFFUSION)
            and all(z in free for z in both_bases)
            and rng.random() < 0.25
        ):
            zones = both_bases
        else:
            zones = (rng.choice(zone_pool),)
        free -= set(zones)
        via_opacity = (
            lesion in INFERENCE_LESIONS and len(zones) == 1 and rng.random() < 0.25
        )
        placements.append(LesionPlacement(
            lesion=lesion, zones=zones, delta=delta, certainty=certainty,
            confidence=confidence, via_opacity=via_opacity,
        ))
    return placements, ctr


_DISTRACTOR_ENTITIES = ("scarring", "granuloma", "nodule")


def corpus_spec(
    study_id: str,
    rng: random.Random,
    size: int = 96,
    jitter: int = 0,
    conf_noise: float = 0.0,
    split: Split = Split.TRAIN,
    seed: int = 0,
) -> SyntheticStudySpec:
    placements, ctr = _draw_placements(rng)
    used = {z for p in placements for z in p.zones}
    negated = tuple(
        lesion
        for lesion in rng.sample(ALL_LESIONS, k=2)
        if all(p.lesion is not lesion for p in placements)
    )[: rng.randint(0, 2)]
    distractors: tuple[tuple[str, AnatomicalLabel], ...] = ()
    free_zones = [z for z in ZONE_LABELS if z not in used]
    if free_zones and rng.random() < 0.15:
        distractors = ((rng.choice(_DISTRACTOR_ENTITIES), rng.choice(free_zones)),)
    fp = rng.choice([0, 0, 0, 1]) if jitter else 0
    return SyntheticStudySpec(
        study_id=study_id,
        placements=tuple(placements),
        width=size,
        height=size,
        detector=DetectorNoise(
            box_jitter=jitter, confidence_noise=conf_noise, false_positives=fp
        ),
        seed=seed,
        split=split,
        ctr=ctr,
        negated=negated,
        distractors=distractors,
    )


def build_corpus(
    root: str | Path,
    n_studies: int,
    seed: int = 0,
    jitter: int = 0,
    conf_noise: float = 0.0,
    size: int = 96,
) -> Path:
    """Generate a deterministic corpus; returns the manifest path."""
    root = Path(root)
    studies = []
    splits = [Split.TRAIN] * 7 + [Split.VALIDATION] + [Split.TEST] * 2
    for i in range(n_studies):
        sid = f"synth{i:04d}"
        rng = random.Random(f"{seed}|{sid}")
        spec = corpus_spec(
            sid, rng, size=size, jitter=jitter, conf_noise=conf_noise,
            split=splits[i % len(splits)], seed=seed,
        )
        study, _ = make_study(spec, root)
        studies.append(study)
    manifest = root / "manifest.jsonl"
    write_manifest(studies, manifest)
    return manifest
