"""File formats: mask/image PNGs, detection JSON, study manifests, JSONL."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from PIL import Image

from .core import (
    ALL_LABELS,
    AnatomicalLabel,
    DetectionBox,
    ImageGray,
    RasterMask,
    Study,
    study_from_dict,
    study_to_dict,
)


def save_mask_png(mask: RasterMask, path: str | Path) -> None:
    """8-bit grayscale PNG; nonzero = member pixel."""
    arr = (mask.pixels.astype(np.uint8)) * 255
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_mask_png(path: str | Path) -> RasterMask:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return RasterMask(arr != 0)


def save_image_png(image: ImageGray, path: str | Path) -> None:
    if image.bit_depth != 8:
        raise ValueError(f"PNG pipeline inputs are 8-bit, got bit_depth={image.bit_depth}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image.pixels, mode="L").save(path, format="PNG")


def load_image_png(path: str | Path) -> ImageGray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return ImageGray(arr, bit_depth=8)


def save_detections(boxes: Iterable[DetectionBox], path: str | Path) -> None:
    records = [
        {
            "label": b.label,
            "confidence": b.confidence,
            "bbox": [b.x_min, b.y_min, b.x_max, b.y_max],
        }
        for b in boxes
    ]
    atomic_write_text(path, json.dumps(records, indent=1) + "\n")


def load_detections(path: str | Path, width: int, height: int) -> list[DetectionBox]:
    """Parse the detections JSON array and validate each box against the image."""
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise ValueError(f"{path}: detections file must hold a JSON array")
    boxes = []
    for i, rec in enumerate(records):
        try:
            x_min, y_min, x_max, y_max = (int(v) for v in rec["bbox"])
            box = DetectionBox(
                label=str(rec["label"]),
                confidence=float(rec["confidence"]),
                x_min=x_min,
                y_min=y_min,
                x_max=x_max,
                y_max=y_max,
            )
            box.check_bounds(width, height)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: detection record {i}: {exc}") from exc
        boxes.append(box)
    return boxes


def mask_filename(label: AnatomicalLabel) -> str:
    return label.value.replace(" ", "_") + ".png"


def load_anatomy_masks(
    directory: str | Path, width: int, height: int
) -> dict[AnatomicalLabel, RasterMask]:
    """Per-label masks from a directory; a missing file yields an empty mask."""
    directory = Path(directory)
    masks = {}
    for label in ALL_LABELS:
        p = directory / mask_filename(label)
        if p.exists():
            m = load_mask_png(p)
            if m.width != width or m.height != height:
                raise ValueError(
                    f"{p}: anatomy mask is {m.width}x{m.height}, image is {width}x{height}"
                )
            masks[label] = m
        else:
            masks[label] = RasterMask.empty(width, height)
    return masks


def read_manifest(path: str | Path) -> list[Study]:
    studies = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                studies.append(study_from_dict(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest record: {exc}") from exc
    return studies


def write_manifest(studies: Iterable[Study], path: str | Path) -> None:
    lines = [json.dumps(study_to_dict(s), sort_keys=True) for s in studies]
    atomic_write_text(path, "".join(l + "\n" for l in lines))


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write-then-rename so partially written files never appear."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def atomic_write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    atomic_write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def validate_study(study: Study, root: str | Path) -> list[str]:
    """Check that every declared artifact exists, parses, and agrees on size.

    Returns an empty list iff the study is usable.
    """
    root = Path(root)
    violations: list[str] = []

    def resolve(rel: str) -> Path:
        return root / rel

    image = None
    p = resolve(study.image)
    if not p.exists():
        violations.append(f"image missing: {p}")
    else:
        try:
            image = load_image_png(p)
        except Exception as exc:  # unreadable file
            violations.append(f"image unreadable: {p}: {exc}")

    if not resolve(study.report).exists():
        violations.append(f"report missing: {resolve(study.report)}")

    arts = study.provider_artifacts
    p = resolve(arts.edited_image)
    if not p.exists():
        violations.append(f"edited image missing: {p}")
    elif image is not None:
        try:
            edited = load_image_png(p)
            if not edited.same_grid(image):
                violations.append(
                    f"edited image is {edited.width}x{edited.height}, "
                    f"source is {image.width}x{image.height}"
                )
        except Exception as exc:
            violations.append(f"edited image unreadable: {p}: {exc}")

    p = resolve(arts.detections_file)
    if not p.exists():
        violations.append(f"detections file missing: {p}")
    elif image is not None:
        try:
            load_detections(p, image.width, image.height)
        except ValueError as exc:
            violations.append(str(exc))

    for key in ("right_lung", "left_lung", "heart"):
        rel = arts.organ_masks.get(key)
        if rel is None:
            violations.append(f"organ mask entry missing: {key}")
            continue
        p = resolve(rel)
        if not p.exists():
            violations.append(f"organ mask missing: {p}")
            continue
        try:
            m = load_mask_png(p)
        except Exception as exc:
            violations.append(f"organ mask unreadable: {p}: {exc}")
            continue
        if image is not None and (m.width != image.width or m.height != image.height):
            violations.append(
                f"organ mask {key} is {m.width}x{m.height}, "
                f"image is {image.width}x{image.height}"
            )
        if m.is_empty():
            violations.append(f"organ mask empty: {key}")

    adir = resolve(arts.anatomy_mask_directory)
    if not adir.is_dir():
        violations.append(f"anatomy mask directory missing: {adir}")
    elif image is not None:
        try:
            load_anatomy_masks(adir, image.width, image.height)
        except ValueError as exc:
            violations.append(str(exc))

    return violations
