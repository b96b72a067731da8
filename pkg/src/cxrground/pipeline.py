"""Batch orchestration: QC gate, per-study grounding, pair generation,
deterministic aggregation, and overlay rendering.

Each study is processed independently (pure given its artifacts and the
config), so the worker pool can be any size without changing the output:
per-study records land in records/<study_id>.json, and every aggregate file
is rebuilt from those records in canonical order at the end of the run.
A failed study is quarantined without aborting the run; rerunning over a
partially written output directory resumes from the existing records.
"""

from __future__ import annotations

import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .config import PipelineConfig, config_from_dict, config_to_dict
from .core import (
    AnatomicalLabel,
    sort_labels,
    Certainty,
    GroundedLesion,
    ImageGray,
    LesionType,
    Presence,
    RasterMask,
    Study,
    finding_from_dict,
    finding_to_dict,
    pair_from_dict,
    pair_to_dict,
    study_from_dict,
    study_to_dict,
)
from .grounding import (
    compute_anomaly_map,
    compute_empty_locations,
    extract_lesion_mask,
    filter_boxes,
    refine,
    verify_locations,
)
from .pairgen import generate_study_pairs, pair_stats, render_stats_table
from .qc import compute_ctr, cross_check_masks
from .raster import box_to_mask, opening
from .reports import LocationLexicon, default_lexicon, structure_report
from .storage import (
    atomic_write_json,
    load_anatomy_masks,
    load_detections,
    load_image_png,
    load_mask_png,
    read_manifest,
    save_mask_png,
    validate_study,
    write_jsonl,
)


@dataclass
class StudyBundle:
    """All per-study inputs loaded into memory."""

    study: Study
    image: ImageGray
    edited: ImageGray
    report_text: str
    anatomy: dict[AnatomicalLabel, RasterMask]
    organs: dict[str, RasterMask]
    detections: list


def load_study_bundle(study: Study, root: Path) -> StudyBundle:
    image = load_image_png(root / study.image)
    edited = load_image_png(root / study.provider_artifacts.edited_image)
    report_text = (root / study.report).read_text(encoding="utf-8")
    anatomy = load_anatomy_masks(
        root / study.provider_artifacts.anatomy_mask_directory, image.width, image.height
    )
    organs = {
        key: load_mask_png(root / rel)
        for key, rel in study.provider_artifacts.organ_masks.items()
    }
    detections = load_detections(
        root / study.provider_artifacts.detections_file, image.width, image.height
    )
    return StudyBundle(study, image, edited, report_text, anatomy, organs, detections)


def ground_study(
    bundle: StudyBundle,
    config: PipelineConfig,
    lexicon: LocationLexicon | None = None,
) -> dict:
    """Structure the report and ground every positive major-lesion finding.

    Returns the per-study grounding record with in-memory masks attached
    under the "_masks" key (stripped before serialization).
    """
    structured = structure_report(bundle.report_text, lexicon or default_lexicon())
    findings = structured.findings
    reported_all = frozenset(
        l
        for f in findings
        if f.presence is Presence.POSITIVE
        for l in f.reported_locations
    )
    empty = compute_empty_locations(bundle.anatomy, reported_all)
    lungs = (bundle.organs["right_lung"], bundle.organs["left_lung"])
    heart = bundle.organs["heart"]

    record_lesions = []
    masks: dict[int, RasterMask] = {}
    anomaly_cache: dict[float, object] = {}

    for finding in findings:
        if finding.presence is not Presence.POSITIVE:
            continue
        lesion = finding.effective_lesion
        if lesion is None:
            continue  # non-major entity: counts for empty locations only

        entry = {
            "finding_index": finding.sentence_index,
            "lesion": lesion.value,
            "certainty": finding.certainty.value,
            "reported": [l.value for l in sort_labels(finding.reported_locations)],
            "verdicts": [],
            "rejected": False,
            "grounded": [],
            "empty": [],
        }

        if lesion is LesionType.CARDIOMEGALY:
            grounded = GroundedLesion(
                lesion=lesion,
                certainty=finding.certainty,
                mask=heart,
                reported_locations=finding.reported_locations,
                grounded_locations=finding.reported_locations,
                empty_locations=empty - finding.reported_locations,
                source_finding_index=finding.sentence_index,
            )
        else:
            thresholds = config.thresholds_for(lesion)
            if thresholds.tau_ano not in anomaly_cache:
                anomaly_cache[thresholds.tau_ano] = compute_anomaly_map(
                    bundle.image, bundle.edited, thresholds.tau_ano
                )
            anomaly = anomaly_cache[thresholds.tau_ano]
            # Noise removal runs on A before filtering as well as inside refine.
            a_clean = opening(anomaly.thresholded, config.refine.noise_iterations)
            anatomy_union = _union_for(finding.reported_locations, bundle.anatomy)
            verdicts = filter_boxes(
                bundle.detections, anatomy_union, a_clean, lungs, thresholds
            )
            entry["verdicts"] = [
                {
                    "box_index": v.box_index,
                    "c1": v.c1,
                    "c2": v.c2,
                    "c3": v.c3,
                    "c4": v.c4,
                    "accepted": v.accepted,
                }
                for v in verdicts
            ]
            accepted = [
                box_to_mask(bundle.detections[v.box_index], bundle.image.width, bundle.image.height)
                for v in verdicts
                if v.accepted
            ]
            mask = extract_lesion_mask(
                accepted,
                a_clean,
                refine_fn=lambda c: refine(c, bundle.image, lesion, lungs, config.refine),
            )
            grounded = (
                verify_locations(finding, mask, bundle.anatomy, reported_all)
                if not mask.is_empty()
                else None
            )

        if grounded is None:
            entry["rejected"] = True
        else:
            entry["grounded"] = [l.value for l in sort_labels(grounded.grounded_locations)]
            entry["empty"] = [l.value for l in sort_labels(grounded.empty_locations)]
            masks[finding.sentence_index] = grounded.mask
        record_lesions.append(entry)

    return {
        "study_id": bundle.study.study_id,
        "split": bundle.study.split.value,
        "report": bundle.report_text,
        "image": bundle.study.image,
        "findings": [finding_to_dict(f) for f in findings],
        "unknown_phrases": [[i, p] for i, p in structured.unknown_phrases],
        "dropped_sentences": [[i, s] for i, s in structured.dropped_sentences],
        "empty_locations": [l.value for l in sort_labels(empty)],
        "lesions": record_lesions,
        "_masks": masks,
    }


def _union_for(
    labels: frozenset[AnatomicalLabel], anatomy: Mapping[AnatomicalLabel, RasterMask]
) -> RasterMask:
    some = next(iter(anatomy.values()))
    acc = np.zeros((some.height, some.width), dtype=bool)
    for l in labels:
        if l in anatomy:
            acc |= anatomy[l].pixels
    return RasterMask(acc)


def pairs_from_record(record: dict, config: PipelineConfig, out_dir: Path) -> list[dict]:
    """Regenerate the study's pairs from its grounding record."""
    findings = [finding_from_dict(d) for d in record["findings"]]
    grounded: list[tuple[GroundedLesion, str]] = []
    empty = frozenset(AnatomicalLabel(l) for l in record["empty_locations"])
    for entry in record["lesions"]:
        if entry["rejected"]:
            continue
        mask_ref = entry["mask_path"]
        mask = record.get("_masks", {}).get(entry["finding_index"])
        if mask is None:
            mask = load_mask_png(out_dir / mask_ref)
        g = GroundedLesion(
            lesion=LesionType(entry["lesion"]),
            certainty=Certainty(entry["certainty"]),
            mask=mask,
            reported_locations=frozenset(AnatomicalLabel(l) for l in entry["reported"]),
            grounded_locations=frozenset(AnatomicalLabel(l) for l in entry["grounded"]),
            empty_locations=frozenset(AnatomicalLabel(l) for l in entry["empty"]),
            source_finding_index=entry["finding_index"],
        )
        grounded.append((g, mask_ref))
    pairs = generate_study_pairs(
        record["study_id"],
        findings,
        grounded,
        empty,
        record.get("ctr"),
        config.negatives.seed,
        ctr_max=config.qc.ctr_max,
    )
    return [pair_to_dict(p) for p in pairs]


def process_study(
    study_dict: dict, root: str, config_dict: dict, out_dir: str, do_pairs: bool = True
) -> dict:
    """Worker entry point: QC, grounding, masks, pairs; writes the study record.

    Returns a summary {study_id, status, ...}. Never raises for per-study
    data problems — those become a quarantine summary.
    """
    study = study_from_dict(study_dict)
    config = config_from_dict(config_dict)
    root_p, out_p = Path(root), Path(out_dir)
    try:
        violations = validate_study(study, root_p)
        if violations:
            return {
                "study_id": study.study_id,
                "status": "quarantined",
                "reasons": violations,
            }
        bundle = load_study_bundle(study, root_p)

        secondary = {
            "right_lung": bundle.anatomy[AnatomicalLabel.RIGHT_LUNG],
            "left_lung": bundle.anatomy[AnatomicalLabel.LEFT_LUNG],
        }
        sec_heart = (
            root_p / study.provider_artifacts.anatomy_mask_directory / "heart.png"
        )
        if sec_heart.exists():
            secondary["heart"] = load_mask_png(sec_heart)
        cross = cross_check_masks(
            {k: bundle.organs[k] for k in secondary}, secondary, rel_tol=config.qc.rel_tol
        )
        try:
            ctr = compute_ctr(
                bundle.organs["right_lung"],
                bundle.organs["left_lung"],
                bundle.organs["heart"],
            )
        except ValueError:
            ctr = None
        qc = {
            "flags": list(study.qc_flags),
            "ctr": ctr,
            "cross_check": {"pass": cross.passed, "reasons": list(cross.reasons)},
        }
        qc["excluded"] = bool(study.qc_flags) or not cross.passed

        if qc["excluded"]:
            record = {
                "study_id": study.study_id,
                "split": study.split.value,
                "qc": qc,
                "lesions": [],
                "findings": [],
                "empty_locations": [],
                "pairs": [],
            }
            atomic_write_json(out_p / "records" / f"{study.study_id}.json", record)
            return {"study_id": study.study_id, "status": "excluded", "qc": qc}

        record = ground_study(bundle, config)
        record["qc"] = qc
        record["ctr"] = ctr
        masks = record.pop("_masks")
        for entry in record["lesions"]:
            idx = entry["finding_index"]
            mask_rel = f"masks/{study.study_id}__f{idx}.png"
            entry["mask_path"] = mask_rel if idx in masks else None
            if idx in masks:
                save_mask_png(masks[idx], out_p / mask_rel)

        if do_pairs:
            record["_masks"] = masks
            record["pairs"] = pairs_from_record(record, config, out_p)
            record.pop("_masks")
        else:
            record["pairs"] = []

        atomic_write_json(out_p / "records" / f"{study.study_id}.json", record)
        return {
            "study_id": study.study_id,
            "status": "ok",
            "n_pairs": len(record["pairs"]),
            "n_lesions": sum(1 for e in record["lesions"] if not e["rejected"]),
        }
    except Exception as exc:  # per-study quarantine, never abort the run
        return {
            "study_id": study.study_id,
            "status": "quarantined",
            "reasons": [f"{type(exc).__name__}: {exc}"],
            "trace": traceback.format_exc(),
        }


def run_pipeline(
    manifest_path: str | Path,
    config: PipelineConfig,
    out_dir: str | Path,
    parallelism: int = 1,
    do_pairs: bool = True,
    resume: bool = True,
) -> dict:
    """Process every study in the manifest and build the aggregate outputs."""
    manifest_path = Path(manifest_path)
    out_p = Path(out_dir)
    out_p.mkdir(parents=True, exist_ok=True)
    root = manifest_path.parent
    studies = read_manifest(manifest_path)

    atomic_write_json(
        out_p / "run_meta.json",
        {
            "manifest": str(manifest_path.resolve()),
            "root": str(root.resolve()),
            "config": config_to_dict(config),
        },
    )

    todo = []
    summaries = []
    for study in studies:
        rec = out_p / "records" / f"{study.study_id}.json"
        if resume and rec.exists():
            summaries.append({"study_id": study.study_id, "status": "resumed"})
        else:
            todo.append(study)

    args = [
        (study_to_dict(s), str(root), config_to_dict(config), str(out_p), do_pairs)
        for s in todo
    ]
    if parallelism <= 1:
        results = [process_study(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_process_study_star, args))
    summaries.extend(results)

    return aggregate_outputs(out_p, studies, summaries)


def _process_study_star(args):
    return process_study(*args)


def regen_pairs(out_dir: str | Path, config: PipelineConfig) -> dict:
    """Rebuild every study's pairs from its existing grounding record."""
    out_p = Path(out_dir)
    records_dir = out_p / "records"
    if not records_dir.is_dir():
        raise FileNotFoundError(f"no grounding records under {records_dir}; run `ground` first")
    meta = json.loads((out_p / "run_meta.json").read_text(encoding="utf-8"))
    studies = read_manifest(meta["manifest"])
    summaries = []
    for rec_path in sorted(records_dir.glob("*.json")):
        record = json.loads(rec_path.read_text(encoding="utf-8"))
        if record.get("qc", {}).get("excluded"):
            summaries.append({"study_id": record["study_id"], "status": "excluded"})
            continue
        record["pairs"] = pairs_from_record(record, config, out_p)
        atomic_write_json(rec_path, record)
        summaries.append(
            {
                "study_id": record["study_id"],
                "status": "ok",
                "n_pairs": len(record["pairs"]),
            }
        )
    return aggregate_outputs(out_p, studies, summaries)


def run_qc_only(
    manifest_path: str | Path, config: PipelineConfig, out_dir: str | Path
) -> dict:
    """Validate studies and write the QC report without grounding anything."""
    manifest_path = Path(manifest_path)
    out_p = Path(out_dir)
    out_p.mkdir(parents=True, exist_ok=True)
    root = manifest_path.parent
    qc_rows = []
    quarantined = []
    for study in sorted(read_manifest(manifest_path), key=lambda s: s.study_id):
        violations = validate_study(study, root)
        if violations:
            quarantined.append(
                {"study_id": study.study_id, "status": "quarantined", "reasons": violations}
            )
            continue
        bundle = load_study_bundle(study, root)
        secondary = {
            "right_lung": bundle.anatomy[AnatomicalLabel.RIGHT_LUNG],
            "left_lung": bundle.anatomy[AnatomicalLabel.LEFT_LUNG],
        }
        sec_heart = root / study.provider_artifacts.anatomy_mask_directory / "heart.png"
        if sec_heart.exists():
            secondary["heart"] = load_mask_png(sec_heart)
        cross = cross_check_masks(
            {k: bundle.organs[k] for k in secondary}, secondary, rel_tol=config.qc.rel_tol
        )
        try:
            ctr = compute_ctr(
                bundle.organs["right_lung"],
                bundle.organs["left_lung"],
                bundle.organs["heart"],
            )
        except ValueError:
            ctr = None
        qc_rows.append(
            {
                "study_id": study.study_id,
                "flags": list(study.qc_flags),
                "ctr": ctr,
                "cross_check": {"pass": cross.passed, "reasons": list(cross.reasons)},
                "excluded": bool(study.qc_flags) or not cross.passed,
            }
        )
    write_jsonl(out_p / "qc_report.jsonl", qc_rows)
    write_jsonl(out_p / "quarantine.jsonl", quarantined)
    return {
        "n_studies": len(qc_rows) + len(quarantined),
        "n_quarantined": len(quarantined),
        "n_excluded": sum(1 for r in qc_rows if r["excluded"]),
        "out_dir": str(out_p),
    }


def aggregate_outputs(out_p: Path, studies: Sequence[Study], summaries: list[dict]) -> dict:
    """Rebuild pairs.jsonl, stats, and the QC report from per-study records."""
    all_pairs = []
    qc_rows = []
    quarantined = [s for s in summaries if s.get("status") == "quarantined"]
    for study in sorted(studies, key=lambda s: s.study_id):
        rec_path = out_p / "records" / f"{study.study_id}.json"
        if not rec_path.exists():
            continue
        record = json.loads(rec_path.read_text(encoding="utf-8"))
        qc_rows.append(
            {
                "study_id": study.study_id,
                **record.get("qc", {}),
            }
        )
        all_pairs.extend(record.get("pairs", []))

    all_pairs.sort(key=lambda p: (p["study_id"], p["pair_id"]))
    write_jsonl(out_p / "pairs.jsonl", all_pairs)

    pairs = [pair_from_dict(p) for p in all_pairs]
    split_stats = {}
    by_split: dict[str, list] = {}
    split_of = {s.study_id: s.split.value for s in studies}
    for p in pairs:
        by_split.setdefault(split_of.get(p.study_id, "train"), []).append(p)
    for split_name in sorted(by_split):
        split_stats[split_name] = pair_stats(by_split[split_name])
    stats = {"all": pair_stats(pairs), "by_split": split_stats}
    atomic_write_json(out_p / "stats.json", stats)
    tables = [f"== all ==\n{render_stats_table(stats['all'])}"]
    for split_name, s in sorted(split_stats.items()):
        tables.append(f"\n== {split_name} ==\n{render_stats_table(s)}")
    (out_p / "stats.txt").write_text("\n".join(tables) + "\n", encoding="utf-8")

    write_jsonl(out_p / "qc_report.jsonl", qc_rows)
    write_jsonl(
        out_p / "quarantine.jsonl",
        sorted(
            (
                {k: v for k, v in s.items() if k != "trace"}
                for s in quarantined
            ),
            key=lambda s: s["study_id"],
        ),
    )

    return {
        "n_studies": len(studies),
        "n_pairs": len(all_pairs),
        "n_quarantined": len(quarantined),
        "n_excluded": sum(1 for r in qc_rows if r.get("excluded")),
        "out_dir": str(out_p),
    }


OVERLAY_ALPHA = 0.45
OVERLAY_COLOR = (255, 64, 64)


def render_overlay(image: ImageGray, mask: RasterMask | None, out_path: str | Path) -> None:
    """Write the image with mask pixels tinted at a fixed alpha."""
    if mask is not None and (mask.width != image.width or mask.height != image.height):
        raise ValueError(
            f"overlay mask is {mask.width}x{mask.height}, "
            f"image is {image.width}x{image.height}"
        )
    arr = overlay_bytes_array(image, mask)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(out_path, format="PNG")


def overlay_bytes_array(image: ImageGray, mask: RasterMask | None) -> np.ndarray:
    gray = image.pixels.astype(np.float64)
    rgb = np.stack([gray, gray, gray], axis=-1)
    if mask is not None and not mask.is_empty():
        sel = mask.pixels
        for ch, colour in enumerate(OVERLAY_COLOR):
            rgb[sel, ch] = (1 - OVERLAY_ALPHA) * rgb[sel, ch] + OVERLAY_ALPHA * colour
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)
