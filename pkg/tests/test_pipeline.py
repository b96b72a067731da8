import json
from pathlib import Path

import numpy as np
import pytest

from cxrground.config import default_config
from cxrground.core import AnatomicalLabel, ImageGray, LesionType, RasterMask
from cxrground.pipeline import regen_pairs, render_overlay, run_pipeline, run_qc_only
from cxrground.storage import (
    load_image_png,
    read_json,
    read_manifest,
    write_manifest,
)
from cxrground.synth import (
    LesionPlacement,
    SyntheticStudySpec,
    make_study,
)
from tests.conftest import load_pairs


def canonical_output(out: Path) -> dict[str, bytes]:
    keep = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.suffix in (".jsonl", ".json", ".png", ".txt"):
            if p.name == "run_meta.json":  # carries absolute paths
                continue
            keep[str(p.relative_to(out))] = p.read_bytes()
    return keep


def test_run_pipeline_end_to_end(small_dataset):
    root, out, summary = small_dataset
    assert summary["n_quarantined"] == 0
    pairs = load_pairs(out)
    assert pairs, "pipeline produced no pairs"
    assert (out / "stats.txt").exists()
    assert (out / "qc_report.jsonl").exists()
    for p in pairs:
        if p["mask_ref"] is not None:
            assert (out / p["mask_ref"]).exists()


def test_parallelism_does_not_change_output(tmp_path, small_corpus):
    root, manifest = small_corpus
    out1, out8 = tmp_path / "p1", tmp_path / "p8"
    run_pipeline(manifest, default_config(), out1, parallelism=1)
    run_pipeline(manifest, default_config(), out8, parallelism=8)
    assert canonical_output(out1) == canonical_output(out8)


def test_rerun_on_partial_output_converges(tmp_path, small_corpus):
    root, manifest = small_corpus
    full, partial = tmp_path / "full", tmp_path / "partial"
    run_pipeline(manifest, default_config(), full, parallelism=1)
    run_pipeline(manifest, default_config(), partial, parallelism=1)
    # simulate a crash: drop half the records and every aggregate file
    records = sorted((partial / "records").glob("*.json"))
    for rec in records[::2]:
        rec.unlink()
    for name in ("pairs.jsonl", "stats.json", "stats.txt", "qc_report.jsonl"):
        (partial / name).unlink()
    run_pipeline(manifest, default_config(), partial, parallelism=1)
    assert canonical_output(full) == canonical_output(partial)


def test_empty_manifest(tmp_path):
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("")
    out = tmp_path / "out"
    summary = run_pipeline(manifest, default_config(), out, parallelism=1)
    assert summary["n_pairs"] == 0
    assert (out / "pairs.jsonl").read_text() == ""
    stats = read_json(out / "stats.json")
    assert stats["all"]["pneumonia"]["total"] == 0


def test_cross_check_failure_excludes_study(tmp_path):
    corpus = tmp_path / "corpus"
    good, _ = make_study(
        SyntheticStudySpec(
            study_id="good",
            placements=(
                LesionPlacement(lesion=LesionType.PNEUMONIA, zones=(AnatomicalLabel.RIGHT_BASE,)),
            ),
        ),
        corpus,
    )
    bad, _ = make_study(
        SyntheticStudySpec(
            study_id="bad",
            placements=(
                LesionPlacement(lesion=LesionType.EDEMA, zones=(AnatomicalLabel.LEFT_MID,), delta=18),
            ),
            corrupt_secondary_heart=True,
        ),
        corpus,
    )
    manifest = corpus / "manifest.jsonl"
    write_manifest([good, bad], manifest)
    out = tmp_path / "out"
    summary = run_pipeline(manifest, default_config(), out, parallelism=1)
    assert summary["n_excluded"] == 1
    qc_rows = {
        json.loads(l)["study_id"]: json.loads(l)
        for l in (out / "qc_report.jsonl").read_text().splitlines()
    }
    assert qc_rows["bad"]["excluded"] is True
    assert not qc_rows["bad"]["cross_check"]["pass"]
    assert all(p["study_id"] != "bad" for p in load_pairs(out))


def test_qc_flags_quarantine_study(tmp_path):
    corpus = tmp_path / "corpus"
    study, _ = make_study(
        SyntheticStudySpec(
            study_id="flagged",
            placements=(
                LesionPlacement(lesion=LesionType.PNEUMONIA, zones=(AnatomicalLabel.RIGHT_BASE,)),
            ),
        ),
        corpus,
    )
    from dataclasses import replace

    flagged = replace(study, qc_flags=("lateral_view",))
    manifest = corpus / "manifest.jsonl"
    write_manifest([flagged], manifest)
    out = tmp_path / "out"
    run_pipeline(manifest, default_config(), out, parallelism=1)
    assert load_pairs(out) == []
    row = json.loads((out / "qc_report.jsonl").read_text().splitlines()[0])
    assert row["excluded"] is True and row["flags"] == ["lateral_view"]


def test_broken_study_quarantined_without_aborting(tmp_path):
    corpus = tmp_path / "corpus"
    good, _ = make_study(
        SyntheticStudySpec(
            study_id="ok",
            placements=(
                LesionPlacement(lesion=LesionType.PNEUMONIA, zones=(AnatomicalLabel.RIGHT_BASE,)),
            ),
        ),
        corpus,
    )
    broken, _ = make_study(SyntheticStudySpec(study_id="broken"), corpus)
    (corpus / broken.image).unlink()
    manifest = corpus / "manifest.jsonl"
    write_manifest([good, broken], manifest)
    out = tmp_path / "out"
    summary = run_pipeline(manifest, default_config(), out, parallelism=1)
    assert summary["n_quarantined"] == 1
    rows = [json.loads(l) for l in (out / "quarantine.jsonl").read_text().splitlines()]
    assert rows[0]["study_id"] == "broken"
    assert any("missing" in r for r in rows[0]["reasons"])
    assert any(p["study_id"] == "ok" for p in load_pairs(out))


def test_ground_then_pairs_equals_run(tmp_path, small_corpus):
    root, manifest = small_corpus
    run_out = tmp_path / "run"
    run_pipeline(manifest, default_config(), run_out, parallelism=1, do_pairs=True)
    two_step = tmp_path / "twostep"
    run_pipeline(manifest, default_config(), two_step, parallelism=1, do_pairs=False)
    assert load_pairs(two_step) == []
    regen_pairs(two_step, default_config())
    assert load_pairs(two_step) == load_pairs(run_out)


def test_run_qc_only(tmp_path, small_corpus):
    root, manifest = small_corpus
    out = tmp_path / "qc"
    summary = run_qc_only(manifest, default_config(), out)
    assert summary["n_studies"] == len(read_manifest(manifest))
    assert (out / "qc_report.jsonl").exists()
    assert not (out / "records").exists()


def test_render_overlay(tmp_path):
    img = ImageGray(np.full((8, 8), 100, dtype=np.int64))
    empty = RasterMask.empty(8, 8)
    out = tmp_path / "o.png"
    render_overlay(img, empty, out)
    arr = np.asarray(load_image_png(out).pixels)
    assert np.all(arr == 100)  # no tint anywhere

    half = RasterMask.from_members(8, 8, [(r, c) for r in range(8) for c in range(4)])
    out2 = tmp_path / "o2.png"
    render_overlay(img, half, out2)
    from PIL import Image

    rgb = np.asarray(Image.open(out2).convert("RGB"))
    assert np.all(rgb[:, 4:, 0] == rgb[:, 4:, 1])  # untinted half stays gray
    assert np.all(rgb[:, :4, 0] > rgb[:, :4, 1])  # tinted half is reddened

    with pytest.raises(ValueError):
        render_overlay(img, RasterMask.empty(4, 4), tmp_path / "bad.png")
