import json

import numpy as np
import pytest

from cxrground.core import (
    AnatomicalLabel,
    Certainty,
    GroundedLesion,
    ImageGray,
    InstructionAnswerPair,
    LesionType,
    Polarity,
    Presence,
    RasterMask,
    Split,
    StructuredFinding,
    TemplateType,
    ThresholdSet,
    finding_from_dict,
    finding_to_dict,
    pair_from_dict,
    pair_to_dict,
    sort_labels,
    study_from_dict,
    study_to_dict,
)
from cxrground.storage import (
    load_image_png,
    load_mask_png,
    save_image_png,
    save_mask_png,
    validate_study,
)
from cxrground.synth import SyntheticStudySpec, LesionPlacement, make_study


def test_raster_mask_set_semantics():
    a = RasterMask.from_members(4, 3, [(0, 0), (2, 3), (0, 0)])
    b = RasterMask.from_members(4, 3, [(2, 3), (0, 0)])
    assert a == b
    assert a.area == 2
    assert a.members == frozenset({(0, 0), (2, 3)})


def test_raster_mask_rejects_out_of_bounds():
    with pytest.raises(ValueError):
        RasterMask.from_members(4, 3, [(3, 0)])


def test_raster_mask_is_immutable():
    m = RasterMask.empty(2, 2)
    with pytest.raises(AttributeError):
        m.width = 5
    with pytest.raises(ValueError):
        m.pixels[0, 0] = True


def test_image_gray_intensity_bounds():
    ImageGray(np.array([[0, 255]], dtype=np.int64))
    with pytest.raises(ValueError):
        ImageGray(np.array([[0, 256]], dtype=np.int64))
    img = ImageGray(np.array([[0, 1023]], dtype=np.int64), bit_depth=10)
    assert img.i_max == 1023


def test_label_enumeration_closure():
    assert len(list(AnatomicalLabel)) == 10
    assert len(list(LesionType)) == 7
    with pytest.raises(ValueError):
        AnatomicalLabel("right lobe")
    with pytest.raises(ValueError):
        LesionType("pneumothorax")


def test_sort_labels_right_before_left():
    labels = [AnatomicalLabel.LEFT_BASE, AnatomicalLabel.RIGHT_BASE]
    assert sort_labels(labels) == [AnatomicalLabel.RIGHT_BASE, AnatomicalLabel.LEFT_BASE]


def test_finding_invariants():
    with pytest.raises(ValueError):
        StructuredFinding(
            entity="pneumonia",
            sentence_index=0,
            presence=Presence.POSITIVE,
            certainty=Certainty.DEFINITIVE,
            reported_locations=frozenset({AnatomicalLabel.RIGHT_BASE}),
        )
    with pytest.raises(ValueError):
        StructuredFinding(
            entity="pneumonia",
            sentence_index=1,
            presence=Presence.POSITIVE,
            certainty=Certainty.DEFINITIVE,
            reported_locations=frozenset(),
        )
    # cardiomegaly is the whole-organ exception
    f = StructuredFinding(
        entity="cardiomegaly",
        sentence_index=1,
        presence=Presence.POSITIVE,
        certainty=Certainty.DEFINITIVE,
        reported_locations=frozenset(),
    )
    assert f.is_cardiomegaly
    assert f.effective_lesion is LesionType.CARDIOMEGALY


def test_effective_lesion_prefers_prediction():
    f = StructuredFinding(
        entity="opacity",
        sentence_index=2,
        presence=Presence.POSITIVE,
        certainty=Certainty.DEFINITIVE,
        reported_locations=frozenset({AnatomicalLabel.RIGHT_BASE}),
        predicted_lesion=LesionType.PNEUMONIA,
    )
    assert f.effective_lesion is LesionType.PNEUMONIA


def test_threshold_set_range():
    with pytest.raises(ValueError):
        ThresholdSet(1.2, 0.25, 0.2, 0.2, 0.1)


def test_grounded_lesion_invariants():
    mask = RasterMask.from_members(2, 2, [(0, 0)])
    with pytest.raises(ValueError):
        GroundedLesion(
            lesion=LesionType.PNEUMONIA,
            certainty=Certainty.DEFINITIVE,
            mask=mask,
            reported_locations=frozenset({AnatomicalLabel.RIGHT_BASE}),
            grounded_locations=frozenset({AnatomicalLabel.LEFT_BASE}),
            empty_locations=frozenset(),
            source_finding_index=1,
        )
    with pytest.raises(ValueError):
        GroundedLesion(
            lesion=LesionType.PNEUMONIA,
            certainty=Certainty.DEFINITIVE,
            mask=RasterMask.empty(2, 2),
            reported_locations=frozenset({AnatomicalLabel.RIGHT_BASE}),
            grounded_locations=frozenset({AnatomicalLabel.RIGHT_BASE}),
            empty_locations=frozenset(),
            source_finding_index=1,
        )


def test_pair_polarity_mask_invariant():
    with pytest.raises(ValueError):
        InstructionAnswerPair(
            pair_id="x",
            study_id="s",
            lesion=LesionType.PNEUMONIA,
            template_type=TemplateType.BASIC,
            polarity=Polarity.NEGATIVE,
            instruction="i",
            answer_text="a",
            mask_ref="masks/x.png",
        )


def test_mask_png_round_trip(tmp_path):
    m = RasterMask.from_members(7, 5, [(0, 0), (4, 6), (2, 3)])
    p = tmp_path / "m.png"
    save_mask_png(m, p)
    assert load_mask_png(p) == m


def test_image_png_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    img = ImageGray(rng.integers(0, 256, size=(9, 11), dtype=np.int64))
    p = tmp_path / "i.png"
    save_image_png(img, p)
    assert load_image_png(p) == img


def test_finding_dict_round_trip():
    f = StructuredFinding(
        entity="opacity",
        sentence_index=2,
        presence=Presence.POSITIVE,
        certainty=Certainty.DEFINITIVE,
        reported_locations=frozenset(
            {AnatomicalLabel.RIGHT_BASE, AnatomicalLabel.LEFT_BASE}
        ),
        predicted_lesion=LesionType.PNEUMONIA,
    )
    assert finding_from_dict(json.loads(json.dumps(finding_to_dict(f)))) == f


def test_pair_dict_round_trip():
    p = InstructionAnswerPair(
        pair_id="abc",
        study_id="s1",
        lesion=LesionType.EDEMA,
        template_type=TemplateType.GLOBAL,
        polarity=Polarity.POSITIVE,
        instruction="Segment the edema.",
        answer_text="[SEG] It is located in the left lung.",
        mask_ref="masks/s1__f1.png",
        locations=frozenset({AnatomicalLabel.LEFT_LUNG}),
    )
    assert pair_from_dict(json.loads(json.dumps(pair_to_dict(p)))) == p


def _make_valid_study(tmp_path, sid="val0"):
    spec = SyntheticStudySpec(
        study_id=sid,
        placements=(
            LesionPlacement(
                lesion=LesionType.PNEUMONIA, zones=(AnatomicalLabel.RIGHT_BASE,)
            ),
        ),
    )
    study, _ = make_study(spec, tmp_path)
    return study


def test_study_dict_round_trip(tmp_path):
    study = _make_valid_study(tmp_path)
    assert study_from_dict(json.loads(json.dumps(study_to_dict(study)))) == study
    assert study.split is Split.TRAIN


def test_validate_study_well_formed(tmp_path):
    study = _make_valid_study(tmp_path)
    assert validate_study(study, tmp_path) == []


def test_validate_study_dimension_mismatch(tmp_path):
    study = _make_valid_study(tmp_path)
    # shrink the edited image against its 96x96 source
    small = ImageGray(np.zeros((48, 48), dtype=np.uint8))
    save_image_png(small, tmp_path / study.provider_artifacts.edited_image)
    violations = validate_study(study, tmp_path)
    assert len(violations) == 1
    assert "48x48" in violations[0] and "96x96" in violations[0]


def test_validate_study_bad_confidence(tmp_path):
    study = _make_valid_study(tmp_path)
    det_path = tmp_path / study.provider_artifacts.detections_file
    records = json.loads(det_path.read_text())
    records[0]["confidence"] = 1.3
    det_path.write_text(json.dumps(records))
    violations = validate_study(study, tmp_path)
    assert len(violations) == 1
    assert "confidence" in violations[0]
