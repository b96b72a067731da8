"""Template rendering/parsing and the pair-generation rules."""

import itertools

from cxrground.core import (
    AnatomicalLabel,
    Certainty,
    GroundedLesion,
    LesionType,
    Polarity,
    Presence,
    RasterMask,
    StructuredFinding,
    TemplateType,
)
from cxrground.pairgen import (
    DEFAULT_BANK,
    gen_basic,
    gen_global,
    gen_lesion_inference,
    gen_negatives,
    generate_study_pairs,
    location_phrase,
    pair_stats,
    parse_location_phrase,
    render_stats_table,
)

RLB = AnatomicalLabel.RIGHT_BASE
LLB = AnatomicalLabel.LEFT_BASE
MASK = RasterMask.from_members(4, 4, [(0, 0)])


def grounded(
    lesion=LesionType.PNEUMONIA,
    certainty=Certainty.DEFINITIVE,
    reported={RLB, LLB},
    grounded_locs=None,
    empty=frozenset(),
    index=1,
):
    reported = frozenset(reported)
    return GroundedLesion(
        lesion=lesion,
        certainty=certainty,
        mask=MASK,
        reported_locations=reported,
        grounded_locations=frozenset(grounded_locs) if grounded_locs is not None else reported,
        empty_locations=frozenset(empty),
        source_finding_index=index,
    )


def finding(entity, presence=Presence.POSITIVE, certainty=Certainty.DEFINITIVE,
            locations=frozenset({RLB}), index=1, predicted=None):
    return StructuredFinding(
        entity=entity,
        sentence_index=index,
        presence=presence,
        certainty=certainty,
        reported_locations=frozenset(locations),
        predicted_lesion=predicted,
    )


# --- location phrases -------------------------------------------------------------


def test_location_phrase_order_and_round_trip():
    phrase = location_phrase({LLB, RLB})
    assert phrase == "right lung base and left lung base"
    assert parse_location_phrase(phrase) == frozenset({RLB, LLB})
    assert parse_location_phrase("right lung base and nowhere") is None


# --- positive generators -----------------------------------------------------------


def test_gen_basic_worked_example():
    (pair,) = gen_basic(grounded(), "s1", "masks/m.png")
    assert pair.instruction == "Segment the pneumonia in the right lung base and left lung base."
    assert pair.answer_text == "[SEG]"
    assert pair.template_type is TemplateType.BASIC
    assert pair.polarity is Polarity.POSITIVE
    assert pair.mask_ref == "masks/m.png"


def test_gen_basic_tentative_substitutes_opacity():
    (pair,) = gen_basic(grounded(certainty=Certainty.TENTATIVE), "s1", "m.png")
    assert pair.instruction == "Segment the opacity in the right lung base and left lung base."
    assert pair.lesion is LesionType.PNEUMONIA


def test_gen_basic_cardiomegaly_suppressed():
    g = grounded(lesion=LesionType.CARDIOMEGALY, reported=frozenset(), grounded_locs=frozenset())
    assert gen_basic(g, "s1", "m.png") == []


def test_gen_global_requires_full_grounding():
    g = grounded(lesion=LesionType.EFFUSION, reported={AnatomicalLabel.LEFT_LUNG})
    (pair,) = gen_global(g, "s1", "m.png")
    assert pair.instruction == "Segment the effusion."
    assert pair.answer_text == "[SEG] It is located in the left lung."
    partial = grounded(
        lesion=LesionType.EFFUSION, reported={RLB, LLB}, grounded_locs={RLB}
    )
    assert gen_global(partial, "s1", "m.png") == []


def test_gen_global_cardiomegaly_always():
    g = grounded(lesion=LesionType.CARDIOMEGALY, reported=frozenset(), grounded_locs=frozenset())
    (pair,) = gen_global(g, "s1", "m.png")
    assert pair.instruction == "Segment the cardiomegaly."
    assert pair.answer_text == "[SEG]"
    assert pair.locations == frozenset()


def test_gen_lesion_inference_certainty_phrasing():
    (definitive,) = gen_lesion_inference(
        grounded(lesion=LesionType.ATELECTASIS, reported={LLB}), "s1", "m.png"
    )
    assert definitive.instruction == "Segment the opacity in the left lung base and predict its type."
    assert definitive.answer_text == "[SEG] It is highly suggestive of atelectasis."
    (tentative,) = gen_lesion_inference(
        grounded(lesion=LesionType.EDEMA, certainty=Certainty.TENTATIVE, reported={LLB}),
        "s1",
        "m.png",
    )
    assert tentative.answer_text == "[SEG] It possibly reflects edema."


def test_gen_lesion_inference_excludes_effusion():
    g = grounded(lesion=LesionType.EFFUSION, reported={LLB})
    assert gen_lesion_inference(g, "s1", "m.png") == []


# --- template closure ----------------------------------------------------------------


def test_every_rendered_pair_reparses():
    bank = DEFAULT_BANK
    cases = []
    for lesion, certainty in itertools.product(
        (LesionType.PNEUMONIA, LesionType.OPACITY, LesionType.EFFUSION),
        (Certainty.DEFINITIVE, Certainty.TENTATIVE),
    ):
        g = grounded(lesion=lesion, certainty=certainty)
        cases += gen_basic(g, "s", "m.png")
        cases += gen_global(g, "s", "m.png")
        cases += gen_lesion_inference(g, "s", "m.png")
    cases += gen_global(
        grounded(lesion=LesionType.CARDIOMEGALY, reported=frozenset(), grounded_locs=frozenset()),
        "s",
        "m.png",
    )
    cases += gen_negatives(
        [finding("effusion", locations={RLB})],
        [grounded(lesion=LesionType.EFFUSION, reported={RLB})],
        frozenset({AnatomicalLabel.LEFT_APICAL}),
        0.40,
        seed=3,
        study_id="s",
    )
    assert cases
    for pair in cases:
        parsed = bank.parse(pair.instruction, pair.answer_text)
        assert parsed is not None, (pair.instruction, pair.answer_text)
        assert parsed.template_type is pair.template_type
        assert parsed.polarity is pair.polarity


def test_parse_rejects_mangled_answers():
    bank = DEFAULT_BANK
    assert bank.parse("Segment the pneumonia in the right lung base.", "[SEG] maybe") is None
    assert bank.parse("Do something else.", "[SEG]") is None
    assert (
        bank.parse("Segment the pneumonia in the right lung base.", "[SEG] There is no pneumonia in the moon.")
        is None
    )


# --- negatives -------------------------------------------------------------------------


def test_negative_cap_one_per_lesion():
    negatives = gen_negatives([], [], frozenset({RLB, LLB}), 0.40, seed=1, study_id="s")
    by_lesion = {}
    for p in negatives:
        by_lesion.setdefault(p.lesion, []).append(p)
    for lesion, pairs in by_lesion.items():
        assert len(pairs) == 1, lesion
    # all seven eligible here (nothing mentioned, CTR passes)
    assert len(negatives) == 7
    for p in negatives:
        assert p.polarity is Polarity.NEGATIVE
        assert p.mask_ref is None


def test_negative_ctr_gate():
    high = gen_negatives([], [], frozenset({RLB}), 0.52, seed=1, study_id="s")
    assert all(p.lesion is not LesionType.CARDIOMEGALY for p in high)
    low = gen_negatives([], [], frozenset({RLB}), 0.45, seed=1, study_id="s")
    cardio = [p for p in low if p.lesion is LesionType.CARDIOMEGALY]
    assert len(cardio) == 1
    assert cardio[0].template_type is TemplateType.GLOBAL
    assert cardio[0].instruction == "Segment the cardiomegaly."
    assert cardio[0].answer_text == "[SEG] There is no cardiomegaly."
    missing_ctr = gen_negatives([], [], frozenset({RLB}), None, seed=1, study_id="s")
    assert all(p.lesion is not LesionType.CARDIOMEGALY for p in missing_ctr)


def test_negative_absent_lesion_uses_empty_location():
    negatives = gen_negatives(
        [], [], frozenset({AnatomicalLabel.RIGHT_APICAL}), 0.40, seed=5, study_id="s"
    )
    pneumonia = next(p for p in negatives if p.lesion is LesionType.PNEUMONIA)
    assert pneumonia.template_type is TemplateType.BASIC
    assert pneumonia.locations == frozenset({AnatomicalLabel.RIGHT_APICAL})
    assert pneumonia.instruction == "Segment the pneumonia in the right apical zone."
    assert pneumonia.answer_text == "[SEG] There is no pneumonia in the right apical zone."


def test_negative_mentioned_lesion_retargets_basic():
    f = finding("atelectasis", locations={RLB})
    g = grounded(lesion=LesionType.ATELECTASIS, reported={RLB})
    negatives = gen_negatives(
        [f],
        [g],
        frozenset({AnatomicalLabel.RIGHT_APICAL, AnatomicalLabel.LEFT_APICAL}),
        0.40,
        seed=9,
        study_id="s",
    )
    atl = [p for p in negatives if p.lesion is LesionType.ATELECTASIS]
    assert len(atl) == 1
    assert atl[0].template_type is TemplateType.BASIC
    assert atl[0].locations <= {AnatomicalLabel.RIGHT_APICAL, AnatomicalLabel.LEFT_APICAL}
    assert "atelectasis" in atl[0].instruction


def test_negative_mentioned_lesion_without_empty_locations_skipped():
    f = finding("atelectasis", locations={RLB})
    g = grounded(lesion=LesionType.ATELECTASIS, reported={RLB})
    negatives = gen_negatives([f], [g], frozenset(), 0.40, seed=9, study_id="s")
    assert all(p.lesion is not LesionType.ATELECTASIS for p in negatives)


def test_negative_opacity_blocked_by_implied_opacity():
    # a tentative pneumonia implies an opacity statement, so no opacity negative
    f = finding("pneumonia", certainty=Certainty.TENTATIVE, locations={RLB})
    negatives = gen_negatives([f], [], frozenset({LLB}), 0.40, seed=2, study_id="s")
    assert all(p.lesion is not LesionType.OPACITY for p in negatives)


def test_negative_opacity_may_render_as_lesion_inference():
    seen = set()
    for seed in range(40):
        negatives = gen_negatives([], [], frozenset({RLB}), 0.40, seed=seed, study_id="s")
        for p in negatives:
            if p.lesion is LesionType.OPACITY:
                seen.add(p.template_type)
    assert seen == {TemplateType.BASIC, TemplateType.LESION_INFERENCE}


def test_negative_global_form_without_empty_locations():
    seen = set()
    for seed in range(40):
        negatives = gen_negatives([], [], frozenset(), 0.40, seed=seed, study_id="s")
        for p in negatives:
            if p.lesion is LesionType.PNEUMONIA:
                seen.add(p.template_type)
    assert TemplateType.GLOBAL in seen and TemplateType.BASIC in seen


def test_negatives_deterministic():
    args = ([], [], frozenset({RLB, LLB}), 0.40)
    a = gen_negatives(*args, seed=11, study_id="s77")
    b = gen_negatives(*args, seed=11, study_id="s77")
    assert a == b
    c = gen_negatives(*args, seed=12, study_id="s77")
    assert [p.pair_id for p in a] != [p.pair_id for p in c] or a != c


# --- study-level assembly ----------------------------------------------------------------


def test_generate_study_pairs_polarity_mask_consistency():
    f = finding("pneumonia", locations={RLB})
    g = grounded(lesion=LesionType.PNEUMONIA, reported={RLB})
    pairs = generate_study_pairs(
        "s9", [f], [(g, "masks/s9__f1.png")], frozenset({LLB}), 0.4, seed=0
    )
    assert pairs
    for p in pairs:
        assert (p.polarity is Polarity.NEGATIVE) == (p.mask_ref is None)
    ids = [p.pair_id for p in pairs]
    assert len(ids) == len(set(ids))


def test_stats_table_counts():
    f = finding("pneumonia", locations={RLB})
    g = grounded(lesion=LesionType.PNEUMONIA, reported={RLB})
    pairs = generate_study_pairs(
        "s9", [f], [(g, "m.png")], frozenset({LLB}), 0.4, seed=0
    )
    stats = pair_stats(pairs)
    assert stats["pneumonia"]["basic"]["pos"] == 1
    assert stats["pneumonia"]["lesion_inference"]["pos"] == 1
    table = render_stats_table(stats)
    assert "pneumonia" in table and "total" in table
