"""Instruction-answer pair generation.

Three template families exist; answers carry a [SEG] token plus optional text:

  basic             "Segment the [Target] in the [Location]."
                    -> "[SEG]"  |  "[SEG] There is no [Target] in the [Location]."
  global            "Segment the [Target]."
                    -> "[SEG] It is located in the [Location]."  |  "[SEG]"
                    |  "[SEG] There is no [Target]."
  lesion_inference  "Segment the opacity in the [Location] and predict its type."
                    -> "[SEG] It is highly suggestive of [Lesion]."
                    |  "[SEG] It possibly reflects [Lesion]."
                    |  "[SEG] There is no opacity in the [Location]."

Rules applied here:
  * tentative findings never name the specific lesion: the target word becomes
    "opacity" (cardiomegaly excepted — it is not an opacity);
  * global positives only when grounded and reported locations are identical;
    cardiomegaly always gets a (location-free) global pair and nothing else;
  * lesion-inference positives only for pneumonia/atelectasis/edema, with the
    certainty level expressed in the answer phrasing;
  * at most one negative per lesion type per study, empty-location placement
    preferred, cardiomegaly negatives gated on CTR.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .core import (
    ALL_LABELS,
    ALL_LESIONS,
    INFERENCE_LESIONS,
    AnatomicalLabel,
    Certainty,
    GroundedLesion,
    InstructionAnswerPair,
    LesionType,
    Polarity,
    Presence,
    StructuredFinding,
    TemplateType,
    lesion_from_text,
    make_pair_id,
    sort_labels,
)

SEG_TOKEN = "[SEG]"


def location_phrase(labels: Iterable[AnatomicalLabel]) -> str:
    ordered = sort_labels(labels)
    if not ordered:
        raise ValueError("cannot render an empty location set")
    return " and ".join(l.value for l in ordered)


def parse_location_phrase(text: str) -> frozenset[AnatomicalLabel] | None:
    parts = [p.strip() for p in text.split(" and ")]
    labels = set()
    for p in parts:
        try:
            labels.add(AnatomicalLabel(p))
        except ValueError:
            return None
    return frozenset(labels) if labels else None


@dataclass(frozen=True)
class ParsedResponse:
    """Structured content of a (instruction, answer) pair for strict matching."""

    template_type: TemplateType
    polarity: Polarity
    variables: tuple[tuple[str, object], ...]

    @classmethod
    def build(cls, ttype, polarity, **variables) -> "ParsedResponse":
        return cls(ttype, polarity, tuple(sorted(variables.items())))


_RE_I_LESION_INF = re.compile(
    r"^Segment the opacity in the (?P<loc>.+) and predict its type\.$"
)
_RE_I_BASIC = re.compile(r"^Segment the (?P<target>[a-z]+) in the (?P<loc>.+)\.$")
_RE_I_GLOBAL = re.compile(r"^Segment the (?P<target>[a-z]+)\.$")

_RE_A_BASIC_NEG = re.compile(
    r"^\[SEG\] There is no (?P<target>[a-z]+) in the (?P<loc>.+)\.$"
)
_RE_A_GLOBAL_POS = re.compile(r"^\[SEG\] It is located in the (?P<loc>.+)\.$")
_RE_A_GLOBAL_NEG = re.compile(r"^\[SEG\] There is no (?P<target>[a-z]+)\.$")
_RE_A_LI_DEFINITIVE = re.compile(
    r"^\[SEG\] It is highly suggestive of (?P<lesion>[a-z]+)\.$"
)
_RE_A_LI_TENTATIVE = re.compile(r"^\[SEG\] It possibly reflects (?P<lesion>[a-z]+)\.$")
_RE_A_LI_NEG = re.compile(r"^\[SEG\] There is no opacity in the (?P<loc>.+)\.$")


class TemplateBank:
    """Renders the fixed instruction/answer templates and re-parses them."""

    # --- rendering -----------------------------------------------------------

    def basic_instruction(self, target: str, locations) -> str:
        return f"Segment the {target} in the {location_phrase(locations)}."

    def basic_positive_answer(self) -> str:
        return SEG_TOKEN

    def basic_negative_answer(self, target: str, locations) -> str:
        return f"{SEG_TOKEN} There is no {target} in the {location_phrase(locations)}."

    def global_instruction(self, target: str) -> str:
        return f"Segment the {target}."

    def global_positive_answer(self, locations) -> str:
        return f"{SEG_TOKEN} It is located in the {location_phrase(locations)}."

    def global_positive_answer_bare(self) -> str:
        # Whole-organ variant: no valid lung label describes the heart.
        return SEG_TOKEN

    def global_negative_answer(self, target: str) -> str:
        return f"{SEG_TOKEN} There is no {target}."

    def inference_instruction(self, locations) -> str:
        return f"Segment the opacity in the {location_phrase(locations)} and predict its type."

    def inference_positive_answer(self, lesion: LesionType, certainty: Certainty) -> str:
        if certainty is Certainty.DEFINITIVE:
            return f"{SEG_TOKEN} It is highly suggestive of {lesion.value}."
        return f"{SEG_TOKEN} It possibly reflects {lesion.value}."

    def inference_negative_answer(self, locations) -> str:
        return f"{SEG_TOKEN} There is no opacity in the {location_phrase(locations)}."

    # --- parsing -------------------------------------------------------------

    def parse(self, instruction: str, answer: str) -> ParsedResponse | None:
        """Recover (template, polarity, variables) or None when out of template."""
        m = _RE_I_LESION_INF.match(instruction)
        if m:
            locs = parse_location_phrase(m.group("loc"))
            if locs is None:
                return None
            return self._parse_inference_answer(answer, locs)

        m = _RE_I_BASIC.match(instruction)
        if m:
            locs = parse_location_phrase(m.group("loc"))
            if locs is None:
                return None
            return self._parse_basic_answer(answer, m.group("target"), locs)

        m = _RE_I_GLOBAL.match(instruction)
        if m:
            return self._parse_global_answer(answer, m.group("target"))

        return None

    def _parse_basic_answer(self, answer, target, locs) -> ParsedResponse | None:
        if answer == SEG_TOKEN:
            return ParsedResponse.build(
                TemplateType.BASIC, Polarity.POSITIVE, target=target, locations=locs
            )
        m = _RE_A_BASIC_NEG.match(answer)
        if m:
            a_locs = parse_location_phrase(m.group("loc"))
            if a_locs is None:
                return None
            return ParsedResponse.build(
                TemplateType.BASIC,
                Polarity.NEGATIVE,
                target=target,
                locations=locs,
                answer_target=m.group("target"),
                answer_locations=a_locs,
            )
        return None

    def _parse_global_answer(self, answer, target) -> ParsedResponse | None:
        if answer == SEG_TOKEN:
            return ParsedResponse.build(
                TemplateType.GLOBAL, Polarity.POSITIVE, target=target
            )
        m = _RE_A_GLOBAL_POS.match(answer)
        if m:
            a_locs = parse_location_phrase(m.group("loc"))
            if a_locs is None:
                return None
            return ParsedResponse.build(
                TemplateType.GLOBAL,
                Polarity.POSITIVE,
                target=target,
                answer_locations=a_locs,
            )
        m = _RE_A_GLOBAL_NEG.match(answer)
        if m:
            return ParsedResponse.build(
                TemplateType.GLOBAL,
                Polarity.NEGATIVE,
                target=target,
                answer_target=m.group("target"),
            )
        return None

    def _parse_inference_answer(self, answer, locs) -> ParsedResponse | None:
        for regex, certainty in (
            (_RE_A_LI_DEFINITIVE, Certainty.DEFINITIVE),
            (_RE_A_LI_TENTATIVE, Certainty.TENTATIVE),
        ):
            m = regex.match(answer)
            if m:
                try:
                    lesion = LesionType(m.group("lesion"))
                except ValueError:
                    return None
                return ParsedResponse.build(
                    TemplateType.LESION_INFERENCE,
                    Polarity.POSITIVE,
                    locations=locs,
                    lesion=lesion,
                    certainty=certainty,
                )
        m = _RE_A_LI_NEG.match(answer)
        if m:
            a_locs = parse_location_phrase(m.group("loc"))
            if a_locs is None:
                return None
            return ParsedResponse.build(
                TemplateType.LESION_INFERENCE,
                Polarity.NEGATIVE,
                locations=locs,
                answer_locations=a_locs,
            )
        return None


DEFAULT_BANK = TemplateBank()


def target_word(lesion: LesionType, certainty: Certainty) -> str:
    if certainty is Certainty.TENTATIVE and lesion is not LesionType.CARDIOMEGALY:
        return LesionType.OPACITY.value
    return lesion.value


def _pair(
    study_id, lesion, ttype, polarity, instruction, answer, mask_ref, locations
) -> InstructionAnswerPair:
    return InstructionAnswerPair(
        pair_id=make_pair_id(
            study_id, lesion, ttype, polarity, locations, instruction, answer
        ),
        study_id=study_id,
        lesion=lesion,
        template_type=ttype,
        polarity=polarity,
        instruction=instruction,
        answer_text=answer,
        mask_ref=mask_ref,
        locations=frozenset(locations),
    )


def gen_basic(
    g: GroundedLesion, study_id: str, mask_ref: str, bank: TemplateBank = DEFAULT_BANK
) -> list[InstructionAnswerPair]:
    """Location-specific positive pair; cardiomegaly is global-only."""
    if g.lesion is LesionType.CARDIOMEGALY or not g.grounded_locations:
        return []
    instruction = bank.basic_instruction(
        target_word(g.lesion, g.certainty), g.grounded_locations
    )
    return [
        _pair(
            study_id,
            g.lesion,
            TemplateType.BASIC,
            Polarity.POSITIVE,
            instruction,
            bank.basic_positive_answer(),
            mask_ref,
            g.grounded_locations,
        )
    ]


def gen_global(
    g: GroundedLesion, study_id: str, mask_ref: str, bank: TemplateBank = DEFAULT_BANK
) -> list[InstructionAnswerPair]:
    """Whole-image positive pair, only when the mask covers every reported
    location; always emitted for cardiomegaly (with the location-free answer)."""
    if g.lesion is LesionType.CARDIOMEGALY:
        return [
            _pair(
                study_id,
                g.lesion,
                TemplateType.GLOBAL,
                Polarity.POSITIVE,
                bank.global_instruction(LesionType.CARDIOMEGALY.value),
                bank.global_positive_answer_bare(),
                mask_ref,
                frozenset(),
            )
        ]
    if g.grounded_locations != g.reported_locations or not g.grounded_locations:
        return []
    instruction = bank.global_instruction(target_word(g.lesion, g.certainty))
    return [
        _pair(
            study_id,
            g.lesion,
            TemplateType.GLOBAL,
            Polarity.POSITIVE,
            instruction,
            bank.global_positive_answer(g.grounded_locations),
            mask_ref,
            g.grounded_locations,
        )
    ]


def gen_lesion_inference(
    g: GroundedLesion, study_id: str, mask_ref: str, bank: TemplateBank = DEFAULT_BANK
) -> list[InstructionAnswerPair]:
    """Opacity-type-prediction pair for pneumonia/atelectasis/edema, emitted
    regardless of certainty — the certainty moves into the answer phrasing."""
    if g.lesion not in INFERENCE_LESIONS or not g.grounded_locations:
        return []
    return [
        _pair(
            study_id,
            g.lesion,
            TemplateType.LESION_INFERENCE,
            Polarity.POSITIVE,
            bank.inference_instruction(g.grounded_locations),
            bank.inference_positive_answer(g.lesion, g.certainty),
            mask_ref,
            g.grounded_locations,
        )
    ]


def mentioned_positive_lesions(findings: Sequence[StructuredFinding]) -> set[LesionType]:
    """Lesion classes a negative pair would contradict.

    Includes each positive finding's effective lesion and its entity word, and
    treats opacity as mentioned whenever a positive finding implies an opacity
    statement (tentative target substitution, or a lesion-inference class).
    """
    mentioned: set[LesionType] = set()
    for f in findings:
        if f.presence is not Presence.POSITIVE:
            continue
        eff = f.effective_lesion
        if eff is not None:
            mentioned.add(eff)
            if eff in INFERENCE_LESIONS or f.certainty is Certainty.TENTATIVE:
                mentioned.add(LesionType.OPACITY)
        ent = lesion_from_text(f.entity)
        if ent is not None:
            mentioned.add(ent)
    return mentioned


def gen_negatives(
    findings: Sequence[StructuredFinding],
    grounded_lesions: Sequence[GroundedLesion],
    empty_locations: frozenset[AnatomicalLabel],
    ctr: float | None,
    seed: int,
    study_id: str,
    bank: TemplateBank = DEFAULT_BANK,
    ctr_max: float = 0.45,
) -> list[InstructionAnswerPair]:
    """At most one negative per lesion type for this study.

    Lesions positively mentioned in the report only get a negative by
    re-targeting their positive basic instruction to an empty location.
    Absent/negated lesions get a basic negative at an empty location when one
    exists, otherwise a seeded coin picks basic-at-random-region or global.
    Cardiomegaly negatives are global and require CTR <= ctr_max.
    """
    rng = random.Random(f"{seed}|{study_id}|negatives")
    mentioned = mentioned_positive_lesions(findings)

    # Target word of the first emitted positive basic instruction per lesion.
    basic_targets: dict[LesionType, str] = {}
    for g in sorted(grounded_lesions, key=lambda g: g.source_finding_index):
        if g.lesion is LesionType.CARDIOMEGALY or not g.grounded_locations:
            continue
        basic_targets.setdefault(g.lesion, target_word(g.lesion, g.certainty))

    empty_sorted = sort_labels(empty_locations)
    out: list[InstructionAnswerPair] = []

    def basic_negative(lesion: LesionType, target: str, label: AnatomicalLabel):
        locs = frozenset({label})
        instruction = bank.basic_instruction(target, locs)
        answer = bank.basic_negative_answer(target, locs)
        return _pair(
            study_id, lesion, TemplateType.BASIC, Polarity.NEGATIVE,
            instruction, answer, None, locs,
        )

    def inference_negative(lesion: LesionType, label: AnatomicalLabel):
        locs = frozenset({label})
        return _pair(
            study_id, lesion, TemplateType.LESION_INFERENCE, Polarity.NEGATIVE,
            bank.inference_instruction(locs),
            bank.inference_negative_answer(locs),
            None, locs,
        )

    def global_negative(lesion: LesionType):
        return _pair(
            study_id, lesion, TemplateType.GLOBAL, Polarity.NEGATIVE,
            bank.global_instruction(lesion.value),
            bank.global_negative_answer(lesion.value),
            None, frozenset(),
        )

    for lesion in ALL_LESIONS:
        if lesion is LesionType.CARDIOMEGALY:
            if lesion in mentioned or ctr is None or ctr > ctr_max:
                continue
            out.append(global_negative(lesion))
            continue

        if lesion in mentioned:
            target = basic_targets.get(lesion)
            if target is not None and empty_sorted:
                out.append(basic_negative(lesion, target, rng.choice(empty_sorted)))
            continue

        if empty_sorted:
            label = rng.choice(empty_sorted)
            if lesion is LesionType.OPACITY and rng.random() < 0.5:
                out.append(inference_negative(lesion, label))
            else:
                out.append(basic_negative(lesion, lesion.value, label))
        else:
            if rng.random() < 0.5:
                label = rng.choice(list(ALL_LABELS))
                if lesion is LesionType.OPACITY and rng.random() < 0.5:
                    out.append(inference_negative(lesion, label))
                else:
                    out.append(basic_negative(lesion, lesion.value, label))
            else:
                out.append(global_negative(lesion))

    return out


def generate_study_pairs(
    study_id: str,
    findings: Sequence[StructuredFinding],
    grounded: Sequence[tuple[GroundedLesion, str]],
    empty_locations: frozenset[AnatomicalLabel],
    ctr: float | None,
    seed: int,
    bank: TemplateBank = DEFAULT_BANK,
    ctr_max: float = 0.45,
) -> list[InstructionAnswerPair]:
    """All pairs for one study: positives per grounded lesion, then negatives.

    `grounded` pairs each verified lesion with its mask reference. A study
    must not ask the same instruction twice (distinct findings can render
    identical wording, e.g. via tentative target substitution), so duplicate
    instructions are dropped, first finding wins.
    """
    pairs: list[InstructionAnswerPair] = []
    for g, mask_ref in sorted(grounded, key=lambda item: item[0].source_finding_index):
        pairs += gen_basic(g, study_id, mask_ref, bank)
        pairs += gen_global(g, study_id, mask_ref, bank)
        pairs += gen_lesion_inference(g, study_id, mask_ref, bank)
    pairs += gen_negatives(
        findings,
        [g for g, _ in grounded],
        empty_locations,
        ctr,
        seed,
        study_id,
        bank,
        ctr_max,
    )
    seen: set[str] = set()
    unique = []
    for p in pairs:
        if p.instruction in seen:
            continue
        seen.add(p.instruction)
        unique.append(p)
    return unique


# --- dataset statistics --------------------------------------------------------


def pair_stats(pairs: Iterable[InstructionAnswerPair]) -> dict:
    """lesion × template × polarity counts, plus totals."""
    stats = {
        lesion.value: {
            ttype.value: {"pos": 0, "neg": 0} for ttype in TemplateType
        }
        for lesion in ALL_LESIONS
    }
    for p in pairs:
        cell = stats[p.lesion.value][p.template_type.value]
        cell["pos" if p.polarity is Polarity.POSITIVE else "neg"] += 1
    for lesion_row in stats.values():
        lesion_row["total"] = sum(
            c["pos"] + c["neg"] for k, c in lesion_row.items() if k != "total"
        )
    return stats


def render_stats_table(stats: Mapping) -> str:
    header = (
        f"{'lesion':<14}{'total':>8}{'bas+':>8}{'bas-':>8}"
        f"{'glo+':>8}{'glo-':>8}{'inf+':>8}{'inf-':>8}"
    )
    lines = [header, "-" * len(header)]
    totals = [0] * 7
    for lesion in ALL_LESIONS:
        row = stats[lesion.value]
        cells = [
            row["total"],
            row["basic"]["pos"], row["basic"]["neg"],
            row["global"]["pos"], row["global"]["neg"],
            row["lesion_inference"]["pos"], row["lesion_inference"]["neg"],
        ]
        totals = [t + c for t, c in zip(totals, cells)]
        lines.append(f"{lesion.value:<14}" + "".join(f"{c:>8}" for c in cells))
    lines.append("-" * len(header))
    lines.append(f"{'total':<14}" + "".join(f"{c:>8}" for c in totals))
    return "\n".join(lines)
