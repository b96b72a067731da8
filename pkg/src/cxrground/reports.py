"""Report structuring: external findings adapter, rule-based structurer, location mapping.

The external adapter loads structured-finding files produced by whatever tool
sits upstream. The built-in structurer only understands a small constrained
report grammar — enough for synthetic studies and as a no-model fallback:

    No acute findings.
    No <entity>.
    [<hedge>] <entity> in the <location>[ and <location>...].
    [possibly] <location-phrase> <entity>.          e.g. "Bibasilar atelectasis."
    [possibly] cardiomegaly.
    The <location> opacity is [possibly] <lesion>.
    The <location> opacity may represent <lesion>.

Hedging cues ("possibly", "may represent", "suggestive of") mark a finding
tentative. Unknown location phrases are logged, never silently dropped.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

from .core import (
    AnatomicalLabel,
    Certainty,
    LesionType,
    Presence,
    StructuredFinding,
    finding_from_dict,
    lesion_from_text,
)


class ReportGrammarError(ValueError):
    """A report sentence falls outside the constrained grammar."""


class FindingsFileError(ValueError):
    """An external structured-findings record is malformed."""


@dataclass(frozen=True)
class LocationLexicon:
    """Table from lowercased location phrase to a non-empty set of labels."""

    entries: dict[str, frozenset[AnatomicalLabel]]

    def lookup(self, phrase: str) -> frozenset[AnatomicalLabel] | None:
        return self.entries.get(phrase.strip().lower())


def load_lexicon(path: str | Path) -> LocationLexicon:
    entries: dict[str, frozenset[AnatomicalLabel]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected phrase<TAB>labels")
            phrase, labels = line.split("\t", 1)
            labelset = frozenset(
                AnatomicalLabel(l.strip()) for l in labels.split(",") if l.strip()
            )
            if not labelset:
                raise ValueError(f"{path}:{lineno}: no labels for phrase {phrase!r}")
            entries[phrase.strip().lower()] = labelset
    return LocationLexicon(entries)


def default_lexicon() -> LocationLexicon:
    ref = resources.files("cxrground").joinpath("data/lexicon.tsv")
    with resources.as_file(ref) as p:
        return load_lexicon(p)


def map_locations(
    phrases: Iterable[str], lexicon: LocationLexicon
) -> tuple[frozenset[AnatomicalLabel], list[str]]:
    """Union of lexicon entries for all phrases; unknowns go to the side list."""
    labels: set[AnatomicalLabel] = set()
    unknown: list[str] = []
    for phrase in phrases:
        hit = lexicon.lookup(phrase)
        if hit is None:
            unknown.append(phrase)
        else:
            labels |= hit
    return frozenset(labels), unknown


def load_external_findings(path: str | Path) -> list[StructuredFinding]:
    """Load and validate an externally produced structured-findings file."""
    with open(path, encoding="utf-8") as fh:
        try:
            records = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FindingsFileError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(records, list):
        raise FindingsFileError(f"{path}: expected a JSON array of findings")
    findings = []
    for i, rec in enumerate(records):
        try:
            findings.append(finding_from_dict(rec))
        except (KeyError, TypeError, ValueError) as exc:
            field_name = _offending_field(rec, exc)
            raise FindingsFileError(
                f"{path}: record {i}, field {field_name}: {exc}"
            ) from exc
    return findings


def _offending_field(rec, exc: Exception) -> str:
    if isinstance(exc, KeyError):
        return str(exc)
    msg = str(exc)
    if not isinstance(rec, dict):
        return "<record>"
    for name in (
        "sentence_index",
        "presence",
        "certainty",
        "reported_locations",
        "predicted_lesion",
        "entity",
    ):
        if name in msg or (name == "reported_locations" and "location" in msg):
            return name
    return "<record>"


# --- built-in rule-based structurer -------------------------------------------

_HEDGE_CUES = ("possibly", "may represent", "suggestive of")

_NO_FINDING_SENTENCES = {
    "no acute findings",
    "no acute cardiopulmonary process",
    "lungs are clear",
}

_RE_NEGATED = re.compile(r"^no\s+(?P<entity>[a-z][a-z ]*)$")
_RE_OPACITY_IS = re.compile(
    r"^the\s+(?P<loc>[a-z][a-z ,]*?)\s+opacity\s+"
    r"(?:may represent|is possibly|is)\s+(?P<lesion>[a-z]+)$"
)
_RE_IN_THE = re.compile(
    r"^(?:(?P<hedge>possibly|may represent|suggestive of)\s+)?"
    r"(?P<entity>[a-z]+)\s+in\s+the\s+(?P<loc>[a-z][a-z ,]*)$"
)
_RE_PREFIX_LOC = re.compile(
    r"^(?:(?P<hedge>possibly)\s+)?(?:(?P<loc>[a-z][a-z ]*?)\s+)?(?P<entity>[a-z]+)$"
)


@dataclass
class StructureResult:
    findings: list[StructuredFinding]
    unknown_phrases: list[tuple[int, str]] = field(default_factory=list)
    dropped_sentences: list[tuple[int, str]] = field(default_factory=list)


def split_sentences(report: str) -> list[str]:
    return [s.strip() for s in report.split(".") if s.strip()]


def structure_report(
    report: str, lexicon: LocationLexicon | None = None
) -> StructureResult:
    """Produce one finding per abnormal-finding sentence of a constrained report.

    Raises ReportGrammarError on any sentence outside the grammar; unknown
    location phrases are collected (and the finding dropped if none of its
    phrases resolve) rather than aborting the study.
    """
    lexicon = lexicon or default_lexicon()
    result = StructureResult(findings=[])
    for idx, sentence in enumerate(split_sentences(report), start=1):
        text = re.sub(r"\s+", " ", sentence.lower()).strip()
        if text in _NO_FINDING_SENTENCES:
            continue
        finding = _parse_sentence(text, idx, lexicon, result)
        if finding is not None:
            result.findings.append(finding)
    return result


def _split_phrases(loc_text: str) -> list[str]:
    parts = re.split(r"\s+and\s+|,", loc_text)
    return [p.strip() for p in parts if p.strip()]


def _certainty(text: str) -> Certainty:
    return (
        Certainty.TENTATIVE
        if any(cue in text for cue in _HEDGE_CUES)
        else Certainty.DEFINITIVE
    )


def _parse_sentence(
    text: str, idx: int, lexicon: LocationLexicon, result: StructureResult
) -> StructuredFinding | None:
    m = _RE_NEGATED.match(text)
    if m:
        return StructuredFinding(
            entity=m.group("entity").strip(),
            sentence_index=idx,
            presence=Presence.NEGATIVE,
            certainty=Certainty.DEFINITIVE,
            reported_locations=frozenset(),
        )

    m = _RE_OPACITY_IS.match(text)
    if m:
        lesion = lesion_from_text(m.group("lesion"))
        if lesion is None:
            raise ReportGrammarError(
                f"sentence {idx}: unknown lesion type in {text!r}"
            )
        locations = _resolve_locations(m.group("loc"), idx, lexicon, result)
        if not locations:
            result.dropped_sentences.append((idx, text))
            return None
        return StructuredFinding(
            entity="opacity",
            sentence_index=idx,
            presence=Presence.POSITIVE,
            certainty=_certainty(text),
            reported_locations=locations,
            predicted_lesion=lesion,
        )

    m = _RE_IN_THE.match(text)
    if m:
        locations = _resolve_locations(m.group("loc"), idx, lexicon, result)
        if not locations:
            result.dropped_sentences.append((idx, text))
            return None
        return StructuredFinding(
            entity=m.group("entity"),
            sentence_index=idx,
            presence=Presence.POSITIVE,
            certainty=_certainty(text),
            reported_locations=locations,
        )

    m = _RE_PREFIX_LOC.match(text)
    if m:
        entity = m.group("entity")
        loc_text = m.group("loc")
        if lesion_from_text(entity) is None:
            # The prefix form only names the seven lesion types; anything else
            # is prose we refuse to guess at.
            raise ReportGrammarError(
                f"sentence {idx}: outside the report grammar: {text!r}"
            )
        if loc_text is None:
            # Bare lesion sentence: only valid for whole-organ cardiomegaly.
            if lesion_from_text(entity) is not LesionType.CARDIOMEGALY:
                raise ReportGrammarError(
                    f"sentence {idx}: positive finding without location: {text!r}"
                )
            return StructuredFinding(
                entity=entity,
                sentence_index=idx,
                presence=Presence.POSITIVE,
                certainty=_certainty(text),
                reported_locations=frozenset(),
            )
        locations = _resolve_locations(loc_text, idx, lexicon, result)
        if not locations:
            result.dropped_sentences.append((idx, text))
            return None
        return StructuredFinding(
            entity=entity,
            sentence_index=idx,
            presence=Presence.POSITIVE,
            certainty=_certainty(text),
            reported_locations=locations,
        )

    raise ReportGrammarError(f"sentence {idx}: outside the report grammar: {text!r}")


def _resolve_locations(
    loc_text: str, idx: int, lexicon: LocationLexicon, result: StructureResult
) -> frozenset[AnatomicalLabel]:
    labels, unknown = map_locations(_split_phrases(loc_text), lexicon)
    result.unknown_phrases.extend((idx, p) for p in unknown)
    return labels
