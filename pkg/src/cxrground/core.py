"""Shared domain types for the lesion-grounding pipeline.

Everything here is immutable after construction and safe to share across
parallel workers. Masks are logically coordinate sets; internally they are
numpy bitmaps and equality is set equality.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np


class Presence(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class Certainty(str, enum.Enum):
    DEFINITIVE = "definitive"
    TENTATIVE = "tentative"


class Split(str, enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


class TemplateType(str, enum.Enum):
    BASIC = "basic"
    GLOBAL = "global"
    LESION_INFERENCE = "lesion_inference"


class Polarity(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class AnatomicalLabel(str, enum.Enum):
    """The ten valid target locations, declared in canonical phrase order
    (right before left, broad region before apical/upper/mid/base zones)."""

    RIGHT_LUNG = "right lung"
    RIGHT_APICAL = "right apical zone"
    RIGHT_UPPER = "right upper zone lung"
    RIGHT_MID = "right mid zone lung"
    RIGHT_BASE = "right lung base"
    LEFT_LUNG = "left lung"
    LEFT_APICAL = "left apical zone"
    LEFT_UPPER = "left upper zone lung"
    LEFT_MID = "left mid zone lung"
    LEFT_BASE = "left lung base"


ALL_LABELS: tuple[AnatomicalLabel, ...] = tuple(AnatomicalLabel)
_LABEL_ORDER: dict[AnatomicalLabel, int] = {l: i for i, l in enumerate(ALL_LABELS)}

ZONE_LABELS: tuple[AnatomicalLabel, ...] = tuple(
    l for l in ALL_LABELS if l not in (AnatomicalLabel.RIGHT_LUNG, AnatomicalLabel.LEFT_LUNG)
)


def sort_labels(labels: Iterable[AnatomicalLabel]) -> list[AnatomicalLabel]:
    """Canonical deterministic ordering used for phrases, hashing, and RNG draws."""
    return sorted(labels, key=_LABEL_ORDER.__getitem__)


class LesionType(str, enum.Enum):
    CARDIOMEGALY = "cardiomegaly"
    PNEUMONIA = "pneumonia"
    ATELECTASIS = "atelectasis"
    OPACITY = "opacity"
    CONSOLIDATION = "consolidation"
    EDEMA = "edema"
    EFFUSION = "effusion"


ALL_LESIONS: tuple[LesionType, ...] = tuple(LesionType)

# Lesions whose basic instructions are additionally transformed into
# opacity-type-prediction instructions.
INFERENCE_LESIONS: frozenset[LesionType] = frozenset(
    {LesionType.PNEUMONIA, LesionType.ATELECTASIS, LesionType.EDEMA}
)


def lesion_from_text(text: str) -> LesionType | None:
    """Match free entity text against the seven lesion names.

    Exact match wins; otherwise a single unambiguous word match (so
    "focal consolidation" resolves to consolidation).
    """
    t = text.strip().lower()
    try:
        return LesionType(t)
    except ValueError:
        pass
    hits = [l for l in ALL_LESIONS if l.value in t.split()]
    return hits[0] if len(hits) == 1 else None


class RasterMask:
    """A binary pixel set over an H×W grid.

    Stored as a read-only boolean bitmap; compares by set equality. Members
    are (row, col) coordinates in [0, height) × [0, width).
    """

    __slots__ = ("width", "height", "pixels")

    def __init__(self, pixels: np.ndarray):
        arr = np.ascontiguousarray(pixels, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"mask array must be 2-D, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)
        object.__setattr__(self, "height", int(arr.shape[0]))
        object.__setattr__(self, "width", int(arr.shape[1]))

    def __setattr__(self, name, value):
        raise AttributeError("RasterMask is immutable")

    @classmethod
    def empty(cls, width: int, height: int) -> "RasterMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "RasterMask":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def from_members(
        cls, width: int, height: int, members: Iterable[tuple[int, int]]
    ) -> "RasterMask":
        arr = np.zeros((height, width), dtype=bool)
        for r, c in members:
            if not (0 <= r < height and 0 <= c < width):
                raise ValueError(f"member ({r}, {c}) outside {width}x{height} grid")
            arr[r, c] = True
        return cls(arr)

    @property
    def members(self) -> frozenset[tuple[int, int]]:
        rows, cols = np.nonzero(self.pixels)
        return frozenset(zip(rows.tolist(), cols.tolist()))

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.pixels))

    def is_empty(self) -> bool:
        return not self.pixels.any()

    def same_grid(self, other: "RasterMask") -> bool:
        return self.width == other.width and self.height == other.height

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterMask):
            return NotImplemented
        return self.same_grid(other) and bool(np.array_equal(self.pixels, other.pixels))

    def __repr__(self) -> str:
        return f"RasterMask({self.width}x{self.height}, area={self.area})"


class ImageGray:
    """Grayscale raster with explicit bit depth (I_max = 2^bit_depth − 1)."""

    __slots__ = ("width", "height", "pixels", "bit_depth")

    def __init__(self, pixels: np.ndarray, bit_depth: int = 8):
        arr = np.ascontiguousarray(pixels)
        if arr.ndim != 2:
            raise ValueError(f"image array must be 2-D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"image pixels must be integers, got dtype {arr.dtype}")
        i_max = (1 << bit_depth) - 1
        if arr.size and (int(arr.min()) < 0 or int(arr.max()) > i_max):
            raise ValueError(
                f"intensity out of range for {bit_depth}-bit image (I_max={i_max})"
            )
        arr = arr.astype(np.uint8 if bit_depth <= 8 else np.uint16, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)
        object.__setattr__(self, "height", int(arr.shape[0]))
        object.__setattr__(self, "width", int(arr.shape[1]))
        object.__setattr__(self, "bit_depth", int(bit_depth))

    def __setattr__(self, name, value):
        raise AttributeError("ImageGray is immutable")

    @property
    def i_max(self) -> int:
        return (1 << self.bit_depth) - 1

    def same_grid(self, other) -> bool:
        return self.width == other.width and self.height == other.height

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageGray):
            return NotImplemented
        return (
            self.bit_depth == other.bit_depth
            and self.same_grid(other)
            and bool(np.array_equal(self.pixels, other.pixels))
        )

    def __repr__(self) -> str:
        return f"ImageGray({self.width}x{self.height}, bit_depth={self.bit_depth})"


@dataclass(frozen=True)
class DetectionBox:
    """One detector output: inclusive pixel box with a confidence score."""

    label: str
    confidence: float
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(
                f"degenerate box ({self.x_min},{self.y_min},{self.x_max},{self.y_max})"
            )

    def check_bounds(self, width: int, height: int) -> None:
        if self.x_min < 0 or self.y_min < 0 or self.x_max >= width or self.y_max >= height:
            raise ValueError(
                f"box ({self.x_min},{self.y_min},{self.x_max},{self.y_max}) "
                f"outside {width}x{height} image"
            )


@dataclass(frozen=True)
class ThresholdSet:
    """The five grounding thresholds, all in [0, 1]."""

    tau_ano: float
    tau_anatomy: float
    tau_conf: float
    tau_signal: float
    tau_size: float

    def __post_init__(self):
        for name in ("tau_ano", "tau_anatomy", "tau_conf", "tau_signal", "tau_size"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class StructuredFinding:
    """Six-element tuple extracted from one report sentence."""

    entity: str
    sentence_index: int
    presence: Presence
    certainty: Certainty
    reported_locations: frozenset[AnatomicalLabel]
    predicted_lesion: LesionType | None = None

    def __post_init__(self):
        if self.sentence_index < 1:
            raise ValueError(f"sentence_index must be >= 1, got {self.sentence_index}")
        if (
            self.presence is Presence.POSITIVE
            and not self.reported_locations
            and not self.is_cardiomegaly
        ):
            raise ValueError(
                f"positive finding {self.entity!r} must map to at least one location"
            )

    @property
    def is_cardiomegaly(self) -> bool:
        """Cardiomegaly is a whole-organ condition and carries no lung labels."""
        return (
            self.predicted_lesion is LesionType.CARDIOMEGALY
            or lesion_from_text(self.entity) is LesionType.CARDIOMEGALY
        )

    @property
    def effective_lesion(self) -> LesionType | None:
        """Dataset lesion class: the predicted type when present, else the entity."""
        if self.predicted_lesion is not None:
            return self.predicted_lesion
        return lesion_from_text(self.entity)


@dataclass(frozen=True)
class ProviderArtifacts:
    """Paths (relative to the manifest root) of the per-study vision artifacts."""

    edited_image: str
    anatomy_mask_directory: str
    detections_file: str
    organ_masks: Mapping[str, str]  # keys: right_lung, left_lung, heart

    ORGAN_KEYS = ("right_lung", "left_lung", "heart")


@dataclass(frozen=True)
class Study:
    study_id: str
    image: str
    report: str
    split: Split
    provider_artifacts: ProviderArtifacts
    qc_flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class GroundedLesion:
    """A verified lesion: mask plus reported/grounded/empty location sets."""

    lesion: LesionType
    certainty: Certainty
    mask: RasterMask
    reported_locations: frozenset[AnatomicalLabel]
    grounded_locations: frozenset[AnatomicalLabel]
    empty_locations: frozenset[AnatomicalLabel]
    source_finding_index: int

    def __post_init__(self):
        if not self.grounded_locations <= self.reported_locations:
            raise ValueError("grounded_locations must be a subset of reported_locations")
        if self.empty_locations & self.reported_locations:
            raise ValueError("empty_locations must be disjoint from reported_locations")
        if self.mask.is_empty():
            raise ValueError("grounded lesion mask must be non-empty")


@dataclass(frozen=True)
class InstructionAnswerPair:
    """One dataset sample. Negative polarity means no mask reference."""

    pair_id: str
    study_id: str
    lesion: LesionType
    template_type: TemplateType
    polarity: Polarity
    instruction: str
    answer_text: str
    mask_ref: str | None
    locations: frozenset[AnatomicalLabel] = field(default_factory=frozenset)

    def __post_init__(self):
        if (self.polarity is Polarity.NEGATIVE) != (self.mask_ref is None):
            raise ValueError("polarity is negative iff mask_ref is None")


def make_pair_id(
    study_id: str,
    lesion: LesionType,
    template_type: TemplateType,
    polarity: Polarity,
    locations: Iterable[AnatomicalLabel],
    instruction: str,
    answer_text: str,
) -> str:
    """Stable content hash so reruns and shards produce joinable ids."""
    parts = "\x1f".join(
        [
            study_id,
            lesion.value,
            template_type.value,
            polarity.value,
            ",".join(l.value for l in sort_labels(locations)),
            instruction,
            answer_text,
        ]
    )
    return hashlib.sha1(parts.encode("utf-8")).hexdigest()[:16]


# --- dict (de)serialization for the declared JSON formats ---------------------


def finding_to_dict(f: StructuredFinding) -> dict:
    return {
        "entity": f.entity,
        "sentence_index": f.sentence_index,
        "presence": f.presence.value,
        "certainty": f.certainty.value,
        "reported_locations": [l.value for l in sort_labels(f.reported_locations)],
        "predicted_lesion": f.predicted_lesion.value if f.predicted_lesion else None,
    }


def finding_from_dict(d: Mapping) -> StructuredFinding:
    pred = d.get("predicted_lesion")
    return StructuredFinding(
        entity=str(d["entity"]),
        sentence_index=int(d["sentence_index"]),
        presence=Presence(d["presence"]),
        certainty=Certainty(d["certainty"]),
        reported_locations=frozenset(AnatomicalLabel(l) for l in d["reported_locations"]),
        predicted_lesion=LesionType(pred) if pred else None,
    )


def study_to_dict(s: Study) -> dict:
    d = {
        "study_id": s.study_id,
        "image": s.image,
        "report": s.report,
        "split": s.split.value,
        "provider_artifacts": {
            "edited_image": s.provider_artifacts.edited_image,
            "anatomy_mask_directory": s.provider_artifacts.anatomy_mask_directory,
            "detections_file": s.provider_artifacts.detections_file,
            "organ_masks": dict(s.provider_artifacts.organ_masks),
        },
    }
    if s.qc_flags:
        d["qc_flags"] = list(s.qc_flags)
    return d


def study_from_dict(d: Mapping) -> Study:
    pa = d["provider_artifacts"]
    organ = dict(pa["organ_masks"])
    missing = [k for k in ProviderArtifacts.ORGAN_KEYS if k not in organ]
    if missing:
        raise ValueError(f"organ_masks missing keys: {missing}")
    return Study(
        study_id=str(d["study_id"]),
        image=str(d["image"]),
        report=str(d["report"]),
        split=Split(d["split"]),
        provider_artifacts=ProviderArtifacts(
            edited_image=str(pa["edited_image"]),
            anatomy_mask_directory=str(pa["anatomy_mask_directory"]),
            detections_file=str(pa["detections_file"]),
            organ_masks=organ,
        ),
        qc_flags=tuple(d.get("qc_flags", ())),
    )


def pair_to_dict(p: InstructionAnswerPair) -> dict:
    return {
        "pair_id": p.pair_id,
        "study_id": p.study_id,
        "lesion": p.lesion.value,
        "template_type": p.template_type.value,
        "polarity": p.polarity.value,
        "instruction": p.instruction,
        "answer_text": p.answer_text,
        "mask_ref": p.mask_ref,
        "locations": [l.value for l in sort_labels(p.locations)],
    }


def pair_from_dict(d: Mapping) -> InstructionAnswerPair:
    return InstructionAnswerPair(
        pair_id=str(d["pair_id"]),
        study_id=str(d["study_id"]),
        lesion=LesionType(d["lesion"]),
        template_type=TemplateType(d["template_type"]),
        polarity=Polarity(d["polarity"]),
        instruction=str(d["instruction"]),
        answer_text=str(d["answer_text"]),
        mask_ref=d.get("mask_ref"),
        locations=frozenset(AnatomicalLabel(l) for l in d.get("locations", ())),
    )
