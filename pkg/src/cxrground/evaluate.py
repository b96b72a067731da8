"""Scoring of model predictions against a generated dataset.

Segmentation metrics over positive pairs: gIoU (mean per-sample IoU) and cIoU
(total intersection over total union). Negative pairs score N-Acc, the
fraction predicted maskless. Text responses are correct only when they
re-parse to the same template with all variables matching the structured
ground truth (location comparison is set-based, not surface order).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import (
    ALL_LESIONS,
    InstructionAnswerPair,
    Polarity,
    RasterMask,
    TemplateType,
    pair_from_dict,
)
from .pairgen import DEFAULT_BANK, TemplateBank
from .raster import iou, overlap_area
from .storage import load_mask_png, read_jsonl


@dataclass(frozen=True)
class Prediction:
    pair_id: str
    mask: RasterMask | None
    answer_text: str


@dataclass
class _SegAccumulator:
    iou_sum: float = 0.0
    n_pos: int = 0
    inter_sum: int = 0
    union_sum: int = 0
    neg_correct: int = 0
    n_neg: int = 0

    def result(self) -> dict:
        return {
            "giou": self.iou_sum / self.n_pos if self.n_pos else None,
            "ciou": self.inter_sum / self.union_sum if self.union_sum else None,
            "n_acc": self.neg_correct / self.n_neg if self.n_neg else None,
            "n_positive": self.n_pos,
            "n_negative": self.n_neg,
        }


def score_segmentation(
    predictions: Sequence[Prediction],
    pairs: Sequence[InstructionAnswerPair],
    gt_masks: Mapping[str, RasterMask],
) -> dict:
    """Overall and per-lesion gIoU / cIoU / N-Acc.

    A missing or null prediction on a positive pair contributes IoU 0 (and
    its ground-truth area to the union sum); on a negative pair a missing
    prediction scores incorrect, while a null or empty mask is correct.
    """
    known = {p.pair_id for p in pairs}
    by_id: dict[str, Prediction] = {}
    for pred in predictions:
        if pred.pair_id not in known:
            raise KeyError(f"prediction references unknown pair_id {pred.pair_id!r}")
        by_id[pred.pair_id] = pred

    overall = _SegAccumulator()
    per_lesion = {l.value: _SegAccumulator() for l in ALL_LESIONS}

    for pair in pairs:
        accs = (overall, per_lesion[pair.lesion.value])
        pred = by_id.get(pair.pair_id)
        if pair.polarity is Polarity.POSITIVE:
            gt = gt_masks[pair.pair_id]
            if pred is None or pred.mask is None:
                pair_iou, inter, union = 0.0, 0, gt.area
            else:
                pair_iou = iou(pred.mask, gt)
                inter = overlap_area(pred.mask, gt)
                union = pred.mask.area + gt.area - inter
            for acc in accs:
                acc.iou_sum += pair_iou
                acc.n_pos += 1
                acc.inter_sum += inter
                acc.union_sum += union
        else:
            correct = pred is not None and (pred.mask is None or pred.mask.is_empty())
            for acc in accs:
                acc.n_neg += 1
                acc.neg_correct += int(correct)

    return {
        "overall": overall.result(),
        "per_lesion": {k: a.result() for k, a in per_lesion.items()},
    }


@dataclass
class _Rate:
    correct: int = 0
    total: int = 0

    def result(self) -> float | None:
        return self.correct / self.total if self.total else None


def score_text(
    predictions: Sequence[Prediction],
    pairs: Sequence[InstructionAnswerPair],
    bank: TemplateBank = DEFAULT_BANK,
) -> dict:
    """Strict text accuracy: overall, per template type, per polarity, per lesion."""
    known = {p.pair_id for p in pairs}
    by_id: dict[str, Prediction] = {}
    for pred in predictions:
        if pred.pair_id not in known:
            raise KeyError(f"prediction references unknown pair_id {pred.pair_id!r}")
        by_id[pred.pair_id] = pred

    overall = _Rate()
    per_template = {t.value: _Rate() for t in TemplateType}
    per_polarity = {p.value: _Rate() for p in Polarity}
    per_lesion = {l.value: _Rate() for l in ALL_LESIONS}

    for pair in pairs:
        expected = bank.parse(pair.instruction, pair.answer_text)
        if expected is None:
            raise ValueError(
                f"ground-truth pair {pair.pair_id} does not re-parse under the templates"
            )
        pred = by_id.get(pair.pair_id)
        got = bank.parse(pair.instruction, pred.answer_text) if pred else None
        correct = got == expected
        for rate in (
            overall,
            per_template[pair.template_type.value],
            per_polarity[pair.polarity.value],
            per_lesion[pair.lesion.value],
        ):
            rate.total += 1
            rate.correct += int(correct)

    return {
        "overall": overall.result(),
        "per_template": {k: r.result() for k, r in per_template.items()},
        "per_polarity": {k: r.result() for k, r in per_polarity.items()},
        "per_lesion": {k: r.result() for k, r in per_lesion.items()},
    }


def load_predictions(path: str | Path) -> list[Prediction]:
    """JSON Lines: {pair_id, mask_path or null, answer_text}; mask paths
    resolve relative to the predictions file."""
    base = Path(path).parent
    preds = []
    for rec in read_jsonl(path):
        mask_path = rec.get("mask_path")
        mask = None
        if mask_path:
            p = Path(mask_path)
            mask = load_mask_png(p if p.is_absolute() else base / p)
        preds.append(
            Prediction(
                pair_id=str(rec["pair_id"]),
                mask=mask,
                answer_text=str(rec.get("answer_text", "")),
            )
        )
    return preds


def load_dataset_pairs(dataset_dir: str | Path) -> list[InstructionAnswerPair]:
    return [pair_from_dict(r) for r in read_jsonl(Path(dataset_dir) / "pairs.jsonl")]


def load_gt_masks(
    dataset_dir: str | Path, pairs: Iterable[InstructionAnswerPair]
) -> dict[str, RasterMask]:
    base = Path(dataset_dir)
    masks = {}
    for pair in pairs:
        if pair.mask_ref is not None:
            masks[pair.pair_id] = load_mask_png(base / pair.mask_ref)
    return masks


def evaluate_dataset(dataset_dir: str | Path, predictions_path: str | Path) -> dict:
    pairs = load_dataset_pairs(dataset_dir)
    preds = load_predictions(predictions_path)
    gt_masks = load_gt_masks(dataset_dir, pairs)
    return {
        "segmentation": score_segmentation(preds, pairs, gt_masks),
        "text": score_text(preds, pairs),
    }


def _pct(v: float | None) -> str:
    return f"{100.0 * v:.1f}" if v is not None else "-"


def render_report_table(report: dict) -> str:
    seg = report["segmentation"]
    lines = ["Segmentation (%)", f"{'lesion':<16}{'gIoU':>8}{'cIoU':>8}{'N-Acc':>8}"]
    for lesion in ALL_LESIONS:
        r = seg["per_lesion"][lesion.value]
        lines.append(
            f"{lesion.value:<16}{_pct(r['giou']):>8}{_pct(r['ciou']):>8}{_pct(r['n_acc']):>8}"
        )
    o = seg["overall"]
    lines.append(
        f"{'total':<16}{_pct(o['giou']):>8}{_pct(o['ciou']):>8}{_pct(o['n_acc']):>8}"
    )
    txt = report["text"]
    lines += ["", "Text accuracy (%)"]
    lines.append(f"{'overall':<20}{_pct(txt['overall']):>8}")
    for t in TemplateType:
        lines.append(f"{t.value:<20}{_pct(txt['per_template'][t.value]):>8}")
    for p in Polarity:
        lines.append(f"{p.value:<20}{_pct(txt['per_polarity'][p.value]):>8}")
    for lesion in ALL_LESIONS:
        lines.append(f"{lesion.value:<20}{_pct(txt['per_lesion'][lesion.value]):>8}")
    return "\n".join(lines)
