"""Expert-review HTTP service.

Positives go to every expert; negatives are split near-evenly by a seeded
shuffle. Verdicts land in an append-only JSONL log with last-write-wins
replay per (expert, sample). Export drops every sample with at least one
not_acceptable verdict and reports acceptance rates: per expert over their
own reviews, and overall where a positive counts as accepted only when all
experts accepted it.
"""

from __future__ import annotations

import io
import json
import random
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from pydantic import BaseModel

from .core import (
    ALL_LESIONS,
    InstructionAnswerPair,
    Polarity,
    pair_from_dict,
    sort_labels,
)
from .pipeline import overlay_bytes_array
from .storage import load_image_png, load_mask_png, read_json, read_jsonl


class VerdictIn(BaseModel):
    expert: str
    sample: str
    decision: str

ACCEPTABLE = "acceptable"
NOT_ACCEPTABLE = "not_acceptable"
DECISIONS = (ACCEPTABLE, NOT_ACCEPTABLE)


@dataclass(frozen=True)
class Verdict:
    expert_id: str
    sample_id: str
    decision: str
    timestamp: str

    def __post_init__(self):
        if self.decision not in DECISIONS:
            raise ValueError(f"decision must be one of {DECISIONS}")


def assign_samples(
    samples: Sequence[InstructionAnswerPair], experts: Sequence[str], seed: int = 0
) -> dict[str, list[str]]:
    """Per-expert worklists: all positives for everyone, negatives partitioned
    near-evenly (sizes differ by at most one) by a seeded shuffle."""
    if not experts:
        raise ValueError("at least one expert is required")
    positives = sorted(
        (s.pair_id for s in samples if s.polarity is Polarity.POSITIVE)
    )
    negatives = sorted(
        (s.pair_id for s in samples if s.polarity is Polarity.NEGATIVE)
    )
    rng = random.Random(f"{seed}|assignment")
    rng.shuffle(negatives)
    worklists = {e: list(positives) for e in experts}
    for i, sid in enumerate(negatives):
        worklists[experts[i % len(experts)]].append(sid)
    return worklists


class VerdictStore:
    """Append-only verdict log; one writer lock, lock-free snapshot reads."""

    def __init__(self, log_path: str | Path):
        self._path = Path(log_path)
        self._lock = threading.Lock()
        self._verdicts: dict[tuple[str, str], Verdict] = {}
        if self._path.exists():
            for rec in read_jsonl(self._path):
                v = Verdict(
                    expert_id=rec["expert"],
                    sample_id=rec["sample"],
                    decision=rec["decision"],
                    timestamp=rec.get("timestamp", ""),
                )
                self._verdicts[(v.expert_id, v.sample_id)] = v

    def submit(self, expert_id: str, sample_id: str, decision: str) -> Verdict:
        v = Verdict(
            expert_id=expert_id,
            sample_id=sample_id,
            decision=decision,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        line = json.dumps(
            {
                "expert": v.expert_id,
                "sample": v.sample_id,
                "decision": v.decision,
                "timestamp": v.timestamp,
            },
            sort_keys=True,
        )
        with self._lock:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            with open(self._path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
            self._verdicts[(v.expert_id, v.sample_id)] = v
        return v

    def get(self, expert_id: str, sample_id: str) -> Verdict | None:
        return self._verdicts.get((expert_id, sample_id))

    def snapshot(self) -> dict[tuple[str, str], Verdict]:
        return dict(self._verdicts)


def _rate(correct: int, total: int) -> float | None:
    return correct / total if total else None


def build_export(
    samples: Sequence[InstructionAnswerPair],
    worklists: dict[str, list[str]],
    store: VerdictStore,
) -> dict:
    """Filtered split plus the acceptance report."""
    verdicts = store.snapshot()
    experts = sorted(worklists)
    by_id = {s.pair_id: s for s in samples}
    assigned_to: dict[str, list[str]] = {}
    for expert, ids in worklists.items():
        for sid in ids:
            assigned_to.setdefault(sid, []).append(expert)

    excluded, kept, unreviewed = [], [], []
    per_sample_state: dict[str, dict] = {}
    for sid in sorted(by_id):
        assignees = assigned_to.get(sid, [])
        got = {e: verdicts.get((e, sid)) for e in assignees}
        rejected = any(v is not None and v.decision == NOT_ACCEPTABLE for v in got.values())
        complete = all(v is not None for v in got.values()) and bool(assignees)
        per_sample_state[sid] = {"rejected": rejected, "complete": complete, "got": got}
        (excluded if rejected else kept).append(sid)
        if not complete:
            unreviewed.append(sid)

    def rates_for(ids: Iterable[tuple[str, bool]]) -> dict:
        # ids: (sample_id, accepted) over reviewed samples only
        pos_c = pos_t = neg_c = neg_t = 0
        for sid, accepted in ids:
            if by_id[sid].polarity is Polarity.POSITIVE:
                pos_t += 1
                pos_c += int(accepted)
            else:
                neg_t += 1
                neg_c += int(accepted)
        return {
            "total": {"rate": _rate(pos_c + neg_c, pos_t + neg_t), "n": pos_t + neg_t},
            "positive": {"rate": _rate(pos_c, pos_t), "n": pos_t},
            "negative": {"rate": _rate(neg_c, neg_t), "n": neg_t},
        }

    per_expert = {}
    for expert in experts:
        reviewed = []
        for sid in worklists[expert]:
            v = verdicts.get((expert, sid))
            if v is not None:
                reviewed.append((sid, v.decision == ACCEPTABLE))
        per_expert[expert] = rates_for(reviewed)

    # Overall: positives count as accepted only when every expert accepted.
    overall_rows = []
    for sid, state in per_sample_state.items():
        if not state["complete"]:
            continue
        overall_rows.append((sid, not state["rejected"]))
    overall = rates_for(overall_rows)

    per_lesion: dict[str, dict] = {}
    for lesion in ALL_LESIONS:
        rows = [
            (sid, not per_sample_state[sid]["rejected"])
            for sid in sorted(by_id)
            if by_id[sid].lesion is lesion and per_sample_state[sid]["complete"]
        ]
        per_lesion[lesion.value] = rates_for(rows)

    return {
        "kept": kept,
        "excluded": excluded,
        "unreviewed": unreviewed,
        "report": {
            "experts": per_expert,
            "overall": overall,
            "per_lesion": per_lesion,
        },
    }


class ReviewDataset:
    """Dataset directory + source corpus lookup for sample metadata and overlays."""

    def __init__(self, dataset_dir: str | Path):
        self.dataset_dir = Path(dataset_dir)
        self.samples = [
            pair_from_dict(r) for r in read_jsonl(self.dataset_dir / "pairs.jsonl")
        ]
        meta = read_json(self.dataset_dir / "run_meta.json")
        self.root = Path(meta["root"])
        self._records: dict[str, dict] = {}

    def record(self, study_id: str) -> dict:
        if study_id not in self._records:
            self._records[study_id] = read_json(
                self.dataset_dir / "records" / f"{study_id}.json"
            )
        return self._records[study_id]

    def overlay_png(self, pair: InstructionAnswerPair, tint: bool = True) -> bytes:
        record = self.record(pair.study_id)
        image = load_image_png(self.root / record["image"])
        mask = (
            load_mask_png(self.dataset_dir / pair.mask_ref)
            if pair.mask_ref and tint
            else None
        )
        from PIL import Image as PILImage

        buf = io.BytesIO()
        PILImage.fromarray(overlay_bytes_array(image, mask), mode="RGB").save(
            buf, format="PNG"
        )
        return buf.getvalue()


def create_app(
    dataset_dir: str | Path,
    experts: Sequence[str],
    seed: int = 0,
    log_path: str | Path | None = None,
    static_dir: str | Path | None = None,
):
    """FastAPI application implementing the review workflow."""
    from fastapi import FastAPI, HTTPException, Response
    from fastapi.staticfiles import StaticFiles

    data = ReviewDataset(dataset_dir)
    worklists = assign_samples(data.samples, list(experts), seed)
    worklist_sets = {e: set(ids) for e, ids in worklists.items()}
    store = VerdictStore(log_path or Path(dataset_dir) / "verdicts.log")
    by_id = {s.pair_id: s for s in data.samples}

    app = FastAPI(title="lesion-mask review")

    @app.get("/api/worklist")
    def worklist(expert: str):
        if expert not in worklists:
            raise HTTPException(status_code=404, detail=f"unknown expert {expert!r}")
        items = []
        reviewed = 0
        for sid in worklists[expert]:
            pair = by_id[sid]
            v = store.get(expert, sid)
            reviewed += int(v is not None)
            items.append(
                {
                    "sample_id": sid,
                    "lesion": pair.lesion.value,
                    "polarity": pair.polarity.value,
                    "template_type": pair.template_type.value,
                    "status": "reviewed" if v else "pending",
                    "decision": v.decision if v else None,
                }
            )
        return {
            "expert": expert,
            "samples": items,
            "progress": {"reviewed": reviewed, "assigned": len(items)},
        }

    @app.get("/api/sample/{sample_id}")
    def sample(sample_id: str):
        pair = by_id.get(sample_id)
        if pair is None:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id!r}")
        record = data.record(pair.study_id)
        return {
            "sample_id": pair.pair_id,
            "study_id": pair.study_id,
            "lesion": pair.lesion.value,
            "polarity": pair.polarity.value,
            "template_type": pair.template_type.value,
            "locations": [l.value for l in sort_labels(pair.locations)],
            "instruction": pair.instruction,
            "answer_text": pair.answer_text,
            "report": record.get("report", ""),
        }

    @app.get("/api/sample/{sample_id}/overlay.png")
    def overlay(sample_id: str, tint: int = 1):
        pair = by_id.get(sample_id)
        if pair is None:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id!r}")
        return Response(
            content=data.overlay_png(pair, tint=bool(tint)), media_type="image/png"
        )

    @app.post("/api/verdict", status_code=204)
    def verdict(v: VerdictIn):
        if v.expert not in worklists:
            raise HTTPException(status_code=404, detail=f"unknown expert {v.expert!r}")
        if v.sample not in by_id:
            raise HTTPException(status_code=404, detail=f"unknown sample {v.sample!r}")
        if v.sample not in worklist_sets[v.expert]:
            raise HTTPException(
                status_code=403, detail="sample is not on this expert's worklist"
            )
        if v.decision not in DECISIONS:
            raise HTTPException(
                status_code=422, detail=f"decision must be one of {DECISIONS}"
            )
        store.submit(v.expert, v.sample, v.decision)
        return Response(status_code=204)

    @app.get("/api/export")
    def export():
        return build_export(data.samples, worklists, store)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
