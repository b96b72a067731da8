import json

import pytest

from cxrground.cli import main
from cxrground.storage import load_detections, save_detections
from cxrground.core import DetectionBox


def test_usage_error_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["run"])  # missing required flags
    assert exc.value.code == 1


def test_data_error_exits_two(tmp_path, capsys):
    rc = main(["run", "--manifest", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_synth_run_eval_round_trip(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    dataset = tmp_path / "ds"
    assert main(["synth", "--out", str(corpus), "--studies", "4", "--seed", "8"]) == 0
    assert (
        main(["run", "--manifest", str(corpus / "manifest.jsonl"), "--out", str(dataset)])
        == 0
    )
    pairs = [json.loads(l) for l in (dataset / "pairs.jsonl").read_text().splitlines()]
    assert pairs
    preds = dataset / "preds.jsonl"
    preds.write_text(
        "\n".join(
            json.dumps(
                {"pair_id": p["pair_id"], "mask_path": p["mask_ref"], "answer_text": p["answer_text"]}
            )
            for p in pairs
        )
    )
    assert main(["eval", "--dataset", str(dataset), "--predictions", str(preds)]) == 0
    out = capsys.readouterr().out
    assert "100.0" in out


def test_detections_file_round_trip(tmp_path):
    boxes = [
        DetectionBox("pneumonia", 0.875, 3, 4, 10, 12),
        DetectionBox("edema", 0.05, 0, 0, 2, 2),
    ]
    p = tmp_path / "det.json"
    save_detections(boxes, p)
    assert load_detections(p, 20, 20) == boxes
