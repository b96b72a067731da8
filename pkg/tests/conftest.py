import json
from pathlib import Path

import pytest

from cxrground.config import default_config
from cxrground.pipeline import run_pipeline
from cxrground.synth import build_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A 16-study zero-jitter corpus shared across tests."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = build_corpus(root, 16, seed=101)
    return root, manifest


@pytest.fixture(scope="session")
def small_dataset(small_corpus, tmp_path_factory):
    """The small corpus run through the full pipeline."""
    root, manifest = small_corpus
    out = tmp_path_factory.mktemp("dataset")
    summary = run_pipeline(manifest, default_config(), out, parallelism=1)
    return root, out, summary


def load_pairs(out_dir: Path) -> list[dict]:
    return [
        json.loads(line)
        for line in (out_dir / "pairs.jsonl").read_text().splitlines()
        if line.strip()
    ]
