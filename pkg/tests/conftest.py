from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from crystal_eval.core import Example, Source, write_dataset
from crystal_eval.embeddings import ProviderDescriptor

WORDS = [
    "signal", "crossing", "ledge", "marker", "panel", "lens", "arrow", "shadow",
    "bridge", "label", "axis", "legend", "contour", "gauge", "tile", "beam",
]


def deterministic_descriptor(dim: int = 384) -> ProviderDescriptor:
    return ProviderDescriptor(encoder_id="deterministic-test",
                              endpoint="deterministic://", dim=dim)


def make_examples(n: int, seed: int = 7, min_steps: int = 3, max_steps: int = 8) -> list[Example]:
    rng = random.Random(seed)
    sources = list(Source)
    examples = []
    for i in range(n):
        k = rng.randint(min_steps, max_steps)
        steps = [
            f"example {i} step {j}: the {rng.choice(WORDS)} sits near the {rng.choice(WORDS)} number {i * 100 + j}"
            for j in range(k)
        ]
        kind = i % 4
        choices = None
        if kind == 0:
            gold = str(rng.randint(1, 500))
        elif kind == 1:
            gold = rng.choice(["B", "C", "D"])
            choices = [("A", "first option"), ("B", "second option"),
                       ("C", "third option"), ("D", "fourth option")]
        elif kind == 2:
            gold = rng.choice(["yes", "no"])
        else:
            gold = rng.choice(WORDS)
        examples.append(Example(
            id=f"ex-{i:04d}",
            source=sources[i % len(sources)],
            image_ref=f"images/{i:04d}.jpg",
            question=f"What does example {i} show near the {rng.choice(WORDS)}?",
            gold_answer=gold,
            reference_steps=steps,
            choices=choices,
        ))
    return examples


def write_prediction_file(path: Path, examples: list[Example],
                          reverse: bool = False,
                          malformed_ids: set[str] | None = None,
                          wrong_answer_ids: set[str] | None = None) -> Path:
    malformed_ids = malformed_ids or set()
    wrong_answer_ids = wrong_answer_ids or set()
    with path.open("w", encoding="utf-8") as fh:
        fh.write('{"format":"crystal/v1"}\n')
        for example in examples:
            if example.id in malformed_ids:
                raw = "The answer is probably fine."
            else:
                steps = list(reversed(example.reference_steps)) if reverse \
                    else list(example.reference_steps)
                answer = "definitely-wrong" if example.id in wrong_answer_ids \
                    else example.gold_answer
                raw = json.dumps({"reasoning_steps": steps, "answer": answer})
            fh.write(json.dumps({"example_id": example.id, "raw": raw}) + "\n")
    return path


def write_manifest(path: Path, dataset: Path, out_dir: Path,
                   predictions=None, **overrides) -> Path:
    manifest = {
        "dataset": str(dataset),
        "output_dir": str(out_dir),
        "encoder": deterministic_descriptor().to_dict(),
        "tau": 0.35,
        "alpha": 0.3,
        "seed": 42,
    }
    if predictions is not None:
        manifest["predictions"] = (str(predictions) if isinstance(predictions, (str, Path))
                                   else {k: str(v) for k, v in predictions.items()})
    manifest.update(overrides)
    path.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return path


@pytest.fixture
def synthetic_dataset(tmp_path: Path):
    examples = make_examples(24)
    dataset_path = tmp_path / "dataset.jsonl"
    write_dataset(dataset_path, examples)
    return examples, dataset_path
