"""Shared data model, JSONL serialization contracts, and structured-output parsing.

A dataset file is UTF-8 JSON-lines: a header line ``{"format":"crystal/v1"}``
followed by one example object per line. Prediction files use the same header
and carry the raw model output alongside its parsed form. Parsing of model
output is total: anything that does not contain the required JSON object
degrades to a placeholder prediction instead of failing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional

from .errors import DatasetUnreadable, MalformedRecord, MissingField

FORMAT_VERSION = "crystal/v1"
FORMAT_HEADER = {"format": FORMAT_VERSION}

# Sentinels for predictions whose output could not be parsed.
PLACEHOLDER_STEP = "[NO_STEPS_PARSED]"
EMPTY_ANSWER = ""


class Source(str, Enum):
    MATHVISION = "MathVision"
    SCIENCEQA_IMG = "ScienceQA-IMG"
    REALWORLDQA = "RealWorldQA"
    MMVP = "MMVP"
    PLOTQA = "PLOTQA"
    TEXTVQA = "TextVQA"
    OTHER = "other"


class ComplexityTier(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"


# Serialization order for known example fields; unknown fields follow in
# their original order so records round-trip faithfully.
_EXAMPLE_FIELDS = (
    "id",
    "source",
    "image_ref",
    "question",
    "choices",
    "gold_answer",
    "reference_steps",
    "complexity_tier",
)


@dataclass
class Example:
    """One benchmark item: question, image locator, gold answer, reference chain."""

    id: str
    source: Source
    image_ref: str
    question: str
    gold_answer: str
    reference_steps: list[str]
    choices: Optional[list[tuple[str, str]]] = None
    complexity_tier: Optional[ComplexityTier] = None
    extensions: dict[str, Any] = field(default_factory=dict)

    @property
    def reference_complete(self) -> bool:
        return len(self.reference_steps) > 0


@dataclass
class Prediction:
    """A model's parsed structured output for one example."""

    example_id: str
    steps: list[str]
    answer: str
    format_ok: bool
    raw: str


@dataclass
class EvalRecord:
    """Per-example step-metric and answer-correctness results."""

    example_id: str
    precision: float
    recall: float
    f1: float
    lis_ratio: float
    ordered_f1: float
    tp: int
    fp: int
    fn: int
    answer_correct: bool
    step_count_pred: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "example_id": self.example_id,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "lis_ratio": self.lis_ratio,
            "ordered_f1": self.ordered_f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "answer_correct": self.answer_correct,
            "step_count_pred": self.step_count_pred,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvalRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def parse_example(record: str, position: int = 0) -> Example:
    """Parse a single JSON-lines record into an Example.

    Unknown fields are preserved in ``extensions`` for round-trip fidelity.
    Raises MissingField / MalformedRecord; both abort only this record.
    """
    try:
        obj = json.loads(record)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(position, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise MalformedRecord(position, "record is not a JSON object")

    for name in ("id", "source", "image_ref", "question", "gold_answer"):
        value = obj.get(name)
        if not isinstance(value, str) or not value.strip():
            raise MissingField(name)
    if "reference_steps" not in obj:
        raise MissingField("reference_steps")

    try:
        source = Source(obj["source"])
    except ValueError as exc:
        raise MalformedRecord(position, f"unknown source: {obj['source']!r}") from exc

    raw_steps = obj["reference_steps"]
    if not isinstance(raw_steps, list) or not all(isinstance(s, str) for s in raw_steps):
        raise MalformedRecord(position, "reference_steps must be a list of strings")
    steps = [s.strip() for s in raw_steps]
    if any(not s for s in steps):
        raise MalformedRecord(position, "reference step empty after trimming")

    choices = None
    if obj.get("choices") is not None:
        raw_choices = obj["choices"]
        if not isinstance(raw_choices, list):
            raise MalformedRecord(position, "choices must be a list")
        choices = []
        for entry in raw_choices:
            if not (isinstance(entry, (list, tuple)) and len(entry) == 2
                    and all(isinstance(x, str) for x in entry)):
                raise MalformedRecord(position, "each choice must be a [label, text] pair")
            choices.append((entry[0], entry[1]))
        labels = [label for label, _ in choices]
        if len(set(labels)) != len(labels) or any(not (len(l) == 1 and l.isalpha()) for l in labels):
            raise MalformedRecord(position, "choice labels must be unique single letters")

    tier = None
    if obj.get("complexity_tier") is not None:
        try:
            tier = ComplexityTier(obj["complexity_tier"])
        except ValueError as exc:
            raise MalformedRecord(position, f"unknown complexity tier: {obj['complexity_tier']!r}") from exc

    extensions = {k: v for k, v in obj.items() if k not in _EXAMPLE_FIELDS}
    return Example(
        id=obj["id"],
        source=source,
        image_ref=obj["image_ref"],
        question=obj["question"],
        gold_answer=obj["gold_answer"],
        reference_steps=steps,
        choices=choices,
        complexity_tier=tier,
        extensions=extensions,
    )


def example_to_dict(example: Example) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "id": example.id,
        "source": example.source.value,
        "image_ref": example.image_ref,
        "question": example.question,
        "gold_answer": example.gold_answer,
        "reference_steps": list(example.reference_steps),
    }
    if example.choices is not None:
        obj["choices"] = [[label, text] for label, text in example.choices]
    if example.complexity_tier is not None:
        obj["complexity_tier"] = example.complexity_tier.value
    obj.update(example.extensions)
    return obj


def serialize_example(example: Example, canonical: bool = True) -> str:
    """Serialize to one JSON line; canonical mode sorts keys for byte-stable output."""
    return json.dumps(example_to_dict(example), sort_keys=canonical,
                      ensure_ascii=False, separators=(",", ":"))


def parse_prediction(raw: str, example_id: str) -> Prediction:
    """Parse arbitrary model output text into a Prediction. Never raises.

    Accepts the required JSON object anywhere in the text (one surrounding
    Markdown code fence and leading/trailing prose are tolerated). The object
    must carry ``reasoning_steps`` (list of strings) and ``answer`` (string);
    anything else degrades to a single placeholder step and an empty answer.
    """
    try:
        obj = _first_object_with_keys(raw, ("reasoning_steps", "answer"))
        if obj is not None:
            steps = obj["reasoning_steps"]
            answer = obj["answer"]
            if isinstance(steps, list) and all(isinstance(s, str) for s in steps) \
                    and isinstance(answer, str):
                return Prediction(
                    example_id=example_id,
                    steps=[s.strip() for s in steps],
                    answer=answer.strip(),
                    format_ok=True,
                    raw=raw,
                )
    except Exception:
        pass
    return Prediction(
        example_id=example_id,
        steps=[PLACEHOLDER_STEP],
        answer=EMPTY_ANSWER,
        format_ok=False,
        raw=raw,
    )


def _first_object_with_keys(text: str, keys: tuple[str, ...]) -> Optional[dict]:
    """Locate the first balanced top-level JSON object containing all ``keys``."""
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find("{", pos + 1)
            continue
        if isinstance(obj, dict) and all(k in obj for k in keys):
            return obj
        pos = text.find("{", pos + 1)
    return None


def prediction_to_dict(pred: Prediction) -> dict[str, Any]:
    return {
        "example_id": pred.example_id,
        "raw": pred.raw,
        "steps": list(pred.steps),
        "answer": pred.answer,
        "format_ok": pred.format_ok,
    }


def _check_header(line: str, path: Path) -> None:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetUnreadable(f"{path}: missing format header") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_VERSION:
        raise DatasetUnreadable(f"{path}: unsupported format header: {line.strip()!r}")


def load_dataset(path: str | Path, strict: bool = True) -> tuple[list[Example], list[tuple[int, Exception]]]:
    """Load a JSONL dataset file; returns (examples, per-record errors).

    With ``strict`` the first bad record raises; otherwise bad records are
    skipped and reported so one malformed line never aborts a run.
    """
    path = Path(path)
    examples: list[Example] = []
    errors: list[tuple[int, Exception]] = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetUnreadable(str(exc)) from exc
    if not lines:
        raise DatasetUnreadable(f"{path}: empty file")
    _check_header(lines[0], path)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            examples.append(parse_example(line, position=lineno))
        except (MissingField, MalformedRecord) as exc:
            if strict:
                raise
            errors.append((lineno, exc))
    return examples, errors


def write_dataset(path: str | Path, examples: Iterable[Example]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(FORMAT_HEADER, separators=(",", ":")) + "\n")
        for example in examples:
            fh.write(serialize_example(example) + "\n")


def load_predictions(path: str | Path) -> dict[str, Prediction]:
    """Load a prediction JSONL file keyed by example_id.

    The raw output is re-parsed so the stored parsed fields can never drift
    from the parser's behavior.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetUnreadable(str(exc)) from exc
    if not lines:
        raise DatasetUnreadable(f"{path}: empty file")
    _check_header(lines[0], path)
    predictions: dict[str, Prediction] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(lineno, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict) or "example_id" not in obj:
            raise MissingField("example_id")
        example_id = obj["example_id"]
        if "raw" in obj:
            predictions[example_id] = parse_prediction(obj["raw"], example_id)
        else:
            predictions[example_id] = Prediction(
                example_id=example_id,
                steps=[s.strip() for s in obj.get("steps", [PLACEHOLDER_STEP])],
                answer=obj.get("answer", EMPTY_ANSWER),
                format_ok=bool(obj.get("format_ok", False)),
                raw="",
            )
    return predictions


def write_predictions(path: str | Path, predictions: Iterable[Prediction]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(FORMAT_HEADER, separators=(",", ":")) + "\n")
        for pred in predictions:
            fh.write(json.dumps(prediction_to_dict(pred), ensure_ascii=False,
                                separators=(",", ":")) + "\n")
