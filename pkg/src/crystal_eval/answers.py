"""Type-adapted final-answer correctness.

The answer type is classified from the gold answer and choices alone, never
from the prediction. Numerics compare under a mixed absolute/relative
tolerance after unit stripping; multiple-choice answers go through
choice-letter extraction with a full-text fallback; free-form text can be
delegated to an external judge endpoint, defaulting to the categorical rule
so offline runs need no service.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import httpx

from .errors import EmptyInput, UnparseableNumeric

ABS_TOLERANCE = 1e-6
REL_TOLERANCE = 1e-4

Choices = Sequence[tuple[str, str]]
# judge hook: (question, gold, pred) -> Optional[bool]; None means "declined"
JudgeFn = Callable[[str, str, str], Optional[bool]]


class AnswerKind(str, Enum):
    NUMERIC = "numeric"
    CHOICE = "choice"
    YES_NO = "yes_no"
    CATEGORICAL = "categorical"
    FREE_FORM = "free_form"


class MatchedVia(str, Enum):
    EXACT = "exact"
    NUMERIC_TOLERANCE = "numeric_tolerance"
    CHOICE_LETTER = "choice_letter"
    YES_NO = "yes_no"
    JUDGE = "judge"
    NONE = "none"


@dataclass(frozen=True)
class AnswerType:
    kind: AnswerKind
    choices: Optional[tuple[tuple[str, str], ...]] = None


@dataclass
class AnswerVerdict:
    correct: bool
    matched_via: MatchedVia
    normalized_pred: str
    normalized_gold: str


_YES = {"yes", "true"}
_NO = {"no", "false"}

# Leading-letter shapes: "X", "X)", "X.", "X:", "(X)", "option X".
_LETTER_PATTERNS = [
    re.compile(r"^\(\s*([A-Za-z])\s*\)"),
    re.compile(r"^([A-Za-z])\s*[\).:]"),
    re.compile(r"^([A-Za-z])$"),
    re.compile(r"^option\s+([A-Za-z])\b", re.IGNORECASE),
]

_NUMBER_RE = re.compile(r"^[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$")


def _collapse(text: str) -> str:
    return " ".join(text.split()).casefold()


def _strip_units(text: str) -> str:
    """Drop thousands separators, a trailing %, and one trailing unit token."""
    s = text.strip().replace(",", "")
    if s.endswith("%"):
        s = s[:-1].strip()
    parts = s.split()
    if len(parts) == 2 and parts[1].isalpha():
        s = parts[0]
    return s


def parse_numeric(text: str) -> float:
    s = _strip_units(text)
    if not _NUMBER_RE.match(s):
        raise UnparseableNumeric(text)
    return float(s)


def _is_numeric(text: str) -> bool:
    try:
        parse_numeric(text)
        return True
    except UnparseableNumeric:
        return False


def extract_choice_letter(text: str) -> Optional[str]:
    s = text.strip()
    for pattern in _LETTER_PATTERNS:
        m = pattern.match(s)
        if m:
            return m.group(1).upper()
    return None


def classify(gold: str, choices: Optional[Choices] = None) -> AnswerType:
    """Classify the answer kind from the gold answer and choices only."""
    if not gold or not gold.strip():
        raise EmptyInput("gold answer must be non-empty")
    if choices:
        return AnswerType(kind=AnswerKind.CHOICE, choices=tuple((l, t) for l, t in choices))
    if _is_numeric(gold):
        return AnswerType(kind=AnswerKind.NUMERIC)
    if gold.strip().lower() in _YES | _NO:
        return AnswerType(kind=AnswerKind.YES_NO)
    if len(gold.split()) <= 3:
        return AnswerType(kind=AnswerKind.CATEGORICAL)
    return AnswerType(kind=AnswerKind.FREE_FORM)


def _wrong(pred: str, gold: str) -> AnswerVerdict:
    return AnswerVerdict(correct=False, matched_via=MatchedVia.NONE,
                         normalized_pred=_collapse(pred), normalized_gold=_collapse(gold))


def _score_numeric(pred: str, gold: str) -> AnswerVerdict:
    try:
        a = parse_numeric(pred)
        b = parse_numeric(gold)
    except UnparseableNumeric:
        return _wrong(pred, gold)
    if abs(a - b) <= max(ABS_TOLERANCE, REL_TOLERANCE * abs(b)):
        return AnswerVerdict(correct=True, matched_via=MatchedVia.NUMERIC_TOLERANCE,
                             normalized_pred=repr(a), normalized_gold=repr(b))
    return _wrong(pred, gold)


def _score_categorical(pred: str, gold: str,
                       via: MatchedVia = MatchedVia.EXACT) -> AnswerVerdict:
    np_, ng = _collapse(pred), _collapse(gold)
    if np_ and np_ == ng:
        return AnswerVerdict(correct=True, matched_via=via,
                             normalized_pred=np_, normalized_gold=ng)
    return _wrong(pred, gold)


def _score_choice(pred: str, gold: str, choices: Optional[Choices]) -> AnswerVerdict:
    gold_letter = extract_choice_letter(gold) or (gold.strip().upper() if len(gold.strip()) == 1 else None)
    pred_letter = extract_choice_letter(pred)
    if gold_letter is not None and pred_letter is not None:
        if pred_letter == gold_letter:
            return AnswerVerdict(correct=True, matched_via=MatchedVia.CHOICE_LETTER,
                                 normalized_pred=pred_letter, normalized_gold=gold_letter)
        return _wrong(pred, gold)
    # Fall back to matching the prediction text against the gold choice's text.
    if gold_letter is not None and choices:
        for label, text in choices:
            if label.upper() == gold_letter:
                return _score_categorical(pred, text)
    return _score_categorical(pred, gold)


def _score_yes_no(pred: str, gold: str) -> AnswerVerdict:
    def norm(s: str) -> Optional[str]:
        t = s.strip().lower()
        if t in _YES:
            return "yes"
        if t in _NO:
            return "no"
        return None

    np_, ng = norm(pred), norm(gold)
    if np_ is not None and np_ == ng:
        return AnswerVerdict(correct=True, matched_via=MatchedVia.YES_NO,
                             normalized_pred=np_, normalized_gold=ng or "")
    return _wrong(pred, gold)


def score_answer(pred: str, gold: str, t: AnswerType,
                 judge: Optional[JudgeFn] = None, question: str = "") -> AnswerVerdict:
    """Score one predicted answer against the gold answer under kind ``t``."""
    if t.kind == AnswerKind.NUMERIC:
        return _score_numeric(pred, gold)
    if t.kind == AnswerKind.CHOICE:
        return _score_choice(pred, gold, t.choices)
    if t.kind == AnswerKind.YES_NO:
        return _score_yes_no(pred, gold)
    if t.kind == AnswerKind.FREE_FORM and judge is not None:
        decision = judge(question, gold, pred)
        if decision is not None:
            if decision:
                return AnswerVerdict(correct=True, matched_via=MatchedVia.JUDGE,
                                     normalized_pred=_collapse(pred),
                                     normalized_gold=_collapse(gold))
            return _wrong(pred, gold)
    return _score_categorical(pred, gold)


def macro_accuracy(verdicts: Sequence[AnswerVerdict]) -> float:
    if not verdicts:
        raise EmptyInput("macro_accuracy requires at least one verdict")
    return sum(1.0 for v in verdicts if v.correct) / len(verdicts)


class HttpJudge:
    """Judge hook speaking POST {endpoint}/score; declines on any failure."""

    def __init__(self, endpoint: str, timeout_ms: int = 30000,
                 transport: Optional[httpx.BaseTransport] = None):
        self.endpoint = endpoint
        self._client = httpx.Client(transport=transport, timeout=timeout_ms / 1000.0)

    def __call__(self, question: str, gold: str, pred: str) -> Optional[bool]:
        try:
            response = self._client.post(
                self.endpoint.rstrip("/") + "/score",
                json={"question": question, "gold": gold, "pred": pred},
            )
            response.raise_for_status()
            return bool(response.json()["correct"])
        except (httpx.HTTPError, KeyError, ValueError):
            return None
