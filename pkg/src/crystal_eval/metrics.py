"""Step-level matching metrics: Match F1, Ordered Match F1, order statistics.

Predicted steps are aligned to reference steps by greedy 1:1 assignment over
all similarity pairs at or above the threshold. Content quality is the
harmonic mean of step precision and recall; ordering quality is the longest
increasing subsequence ratio of the matched prediction indices, folded into
Ordered Match F1 with a configurable weight.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import EvalRecord
from .embeddings import SimilarityMatrix
from .errors import EmptyInput, LengthMismatch

DEFAULT_TAU = 0.35
DEFAULT_ALPHA = 0.3


@dataclass
class MatchSet:
    """Greedy 1:1 alignment between predicted and reference steps.

    ``pairs`` holds (pred_index, ref_index, similarity) triples; indices are
    zero-based and pairwise distinct on both sides.
    """

    pairs: list[tuple[int, int, float]]
    tau: float
    n_pred: int
    n_ref: int

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return self.n_pred - len(self.pairs)

    @property
    def fn(self) -> int:
        return self.n_ref - len(self.pairs)


@dataclass(frozen=True)
class OrderParams:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")


@dataclass
class AggregateReport:
    macro_f1: float
    macro_precision: float
    macro_recall: float
    macro_ordered_f1: float
    mean_lis: float
    mean_steps: float
    accuracy: float
    n_examples: int
    per_example: list[EvalRecord] = field(default_factory=list)


def greedy_match(S: SimilarityMatrix | np.ndarray, tau: float) -> MatchSet:
    """Greedy 1:1 assignment over pairs with similarity >= tau.

    Candidates are taken in descending similarity; ties break on lower
    prediction index, then lower reference index, so the result is
    deterministic for a fixed matrix.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must be in [0, 1]")
    values = S.values if isinstance(S, SimilarityMatrix) else np.asarray(S, dtype=np.float64)
    n_pred, n_ref = values.shape
    js, ks = np.nonzero(values >= tau)
    candidates = sorted(
        ((float(values[j, k]), int(j), int(k)) for j, k in zip(js, ks)),
        key=lambda c: (-c[0], c[1], c[2]),
    )
    used_pred: set[int] = set()
    used_ref: set[int] = set()
    pairs: list[tuple[int, int, float]] = []
    for sim, j, k in candidates:
        if j in used_pred or k in used_ref:
            continue
        used_pred.add(j)
        used_ref.add(k)
        pairs.append((j, k, sim))
    return MatchSet(pairs=pairs, tau=tau, n_pred=int(n_pred), n_ref=int(n_ref))


def precision_recall(m: MatchSet) -> tuple[float, float]:
    precision = len(m.pairs) / max(m.n_pred, 1)
    recall = len(m.pairs) / max(m.n_ref, 1)
    return precision, recall


def example_f1(m: MatchSet) -> float:
    """Harmonic mean of step precision and recall.

    Both lists empty scores 1; exactly one empty scores 0; zero matched pairs
    with both lists non-empty scores 0.
    """
    if m.n_pred == 0 and m.n_ref == 0:
        return 1.0
    if m.n_pred == 0 or m.n_ref == 0:
        return 0.0
    if not m.pairs:
        return 0.0
    precision, recall = precision_recall(m)
    return 2.0 * precision * recall / (precision + recall)


def _lis_length(seq: Sequence[int]) -> int:
    """Longest strictly increasing subsequence length via patience sorting."""
    tails: list[int] = []
    for x in seq:
        i = bisect_left(tails, x)
        if i == len(tails):
            tails.append(x)
        else:
            tails[i] = x
    return len(tails)


def matched_pred_order(m: MatchSet) -> list[int]:
    """Prediction indices of matched pairs, ordered by reference index."""
    return [j for j, _, _ in sorted(m.pairs, key=lambda p: p[1])]


def lis_ratio(m: MatchSet) -> float:
    """Fraction of matched prediction indices that appear in reference order.

    Fewer than one matched pair is trivially ordered and scores 1. Under 1:1
    matching the indices are distinct, so strict and non-strict LIS coincide.
    """
    order = matched_pred_order(m)
    if len(order) == 0:
        return 1.0
    return _lis_length(order) / len(order)


def ordered_f1(f1: float, lis: float, p: OrderParams = OrderParams()) -> float:
    """Content F1 discounted by ordering: f1 * ((1 - alpha) + alpha * lis)."""
    return f1 * ((1.0 - p.alpha) + p.alpha * lis)


def kendall_tau_normalized(m: MatchSet) -> float:
    """Kendall's tau of the matched prediction order, rescaled to [0, 1].

    Fewer than two matched pairs returns 1 (trivially ordered).
    """
    order = matched_pred_order(m)
    n = len(order)
    if n < 2:
        return 1.0
    concordant = 0
    discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            if order[i] < order[j]:
                concordant += 1
            else:
                discordant += 1
    tau = (concordant - discordant) / (n * (n - 1) / 2)
    return (tau + 1.0) / 2.0


def score_example(S: SimilarityMatrix | np.ndarray | None, tau: float,
                  params: OrderParams, example_id: str, n_pred: int, n_ref: int,
                  answer_correct: bool) -> tuple[EvalRecord, MatchSet]:
    """Build the per-example record from one similarity matrix.

    ``S`` may be None when either step list is empty; the record then reflects
    an empty match set over the given counts.
    """
    if S is None:
        m = MatchSet(pairs=[], tau=tau, n_pred=n_pred, n_ref=n_ref)
    else:
        m = greedy_match(S, tau)
    precision, recall = precision_recall(m)
    f1 = example_f1(m)
    lis = lis_ratio(m)
    record = EvalRecord(
        example_id=example_id,
        precision=precision,
        recall=recall,
        f1=f1,
        lis_ratio=lis,
        ordered_f1=ordered_f1(f1, lis, params),
        tp=m.tp,
        fp=m.fp,
        fn=m.fn,
        answer_correct=answer_correct,
        step_count_pred=m.n_pred,
    )
    return record, m


def aggregate(records: Sequence[EvalRecord]) -> AggregateReport:
    """Macro-average per-example scores.

    Records are summed in example-id order with plain left-to-right addition
    so two runs over the same data aggregate bit-identically.
    """
    if not records:
        raise EmptyInput("aggregate requires at least one record")
    ordered = sorted(records, key=lambda r: r.example_id)
    n = len(ordered)

    def mean(values) -> float:
        total = 0.0
        for v in values:
            total += v
        return total / n

    return AggregateReport(
        macro_f1=mean(r.f1 for r in ordered),
        macro_precision=mean(r.precision for r in ordered),
        macro_recall=mean(r.recall for r in ordered),
        macro_ordered_f1=mean(r.ordered_f1 for r in ordered),
        mean_lis=mean(r.lis_ratio for r in ordered),
        mean_steps=mean(float(r.step_count_pred) for r in ordered),
        accuracy=mean(1.0 if r.answer_correct else 0.0 for r in ordered),
        n_examples=n,
        per_example=ordered,
    )


def cohen_kappa(a: Sequence[int], b: Sequence[int]) -> float:
    """Cohen's kappa for two binary label sequences.

    Degenerate chance agreement (p_e = 1) can only arise when both raters
    used one identical label throughout, which is perfect agreement: 1.0.
    """
    if len(a) != len(b):
        raise LengthMismatch(f"label lists differ in length: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise EmptyInput("kappa requires at least one pair of labels")
    n = len(a)
    a = [1 if x else 0 for x in a]
    b = [1 if x else 0 for x in b]
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    pa1 = sum(a) / n
    pb1 = sum(b) / n
    p_e = pa1 * pb1 + (1 - pa1) * (1 - pb1)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)
