"""Composite and causal process rewards, curriculum scheduling, and diagnostics.

The causal reward couples answer correctness and step alignment
multiplicatively: a correct answer earns the answer bonus plus the step bonus
scaled by step F1, while a wrong answer keeps only a heavily discounted step
term. The additive composite reward normalizes step F1 against batch
statistics and is used for the answer-only warm-up phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .errors import LengthMismatch, UnsortedBreakpoints


@dataclass(frozen=True)
class CompositeWeights:
    """Weights for the additive reward; ``reasoning`` is absent in the warm-up phase."""

    format_weight: float
    accuracy_weight: float
    reasoning_weight: Optional[float] = None


@dataclass
class RewardConfig:
    answer_weight: float = 0.65
    step_weight: float = 0.35
    wrong_answer_discount: float = 0.3
    batch_norm_epsilon: float = 1e-8
    phase1: CompositeWeights = field(default_factory=lambda: CompositeWeights(2.0, 3.0, None))
    phase2: CompositeWeights = field(default_factory=lambda: CompositeWeights(2.0, 2.0, 2.0))
    phase1_steps: int = 1400
    phase2_steps: int = 2800
    phase1_lr_tag: str = "3e-6"
    phase2_lr_tag: str = "5e-6"
    step_scorer: str = "embedding_f1"  # or "token_overlap_f1"

    def __post_init__(self):
        if self.answer_weight < 0 or self.step_weight < 0:
            raise ValueError("weights must be non-negative")
        if not 0.0 <= self.wrong_answer_discount <= 1.0:
            raise ValueError("wrong_answer_discount must be in [0, 1]")
        if self.batch_norm_epsilon <= 0:
            raise ValueError("batch_norm_epsilon must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConfig":
        def weights(key: str, default: CompositeWeights) -> CompositeWeights:
            sub = d.get(key)
            if sub is None:
                return default
            return CompositeWeights(
                format_weight=float(sub["format_weight"]),
                accuracy_weight=float(sub["accuracy_weight"]),
                reasoning_weight=(float(sub["reasoning_weight"])
                                  if sub.get("reasoning_weight") is not None else None),
            )

        return cls(
            answer_weight=float(d.get("answer_weight", 0.65)),
            step_weight=float(d.get("step_weight", 0.35)),
            wrong_answer_discount=float(d.get("wrong_answer_discount", 0.3)),
            batch_norm_epsilon=float(d.get("batch_norm_epsilon", 1e-8)),
            phase1=weights("phase1", CompositeWeights(2.0, 3.0, None)),
            phase2=weights("phase2", CompositeWeights(2.0, 2.0, 2.0)),
            phase1_steps=int(d.get("phase1_steps", 1400)),
            phase2_steps=int(d.get("phase2_steps", 2800)),
            phase1_lr_tag=str(d.get("phase1_lr_tag", "3e-6")),
            phase2_lr_tag=str(d.get("phase2_lr_tag", "5e-6")),
            step_scorer=str(d.get("step_scorer", "embedding_f1")),
        )


class RewardPath(str, Enum):
    CORRECT_BRANCH = "correct_branch"
    INCORRECT_BRANCH = "incorrect_branch"
    COMPOSITE = "composite"


@dataclass
class RewardOutcome:
    reward: float
    answer_term: float
    step_term: float
    format_term: float
    path: RewardPath
    f1_step: float

    def to_dict(self) -> dict:
        return {
            "reward": self.reward,
            "answer_term": self.answer_term,
            "step_term": self.step_term,
            "format_term": self.format_term,
            "path": self.path.value,
            "f1_step": self.f1_step,
        }


class Phase(str, Enum):
    PHASE1_ANSWER_ONLY = "phase1_answer_only"
    PHASE2_CPR = "phase2_cpr"


@dataclass
class CurriculumSchedule:
    phase: Phase
    lr_tag: str
    difficulty_cursor: int
    progression: list[tuple[int, int]]


@dataclass
class RewardDiagnostics:
    discrimination_gap: Optional[float]
    reward_f1_correlation: float
    n: int
    degenerate_correlation: bool = False


def cpr_reward(correct: bool, f1_step: float, cfg: RewardConfig) -> RewardOutcome:
    """Causal process reward for one candidate."""
    if not 0.0 <= f1_step <= 1.0:
        raise ValueError("f1_step must be in [0, 1]")
    if correct:
        answer_term = cfg.answer_weight
        step_term = cfg.step_weight * f1_step
        return RewardOutcome(
            reward=answer_term + step_term,
            answer_term=answer_term,
            step_term=step_term,
            format_term=0.0,
            path=RewardPath.CORRECT_BRANCH,
            f1_step=f1_step,
        )
    step_term = cfg.step_weight * f1_step * cfg.wrong_answer_discount
    return RewardOutcome(
        reward=step_term,
        answer_term=0.0,
        step_term=step_term,
        format_term=0.0,
        path=RewardPath.INCORRECT_BRANCH,
        f1_step=f1_step,
    )


def composite_reward(batch: Sequence[tuple[bool, bool, float]],
                     cfg: RewardConfig, phase: Phase = Phase.PHASE2_CPR) -> list[RewardOutcome]:
    """Additive reward over a candidate batch of (format_ok, correct, f1_step).

    The reasoning term standardizes f1 against the batch mean and population
    standard deviation; a constant batch therefore contributes no reasoning
    signal (the epsilon only guards the division).
    """
    if not batch:
        raise ValueError("composite_reward requires a non-empty batch")
    weights = cfg.phase1 if phase == Phase.PHASE1_ANSWER_ONLY else cfg.phase2
    w_reason = weights.reasoning_weight if weights.reasoning_weight is not None else 0.0
    f1s = [f1 for _, _, f1 in batch]
    n = len(f1s)
    mu = sum(f1s) / n
    sigma = math.sqrt(sum((x - mu) ** 2 for x in f1s) / n)
    outcomes = []
    for format_ok, correct, f1 in batch:
        reasoning_term = w_reason * ((f1 - mu) / (sigma + cfg.batch_norm_epsilon))
        answer_term = weights.accuracy_weight * (1.0 if correct else 0.0)
        format_term = weights.format_weight * (1.0 if format_ok else 0.0)
        outcomes.append(RewardOutcome(
            reward=reasoning_term + answer_term + format_term,
            answer_term=answer_term,
            step_term=reasoning_term,
            format_term=format_term,
            path=RewardPath.COMPOSITE,
            f1_step=f1,
        ))
    return outcomes


@dataclass
class DatasetStepStats:
    """Reference-step-count distribution of the training corpus."""

    counts: list[int]

    def __post_init__(self):
        if not self.counts:
            raise ValueError("step stats require at least one example")
        self.counts = sorted(int(c) for c in self.counts)

    @property
    def max(self) -> int:
        return self.counts[-1]

    def percentile(self, q: float) -> float:
        """Linear-interpolation percentile over the sorted counts."""
        if not 0.0 <= q <= 100.0:
            raise ValueError("percentile must be in [0, 100]")
        pos = (len(self.counts) - 1) * q / 100.0
        lo = math.floor(pos)
        hi = math.ceil(pos)
        if lo == hi:
            return float(self.counts[lo])
        frac = pos - lo
        return self.counts[lo] * (1 - frac) + self.counts[hi] * frac


def default_progression(stats: DatasetStepStats, cfg: RewardConfig) -> list[tuple[int, int]]:
    """Linear difficulty ramp across phase 2: 25th-percentile step count up to the max."""
    start = int(round(stats.percentile(25.0)))
    end = stats.max
    horizon = cfg.phase2_steps
    breakpoints: list[tuple[int, int]] = []
    previous = None
    for level in range(start, end + 1):
        if end == start:
            step = cfg.phase1_steps
        else:
            step = cfg.phase1_steps + math.ceil((level - start) * horizon / (end - start))
        if previous is not None and step == previous[0]:
            breakpoints[-1] = (step, level)
        else:
            breakpoints.append((step, level))
        previous = (step, level)
    return breakpoints


def schedule(training_step: int, stats: DatasetStepStats, cfg: RewardConfig,
             progression: Optional[list[tuple[int, int]]] = None) -> CurriculumSchedule:
    """Curriculum snapshot at one training step.

    Phase 1 runs for the configured warm-up; phase 2 then admits the full
    causal reward and ramps the admitted reference-step count along the
    progression breakpoints, reaching the dataset maximum by the final step.
    """
    if training_step < 0:
        raise ValueError("training_step must be non-negative")
    if progression is None:
        progression = default_progression(stats, cfg)
    if any(progression[i][0] > progression[i + 1][0] for i in range(len(progression) - 1)):
        raise UnsortedBreakpoints(str(progression))

    if training_step < cfg.phase1_steps:
        return CurriculumSchedule(
            phase=Phase.PHASE1_ANSWER_ONLY,
            lr_tag=cfg.phase1_lr_tag,
            difficulty_cursor=progression[0][1] if progression else stats.max,
            progression=progression,
        )
    cursor = progression[0][1] if progression else stats.max
    for step, level in progression:
        if step <= training_step:
            cursor = level
        else:
            break
    if training_step >= cfg.phase1_steps + cfg.phase2_steps:
        cursor = stats.max
    return CurriculumSchedule(
        phase=Phase.PHASE2_CPR,
        lr_tag=cfg.phase2_lr_tag,
        difficulty_cursor=cursor,
        progression=progression,
    )


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, bool]:
    """Pearson r and a degeneracy flag; zero variance on either side gives (0, True)."""
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} vs {len(y)}")
    n = len(x)
    if n < 2:
        return 0.0, True
    mx = sum(x) / n
    my = sum(y) / n
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0.0 or syy == 0.0:
        return 0.0, True
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    return sxy / math.sqrt(sxx * syy), False


def diagnostics(rewards: Sequence[float], correctness: Sequence[bool],
                f1s: Sequence[float]) -> RewardDiagnostics:
    """Reward-signal health: correct-vs-incorrect mean gap and reward-F1 Pearson r."""
    if not (len(rewards) == len(correctness) == len(f1s)):
        raise LengthMismatch("rewards, correctness, and f1s must have equal lengths")
    correct_rewards = [r for r, c in zip(rewards, correctness) if c]
    incorrect_rewards = [r for r, c in zip(rewards, correctness) if not c]
    gap = None
    if correct_rewards and incorrect_rewards:
        gap = (sum(correct_rewards) / len(correct_rewards)
               - sum(incorrect_rewards) / len(incorrect_rewards))
    r, degenerate = pearson(list(rewards), list(f1s))
    return RewardDiagnostics(
        discrimination_gap=gap,
        reward_f1_correlation=r,
        n=len(rewards),
        degenerate_correlation=degenerate,
    )


def token_overlap_f1(pred_steps: Sequence[str], ref_steps: Sequence[str]) -> float:
    """Word-overlap alternative step scorer for training-time rewards.

    F1 over the multiset overlap of whitespace tokens, the conventional
    surrogate when no encoder is available.
    """
    from collections import Counter

    pred_tokens = Counter(t for s in pred_steps for t in s.lower().split())
    ref_tokens = Counter(t for s in ref_steps for t in s.lower().split())
    if not pred_tokens and not ref_tokens:
        return 1.0
    if not pred_tokens or not ref_tokens:
        return 0.0
    overlap = sum((pred_tokens & ref_tokens).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(pred_tokens.values())
    recall = overlap / sum(ref_tokens.values())
    return 2 * precision * recall / (precision + recall)
