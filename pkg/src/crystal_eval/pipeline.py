"""Multi-generator reference-chain construction with consensus clustering.

Each round pools candidate step lists from independent generator endpoints,
clusters paraphrases by connected components over the cosine-similarity graph,
keeps each cluster's medoid, orders the representatives, and submits the
chain to an automated validator. Failed rounds regenerate with fresh seeds;
chains that exhaust the round budget escalate to human review. A weighted
complexity score stratifies finished examples into easy/medium/hard tiers.
"""

from __future__ import annotations

import ast
import hashlib
import heapq
import itertools
import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import httpx
import numpy as np

from .core import ComplexityTier, Example
from .embeddings import EmbeddingGateway
from .errors import (
    AllGeneratorsFailed,
    CyclicDependency,
    PromptTemplateMissing,
    ValidatorUnavailable,
)

DEFAULT_TAU_GEN = 0.45
DEFAULT_MAX_ROUNDS = 2
DEFAULT_TEMPERATURE = 1.0

CRITERIA = ("logical_soundness", "sequential_coherence", "visual_grounding", "answer_consistency")


@dataclass
class PipelineConfig:
    tau_gen: float = DEFAULT_TAU_GEN
    max_rounds: int = DEFAULT_MAX_ROUNDS
    temperature: float = DEFAULT_TEMPERATURE
    base_seed: int = 42
    template_dir: Optional[Path] = None
    phases_enabled: tuple[int, ...] = (1, 2, 3, 4)

    def __post_init__(self):
        if not 0.0 < self.tau_gen <= 1.0:
            raise ValueError("tau_gen must be in (0, 1]")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


@dataclass
class CandidatePool:
    example_id: str
    candidates: list[tuple[str, int, list[str]]]  # (generator_id, seed, steps)
    round: int
    failures: list[tuple[str, str]] = field(default_factory=list)  # (generator_id, reason)


@dataclass
class StepCluster:
    member_indices: list[int]  # pooled indices, ascending
    medoid_index: int
    mean_dissimilarity: float


@dataclass
class ValidationVerdict:
    passed: bool
    criteria: dict[str, bool]
    justifications: list[str] = field(default_factory=list)
    note: str = ""


class RoundStatus(str, Enum):
    GENERATED = "generated"
    VALIDATED = "validated"
    FAILED = "failed"
    ESCALATED_TO_HUMAN = "escalated_to_human"


@dataclass
class DelphiRoundState:
    round: int
    ordered_chain: list[str]
    validator_verdict: Optional[ValidationVerdict] = None
    status: RoundStatus = RoundStatus.GENERATED


@dataclass
class PipelineResult:
    example_id: str
    status: RoundStatus
    rounds: list[DelphiRoundState]
    final_steps: Optional[list[str]]
    cycle: int = 0


# ---------------------------------------------------------------------------
# prompt templates

def _template_root(cfg: PipelineConfig):
    if cfg.template_dir is not None:
        return Path(cfg.template_dir)
    return resources.files("crystal_eval").joinpath("data/templates")


def load_template(source: str, cfg: PipelineConfig) -> str:
    name = source.lower().replace("-", "_") + ".txt"
    path = _template_root(cfg).joinpath(name)
    try:
        return path.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError):
        raise PromptTemplateMissing(source)


def render_generation_prompt(example: Example, cfg: PipelineConfig) -> str:
    template = load_template(example.source.value, cfg)
    return template.replace("{{QUESTION}}", example.question).replace(
        "{{ANSWER}}", example.gold_answer)


def render_validation_prompt(example: Example, chain: Sequence[str], cfg: PipelineConfig) -> str:
    template = load_template("_validator", cfg)
    steps_block = "\n".join(f"{i + 1}. {s}" for i, s in enumerate(chain))
    return (template.replace("{{QUESTION}}", example.question)
            .replace("{{ANSWER}}", example.gold_answer)
            .replace("{{STEPS}}", steps_block))


# ---------------------------------------------------------------------------
# model endpoints

class ModelClient:
    """HTTP client for generator/validator endpoints with bounded retries."""

    MAX_ATTEMPTS = 3
    BACKOFF_BASE_S = 0.2

    def __init__(self, model_id: str, endpoint: str, timeout_ms: int = 60000,
                 transport: Optional[httpx.BaseTransport] = None, sleeper=time.sleep):
        self.model_id = model_id
        self.endpoint = endpoint
        self._sleep = sleeper
        self._client = httpx.Client(transport=transport, timeout=timeout_ms / 1000.0)

    def generate(self, prompt: str, image_ref: str, seed: int, temperature: float) -> str:
        url = self.endpoint.rstrip("/") + "/generate"
        payload = {"prompt": prompt, "image_ref": image_ref,
                   "seed": seed, "temperature": temperature}
        last_error: Optional[Exception] = None
        for attempt in range(self.MAX_ATTEMPTS):
            try:
                response = self._client.post(url, json=payload)
                response.raise_for_status()
                return str(response.json()["text"])
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.MAX_ATTEMPTS:
                    self._sleep(self.BACKOFF_BASE_S * (2 ** attempt))
        raise ConnectionError(f"{self.model_id} unavailable at {self.endpoint}") from last_error

    def close(self) -> None:
        self._client.close()


def derive_seed(base_seed: int, example_id: str, generator_id: str,
                round_number: int, cycle: int) -> int:
    material = f"{base_seed}|{example_id}|{generator_id}|{round_number}|{cycle}"
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


_LIST_HEAD_RE = re.compile(r"\[")


def parse_step_list(text: str) -> list[str]:
    """Extract a list of step strings from generator output.

    Accepts a Python-style or JSON list anywhere in the text; raises
    ValueError when no usable list is found.
    """
    for match in _LIST_HEAD_RE.finditer(text):
        start = match.start()
        candidate = _balanced_slice(text, start)
        if candidate is None:
            continue
        for parser in (ast.literal_eval, json.loads):
            try:
                value = parser(candidate)
            except (ValueError, SyntaxError, json.JSONDecodeError):
                continue
            if isinstance(value, list) and value and all(isinstance(s, str) for s in value):
                steps = [s.strip() for s in value if s.strip()]
                if steps:
                    return steps
    raise ValueError("no step list found in generator output")


def _balanced_slice(text: str, start: int) -> Optional[str]:
    depth = 0
    in_string: Optional[str] = None
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == in_string:
                in_string = None
            continue
        if ch in "\"'":
            in_string = ch
        elif ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth == 0:
                return text[start:i + 1]
    return None


def generate_candidates(example: Example, cfg: PipelineConfig,
                        generators: Sequence[ModelClient],
                        round_number: int = 1, cycle: int = 0) -> CandidatePool:
    """Phase 1: every generator produces one candidate step list with a fresh seed.

    Generator calls fan out concurrently and join; results keep generator order.
    """
    if not generators:
        raise AllGeneratorsFailed(example.id, [("<none>", "no generators configured")])
    prompt = render_generation_prompt(example, cfg)

    def one(client: ModelClient):
        seed = derive_seed(cfg.base_seed, example.id, client.model_id, round_number, cycle)
        try:
            text = client.generate(prompt, example.image_ref, seed, cfg.temperature)
            return client.model_id, seed, parse_step_list(text), None
        except (ConnectionError, ValueError) as exc:
            return client.model_id, seed, None, str(exc)

    with ThreadPoolExecutor(max_workers=len(generators)) as pool:
        results = list(pool.map(one, generators))
    candidates = [(gid, seed, steps) for gid, seed, steps, err in results if err is None]
    failures = [(gid, err) for gid, _, _, err in results if err is not None]
    if not candidates:
        raise AllGeneratorsFailed(example.id, failures)
    return CandidatePool(example_id=example.id, candidates=candidates,
                         round=round_number, failures=failures)


# ---------------------------------------------------------------------------
# clustering

def _unit_rows(embeddings: np.ndarray) -> np.ndarray:
    mat = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    norms = np.where(norms == 0.0, 1.0, norms)
    return mat / norms[:, None]


def pairwise_cosine(embeddings: np.ndarray) -> np.ndarray:
    unit = _unit_rows(embeddings)
    sims = np.clip(unit @ unit.T, -1.0, 1.0)
    np.fill_diagonal(sims, 1.0)  # self-similarity is 1 by definition
    return sims


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def cluster_steps(embeddings: np.ndarray, tau_gen: float) -> list[StepCluster]:
    """Phase 2a: connected components of the cosine graph partition the pooled steps."""
    n = int(np.asarray(embeddings).shape[0])
    sims = pairwise_cosine(embeddings)
    uf = _UnionFind(n)
    for i in range(n):
        for j in range(i + 1, n):
            if sims[i, j] >= tau_gen:
                uf.union(i, j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)
    clusters = []
    for root in sorted(groups):
        members = sorted(groups[root])
        medoid, dissim = select_medoid(members, sims)
        clusters.append(StepCluster(member_indices=members, medoid_index=medoid,
                                    mean_dissimilarity=dissim))
    return clusters


def select_medoid(members: Sequence[int], sims: np.ndarray) -> tuple[int, float]:
    """Member minimizing average within-cluster dissimilarity (self included).

    Ties break toward the lowest pooled index.
    """
    best_index = -1
    best_value = float("inf")
    for m in sorted(members):
        value = float(np.mean([1.0 - sims[m, o] for o in members]))
        if value < best_value:
            best_value = value
            best_index = m
    return best_index, best_value


# ---------------------------------------------------------------------------
# ordering

@dataclass
class Representative:
    text: str
    vector: np.ndarray
    mean_position: float
    pooled_index: int


def build_representatives(pool: CandidatePool, clusters: Sequence[StepCluster],
                          pooled_steps: Sequence[str], embeddings: np.ndarray) -> list[Representative]:
    """One representative per cluster: the medoid text plus the members' mean source position."""
    positions: list[int] = []
    for _, _, steps in pool.candidates:
        positions.extend(range(len(steps)))
    reps = []
    for cluster in clusters:
        mean_pos = float(np.mean([positions[m] for m in cluster.member_indices]))
        reps.append(Representative(
            text=pooled_steps[cluster.medoid_index],
            vector=np.asarray(embeddings)[cluster.medoid_index],
            mean_position=mean_pos,
            pooled_index=cluster.medoid_index,
        ))
    return reps


def _cross_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.clip(_unit_rows(a) @ _unit_rows(b).T, -1.0, 1.0)


def _edit_distance(order: Sequence[int], prev_len: int, eq: np.ndarray) -> int:
    """Levenshtein distance between the proposed order and the previous chain."""
    n = prev_len
    prev_row = list(range(n + 1))
    for i, rep in enumerate(order, start=1):
        row = [i] + [0] * n
        for j in range(1, n + 1):
            cost = 0 if eq[rep, j - 1] else 1
            row[j] = min(prev_row[j] + 1, row[j - 1] + 1, prev_row[j - 1] + cost)
        prev_row = row
    return prev_row[n]


EXACT_SEARCH_LIMIT = 9


def order_representatives(reps: Sequence[Representative],
                          prev_chain: Optional[Sequence[Representative]] = None,
                          tau_gen: float = DEFAULT_TAU_GEN,
                          precedence: Optional[Sequence[tuple[int, int]]] = None) -> list[Representative]:
    """Phase 2b: order cluster representatives into a reasoning chain.

    The first round sorts by the members' mean original position; later rounds
    pick the permutation minimizing edit distance to the previous chain, where
    two steps count as equal when their cosine reaches the clustering
    threshold (exact search up to 9 representatives, greedy anchoring above).
    Hard-dependency precedence pairs override either ordering.
    """
    if not reps:
        raise ValueError("order_representatives requires at least one representative")
    n = len(reps)
    if prev_chain is None:
        base = sorted(range(n), key=lambda i: (reps[i].mean_position, reps[i].pooled_index))
    else:
        eq = _cross_cosine(np.stack([r.vector for r in reps]),
                           np.stack([p.vector for p in prev_chain])) >= tau_gen
        prev_len = len(prev_chain)
        if n <= EXACT_SEARCH_LIMIT:
            best_order: Optional[tuple[int, ...]] = None
            best_distance = n + prev_len + 1
            floor = abs(n - prev_len)
            for perm in itertools.permutations(range(n)):
                distance = _edit_distance(perm, prev_len, eq)
                if distance < best_distance:
                    best_distance = distance
                    best_order = perm
                    if best_distance == floor:
                        break
            base = list(best_order)
        else:
            anchors = []
            for i in range(n):
                row = eq[i]
                anchor = int(np.argmax(row)) if row.any() else prev_len + 1
                anchors.append(anchor)
            base = sorted(range(n), key=lambda i: (anchors[i], reps[i].mean_position,
                                                   reps[i].pooled_index))
    if precedence:
        base = _topological_repair(base, n, precedence)
    return [reps[i] for i in base]


def _topological_repair(base: list[int], n: int,
                        precedence: Sequence[tuple[int, int]]) -> list[int]:
    """Reorder to satisfy precedence pairs while staying closest to ``base``."""
    rank = {node: pos for pos, node in enumerate(base)}
    successors: dict[int, list[int]] = {i: [] for i in range(n)}
    indegree = {i: 0 for i in range(n)}
    for before, after in precedence:
        if not (0 <= before < n and 0 <= after < n):
            raise ValueError(f"precedence pair out of range: {(before, after)}")
        successors[before].append(after)
        indegree[after] += 1
    heap = [(rank[i], i) for i in range(n) if indegree[i] == 0]
    heapq.heapify(heap)
    out: list[int] = []
    while heap:
        _, node = heapq.heappop(heap)
        out.append(node)
        for nxt in successors[node]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(heap, (rank[nxt], nxt))
    if len(out) != n:
        raise CyclicDependency(list(precedence))
    return out


# ---------------------------------------------------------------------------
# validation

def parse_validator_output(text: str) -> ValidationVerdict:
    """Parse the validator's JSON verdict; unparseable output fails every criterion."""
    from .core import _first_object_with_keys

    obj = _first_object_with_keys(text, CRITERIA)
    if obj is None:
        return ValidationVerdict(passed=False, criteria={c: False for c in CRITERIA},
                                 note="validator output unparseable")
    criteria = {c: bool(obj[c]) for c in CRITERIA}
    justifications = obj.get("justifications", [])
    if not isinstance(justifications, list):
        justifications = [str(justifications)]
    return ValidationVerdict(passed=all(criteria.values()), criteria=criteria,
                             justifications=[str(j) for j in justifications])


def validate_chain(example: Example, chain: Sequence[str], cfg: PipelineConfig,
                   validator: ModelClient) -> ValidationVerdict:
    """Phase 3: the validator model checks the four chain-quality criteria."""
    prompt = render_validation_prompt(example, chain, cfg)
    try:
        text = validator.generate(prompt, example.image_ref,
                                  derive_seed(cfg.base_seed, example.id, validator.model_id, 0, 0),
                                  temperature=0.0)
    except ConnectionError as exc:
        raise ValidatorUnavailable(str(exc)) from exc
    return parse_validator_output(text)


# ---------------------------------------------------------------------------
# the Delphi loop

def run_delphi(example: Example, cfg: PipelineConfig,
               generators: Sequence[ModelClient],
               validator: Optional[ModelClient],
               gateway: EmbeddingGateway,
               cycle: int = 0,
               precedence: Optional[Sequence[tuple[int, int]]] = None) -> PipelineResult:
    """Run generation rounds until the validator passes or the budget is spent.

    ``cycle`` counts human-gate restarts; it feeds seed derivation so every
    restart generates with fresh seeds.
    """
    rounds: list[DelphiRoundState] = []
    prev_reps: Optional[list[Representative]] = None
    validation_enabled = 3 in cfg.phases_enabled and validator is not None
    for round_number in range(1, cfg.max_rounds + 1):
        pool = generate_candidates(example, cfg, generators, round_number, cycle)
        pooled_steps = [s for _, _, steps in pool.candidates for s in steps]
        vectors = gateway.embed(pooled_steps)
        embeddings = np.stack([v.values for v in vectors])
        clusters = cluster_steps(embeddings, cfg.tau_gen)
        reps = build_representatives(pool, clusters, pooled_steps, embeddings)
        ordered = order_representatives(reps, prev_chain=prev_reps,
                                        tau_gen=cfg.tau_gen, precedence=precedence)
        prev_reps = ordered
        state = DelphiRoundState(round=round_number,
                                 ordered_chain=[r.text for r in ordered])
        if validation_enabled:
            verdict = validate_chain(example, state.ordered_chain, cfg, validator)
            state.validator_verdict = verdict
            state.status = RoundStatus.VALIDATED if verdict.passed else RoundStatus.FAILED
        else:
            state.status = RoundStatus.VALIDATED
        rounds.append(state)
        if state.status == RoundStatus.VALIDATED:
            return PipelineResult(example_id=example.id, status=RoundStatus.VALIDATED,
                                  rounds=rounds, final_steps=state.ordered_chain, cycle=cycle)
    rounds[-1].status = RoundStatus.ESCALATED_TO_HUMAN
    return PipelineResult(example_id=example.id, status=RoundStatus.ESCALATED_TO_HUMAN,
                          rounds=rounds, final_steps=None, cycle=cycle)


# ---------------------------------------------------------------------------
# complexity stratification

EASY_BELOW = 0.27
MEDIUM_BELOW = 0.42

STEP_COUNT_FLOOR = 3
STEP_COUNT_RANGE = 39  # corpus step counts span 3..42
LENGTH_CAP_WORDS = 60


def _load_lexicon() -> dict:
    path = resources.files("crystal_eval").joinpath("data/marker_lexicon.json")
    return json.loads(path.read_text(encoding="utf-8"))


_LEXICON: Optional[dict] = None


def _lexicon() -> dict:
    global _LEXICON
    if _LEXICON is None:
        _LEXICON = _load_lexicon()
    return _LEXICON


def _clamp(x: float, lo: float = 0.0, hi: float = 1.0) -> float:
    return min(hi, max(lo, x))


def tier_for_score(c: float) -> ComplexityTier:
    if c < EASY_BELOW:
        return ComplexityTier.EASY
    if c < MEDIUM_BELOW:
        return ComplexityTier.MEDIUM
    return ComplexityTier.HARD


def complexity_score(s_steps: float, s_length: float, s_ling: float, s_type: float) -> float:
    """Weighted combination of the four normalized complexity features."""
    return _clamp(0.4 * s_steps + 0.2 * s_length + 0.2 * s_ling + 0.2 * s_type)


def stratify_complexity(example: Example) -> tuple[float, ComplexityTier]:
    """Weighted complexity score and tier from ground-truth features only.

    Combines normalized reference-step count (weight 0.4) with question
    length, linguistic complexity markers, and question type (0.2 each).
    """
    lexicon = _lexicon()
    n_steps = len(example.reference_steps)
    s_steps = _clamp((n_steps - STEP_COUNT_FLOOR) / STEP_COUNT_RANGE)
    s_length = _clamp(len(example.question.split()) / LENGTH_CAP_WORDS)

    tokens = set(re.findall(r"[a-z']+", example.question.lower()))
    families_present = sum(
        1 for family in ("conditional", "causal", "comparison", "negation")
        if tokens & set(lexicon["families"][family])
    )
    s_ling = _clamp(0.25 * families_present)

    question_lower = example.question.lower()
    s_type = 0.5
    if any(p in question_lower for p in lexicon["counting_patterns"]):
        s_type -= 0.15
    if any(re.search(r"\b" + re.escape(p) + r"\b", question_lower)
           for p in lexicon["why_patterns"]):
        s_type += 0.20
    s_type = _clamp(s_type)

    c = complexity_score(s_steps, s_length, s_ling, s_type)
    return c, tier_for_score(c)
