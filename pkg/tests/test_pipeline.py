import json

import httpx
import numpy as np
import pytest

from crystal_eval.core import ComplexityTier, Example, Source
from crystal_eval.embeddings import EmbeddingGateway
from crystal_eval.errors import AllGeneratorsFailed, CyclicDependency, PromptTemplateMissing
from crystal_eval.pipeline import (
    CRITERIA,
    ModelClient,
    PipelineConfig,
    Representative,
    RoundStatus,
    cluster_steps,
    complexity_score,
    generate_candidates,
    order_representatives,
    parse_step_list,
    parse_validator_output,
    run_delphi,
    select_medoid,
    stratify_complexity,
    tier_for_score,
    validate_chain,
)

from conftest import deterministic_descriptor


def example(question="What color is the signal?", steps=(), gold="Green",
            source=Source.REALWORLDQA):
    return Example(id="ex-1", source=source, image_ref="img.jpg", question=question,
                   gold_answer=gold, reference_steps=list(steps))


def client_for(handler, model_id="gen", endpoint="http://gen"):
    return ModelClient(model_id, endpoint, transport=httpx.MockTransport(handler),
                       sleeper=lambda s: None)


# ---------------------------------------------------------------------------


class TestParseStepList:
    def test_python_list_assignment(self):
        text = 'reference_steps = ["look left", "look right"]'
        assert parse_step_list(text) == ["look left", "look right"]

    def test_json_array(self):
        assert parse_step_list('["a", "b"]') == ["a", "b"]

    def test_prose_around_list(self):
        assert parse_step_list('Sure:\nreference_steps = ["x"]\nDone.') == ["x"]

    def test_no_list_raises(self):
        with pytest.raises(ValueError):
            parse_step_list("no list here")

    def test_brackets_inside_strings(self):
        assert parse_step_list('["a [nested] item", "b"]') == ["a [nested] item", "b"]


class TestGenerateCandidates:
    def _generator(self, name, fail=False):
        def handler(request: httpx.Request) -> httpx.Response:
            if fail:
                return httpx.Response(500)
            body = json.loads(request.content)
            assert "seed" in body and body["temperature"] == 1.0
            return httpx.Response(200, json={
                "text": f'reference_steps = ["{name} step one", "{name} step two"]'})
        return client_for(handler, model_id=name, endpoint=f"http://{name}")

    def test_all_generators_contribute(self):
        gens = [self._generator(f"g{i}") for i in range(4)]
        pool = generate_candidates(example(), PipelineConfig(), gens)
        assert len(pool.candidates) == 4
        assert pool.failures == []

    def test_partial_failure_recorded(self):
        gens = [self._generator("g0"), self._generator("g1", fail=True),
                self._generator("g2"), self._generator("g3")]
        pool = generate_candidates(example(), PipelineConfig(), gens)
        assert len(pool.candidates) == 3
        assert len(pool.failures) == 1
        assert pool.failures[0][0] == "g1"

    def test_total_failure_raises(self):
        gens = [self._generator("g0", fail=True)]
        with pytest.raises(AllGeneratorsFailed):
            generate_candidates(example(), PipelineConfig(), gens)

    def test_seeds_distinct_per_generator_and_round(self):
        gens = [self._generator("g0"), self._generator("g1")]
        pool1 = generate_candidates(example(), PipelineConfig(), gens, round_number=1)
        pool2 = generate_candidates(example(), PipelineConfig(), gens, round_number=2)
        seeds = [s for _, s, _ in pool1.candidates] + [s for _, s, _ in pool2.candidates]
        assert len(set(seeds)) == len(seeds)

    def test_missing_template_raises(self, tmp_path):
        cfg = PipelineConfig(template_dir=tmp_path)
        with pytest.raises(PromptTemplateMissing):
            generate_candidates(example(), cfg, [self._generator("g0")])


class TestClustering:
    def _embeddings(self, groups, dim=16, seed=0):
        """One base direction per group; members are tiny perturbations."""
        rng = np.random.default_rng(seed)
        bases = []
        while len(bases) < len(set(groups)):
            v = rng.standard_normal(dim)
            v /= np.linalg.norm(v)
            if all(abs(v @ b) < 0.2 for b in bases):
                bases.append(v)
        out = []
        for g in groups:
            v = bases[g] + rng.standard_normal(dim) * 0.01
            out.append(v / np.linalg.norm(v))
        return np.stack(out)

    def test_transitive_closure(self):
        # chain a~b, b~c with a!~c still forms one cluster
        a = np.array([1.0, 0.0])
        b = np.array([np.cos(np.pi / 5), np.sin(np.pi / 5)])
        c = np.array([np.cos(2 * np.pi / 5), np.sin(2 * np.pi / 5)])
        sims_ab = float(a @ b)
        sims_ac = float(a @ c)
        tau = (sims_ab + sims_ac) / 2
        clusters = cluster_steps(np.stack([a, b, c]), tau)
        assert len(clusters) == 1
        assert clusters[0].member_indices == [0, 1, 2]

    def test_no_edges_gives_singletons(self):
        emb = self._embeddings([0, 1, 2, 3])
        clusters = cluster_steps(emb, 0.9)
        assert len(clusters) == 4
        assert all(len(c.member_indices) == 1 for c in clusters)

    def test_partition_property(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            n = int(rng.integers(2, 20))
            emb = rng.standard_normal((n, 8))
            clusters = cluster_steps(emb, float(rng.uniform(0.2, 0.9)))
            seen = sorted(i for c in clusters for i in c.member_indices)
            assert seen == list(range(n))

    def test_grouped_steps_cluster_together(self):
        emb = self._embeddings([0, 0, 1, 1, 1, 2])
        clusters = cluster_steps(emb, 0.8)
        sizes = sorted(len(c.member_indices) for c in clusters)
        assert sizes == [1, 2, 3]


class TestMedoid:
    def oracle(self, members, sims):
        best, best_val = None, None
        for m in members:
            val = sum(1.0 - sims[m, o] for o in members) / len(members)
            if best_val is None or val < best_val:
                best, best_val = m, val
        return best

    def test_singleton(self):
        sims = np.eye(1)
        assert select_medoid([0], sims)[0] == 0

    def test_identical_pair_beats_outlier_lowest_index(self):
        # members 0 and 1 identical, 2 distant
        sims = np.array([
            [1.0, 1.0, 0.1],
            [1.0, 1.0, 0.1],
            [0.1, 0.1, 1.0],
        ])
        assert select_medoid([0, 1, 2], sims)[0] == 0

    def test_equilateral_tie_breaks_low_index(self):
        sims = np.full((3, 3), 0.5)
        np.fill_diagonal(sims, 1.0)
        assert select_medoid([0, 1, 2], sims)[0] == 0

    def test_brute_force_equivalence_500(self):
        rng = np.random.default_rng(77)
        for _ in range(500):
            size = int(rng.integers(1, 9))
            emb = rng.standard_normal((size, 6))
            from crystal_eval.pipeline import pairwise_cosine

            sims = pairwise_cosine(emb)
            members = list(range(size))
            assert select_medoid(members, sims)[0] == self.oracle(members, sims)


def rep(text, vector, mean_position, pooled_index):
    return Representative(text=text, vector=np.asarray(vector, dtype=np.float64),
                          mean_position=mean_position, pooled_index=pooled_index)


class TestOrdering:
    def test_round1_mean_position_key(self):
        reps = [rep("a", [1, 0, 0], 2.0, 0), rep("b", [0, 1, 0], 0.5, 1),
                rep("c", [0, 0, 1], 1.0, 2)]
        ordered = order_representatives(reps)
        assert [r.text for r in ordered] == ["b", "c", "a"]

    def test_round2_follows_previous_chain(self):
        prev = [rep("A", [1, 0, 0], 0, 0), rep("B", [0, 1, 0], 1, 1),
                rep("C", [0, 0, 1], 2, 2)]
        # primed reps arrive scrambled; each is similar only to its original
        reps = [rep("C'", [0, 0.05, 0.999], 0.0, 0),
                rep("A'", [0.999, 0.05, 0], 1.0, 1),
                rep("B'", [0.05, 0.999, 0], 2.0, 2)]
        ordered = order_representatives(reps, prev_chain=prev, tau_gen=0.45)
        assert [r.text for r in ordered] == ["A'", "B'", "C'"]

    def test_idempotent_against_self(self):
        chain = [rep("s1", [1, 0, 0], 0, 0), rep("s2", [0, 1, 0], 1, 1),
                 rep("s3", [0, 0, 1], 2, 2)]
        ordered = order_representatives(chain, prev_chain=chain, tau_gen=0.45)
        assert [r.text for r in ordered] == ["s1", "s2", "s3"]

    def test_topological_constraint_wins(self):
        # similarity order would put "count" first (mean position 0.0)
        reps = [rep("count items", [1, 0, 0], 0.0, 0),
                rep("identify items", [0, 1, 0], 5.0, 1)]
        ordered = order_representatives(reps, precedence=[(1, 0)])
        assert [r.text for r in ordered] == ["identify items", "count items"]

    def test_cycle_raises(self):
        reps = [rep("a", [1, 0], 0, 0), rep("b", [0, 1], 1, 1)]
        with pytest.raises(CyclicDependency):
            order_representatives(reps, precedence=[(0, 1), (1, 0)])

    def test_greedy_anchoring_above_exact_limit(self):
        n = 11
        eye = np.eye(n)
        prev = [rep(f"p{i}", eye[i], i, i) for i in range(n)]
        scrambled = [prev[(i * 7) % n] for i in range(n)]
        reps = [rep(f"r{p.pooled_index}", p.vector, i, i)
                for i, p in enumerate(scrambled)]
        ordered = order_representatives(reps, prev_chain=prev, tau_gen=0.45)
        assert [r.text for r in ordered] == [f"r{i}" for i in range(n)]


class TestValidator:
    def _validator(self, payload):
        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"text": payload})
        return client_for(handler, model_id="validator", endpoint="http://val")

    def test_all_true_passes(self):
        verdict_json = json.dumps({c: True for c in CRITERIA})
        verdict = validate_chain(example(), ["s1"], PipelineConfig(),
                                 self._validator(verdict_json))
        assert verdict.passed

    def test_single_false_fails(self):
        flags = {c: True for c in CRITERIA}
        flags["answer_consistency"] = False
        verdict = validate_chain(example(), ["s1"], PipelineConfig(),
                                 self._validator(json.dumps(flags)))
        assert not verdict.passed
        assert verdict.criteria["answer_consistency"] is False

    def test_prose_degrades_to_failed_verdict(self):
        verdict = parse_validator_output("Looks good to me!")
        assert not verdict.passed
        assert all(v is False for v in verdict.criteria.values())
        assert verdict.note


class TestRunDelphi:
    def _make_transport(self, validator_responses):
        """Generators share step strings so identical texts cluster; the
        validator replays scripted verdicts."""
        state = {"validator_calls": 0}
        canonical = ["inspect the scene", "locate the signal",
                     "read the signal color", "conclude the answer"]

        def handler(request: httpx.Request) -> httpx.Response:
            host = request.url.host
            if host.startswith("gen"):
                idx = int(host[-1])
                steps = canonical[: 3 + (idx % 2)] + [f"extra note {idx}"]
                return httpx.Response(200, json={
                    "text": "reference_steps = " + json.dumps(steps)})
            verdict = validator_responses[min(state["validator_calls"],
                                              len(validator_responses) - 1)]
            state["validator_calls"] += 1
            return httpx.Response(200, json={"text": json.dumps(verdict)})

        return httpx.MockTransport(handler), state

    def _run(self, validator_responses, phases=(1, 2, 3, 4)):
        transport, state = self._make_transport(validator_responses)
        gens = [ModelClient(f"gen{i}", f"http://gen{i}", transport=transport,
                            sleeper=lambda s: None) for i in range(4)]
        validator = ModelClient("validator", "http://val", transport=transport,
                                sleeper=lambda s: None)
        gateway = EmbeddingGateway(deterministic_descriptor(dim=128))
        cfg = PipelineConfig(phases_enabled=phases)
        result = run_delphi(example(), cfg, gens, validator, gateway)
        return result, state

    def test_pass_first_round(self):
        ok = {c: True for c in CRITERIA}
        result, state = self._run([ok])
        assert result.status == RoundStatus.VALIDATED
        assert len(result.rounds) == 1
        assert state["validator_calls"] == 1
        assert result.final_steps
        # shared steps deduplicate across the four generators
        assert len(result.final_steps) < 4 * 4

    def test_two_failures_escalate(self):
        bad = {c: True for c in CRITERIA}
        bad["visual_grounding"] = False
        result, state = self._run([bad, bad])
        assert result.status == RoundStatus.ESCALATED_TO_HUMAN
        assert len(result.rounds) == 2
        assert state["validator_calls"] == 2
        assert result.final_steps is None

    def test_fail_then_pass(self):
        bad = {c: True for c in CRITERIA}
        bad["logical_soundness"] = False
        ok = {c: True for c in CRITERIA}
        result, _ = self._run([bad, ok])
        assert result.status == RoundStatus.VALIDATED
        assert len(result.rounds) == 2

    def test_phase3_disabled_skips_validator(self):
        result, state = self._run([], phases=(1, 2))
        assert result.status == RoundStatus.VALIDATED
        assert state["validator_calls"] == 0


class TestStratification:
    def test_tier_boundaries(self):
        assert tier_for_score(0.10) == ComplexityTier.EASY
        assert tier_for_score(0.27) == ComplexityTier.MEDIUM
        assert tier_for_score(0.42 - 1e-12) == ComplexityTier.MEDIUM
        assert tier_for_score(0.42) == ComplexityTier.HARD

    def test_zero_subscores_give_zero(self):
        assert complexity_score(0, 0, 0, 0) == 0.0
        assert tier_for_score(complexity_score(0, 0, 0, 0)) == ComplexityTier.EASY

    def test_deterministic(self):
        ex = example(question="Why is the larger beam not aligned when it moves?",
                     steps=["s%d" % i for i in range(12)])
        assert stratify_complexity(ex) == stratify_complexity(ex)

    def test_score_increases_with_steps(self):
        short = example(steps=["s"] * 3)
        long = example(steps=["s"] * 40)
        assert stratify_complexity(long)[0] > stratify_complexity(short)[0]

    def test_counting_reduces_why_increases(self):
        base = example(question="What is shown in the figure panel here?",
                       steps=["s"] * 5)
        counting = example(question="How many items are in the figure panel?",
                           steps=["s"] * 5)
        why = example(question="Why is the item in the figure panel red?",
                      steps=["s"] * 5)
        assert stratify_complexity(counting)[0] < stratify_complexity(base)[0]
        assert stratify_complexity(why)[0] > stratify_complexity(base)[0]

    def test_takes_only_example(self):
        import inspect

        params = list(inspect.signature(stratify_complexity).parameters)
        assert params == ["example"]

    def test_linguistic_markers(self):
        plain = example(question="Identify the object in the panel area.", steps=["s"] * 5)
        marked = example(
            question="If the beam is larger than the ledge because it moved, "
                     "is it not aligned when compared?",
            steps=["s"] * 5)
        assert stratify_complexity(marked)[0] > stratify_complexity(plain)[0]
