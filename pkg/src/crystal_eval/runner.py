"""Benchmark, ablation, and agreement-study orchestration."""

from __future__ import annotations

import json
import random
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import httpx

from . import answers as answer_scoring
from .core import (
    FORMAT_HEADER,
    Example,
    Prediction,
    load_dataset,
    load_predictions,
    parse_prediction,
)
from .embeddings import EmbeddingGateway, ProviderDescriptor
from .errors import InsufficientPairs
from .manifest import RunManifest
from .metrics import AggregateReport, OrderParams, aggregate, score_example
from .pipeline import ModelClient, PipelineConfig, RoundStatus, load_template, run_delphi
from .report import aggregate_to_dict, dump_json, emit_report, table_row

SCORING_WORKERS = 8


def _render_eval_prompt(example: Example, cfg: PipelineConfig) -> str:
    template = load_template("_evaluation", cfg)
    choices_block = ""
    if example.choices:
        choices_block = "Choices:\n" + "\n".join(f"{label}) {text}" for label, text in example.choices)
    return (template.replace("{{QUESTION}}", example.question)
            .replace("{{CHOICES}}", choices_block))


def fetch_predictions(examples: Sequence[Example], endpoint: dict[str, str],
                      manifest: RunManifest,
                      transport: Optional[httpx.BaseTransport] = None) -> dict[str, Prediction]:
    """Query one model endpoint for every example with the evaluation prompt.

    Decoding is greedy (temperature 0); per-example failures degrade to
    unparseable predictions so a single flaky call never aborts the run.
    """
    client = ModelClient(endpoint["name"], endpoint["endpoint"],
                         timeout_ms=manifest.timeout_ms, transport=transport)
    client.MAX_ATTEMPTS = max(1, manifest.retry_budget)

    def one(example: Example) -> tuple[str, Prediction]:
        prompt = _render_eval_prompt(example, manifest.pipeline)
        try:
            text = client.generate(prompt, example.image_ref, seed=manifest.seed,
                                   temperature=0.0)
        except ConnectionError:
            text = ""
        return example.id, parse_prediction(text, example.id)

    with ThreadPoolExecutor(max_workers=SCORING_WORKERS) as pool:
        results = dict(pool.map(one, examples))
    client.close()
    return results


INSUFFICIENT_ANSWER = "insufficient information"


def score_model(examples: Sequence[Example], predictions: dict[str, Prediction],
                gateway: EmbeddingGateway, tau: float, alpha: float,
                judge=None, collect_pairs: bool = False):
    """Score one model's predictions; returns (report, records, pair rows, stats)."""
    params = OrderParams(alpha=alpha)
    ordered_examples = sorted(examples, key=lambda e: e.id)

    def one(example: Example):
        pred = predictions.get(example.id)
        if pred is None:
            pred = parse_prediction("", example.id)
        n_pred = len(pred.steps)
        n_ref = len(example.reference_steps)
        pairs_out = []
        if n_pred > 0 and n_ref > 0:
            sims = gateway.similarity_matrix(pred.steps, example.reference_steps)
            if collect_pairs:
                for j in range(n_pred):
                    for k in range(n_ref):
                        pairs_out.append({
                            "example_id": example.id,
                            "pred_index": j,
                            "ref_index": k,
                            "similarity": float(sims.values[j, k]),
                            "pred_step": pred.steps[j],
                            "ref_step": example.reference_steps[k],
                        })
        else:
            sims = None
        answer_type = answer_scoring.classify(example.gold_answer, example.choices)
        verdict = answer_scoring.score_answer(pred.answer, example.gold_answer,
                                              answer_type, judge=judge,
                                              question=example.question)
        record, _ = score_example(sims, tau, params, example.id, n_pred, n_ref,
                                  verdict.correct)
        return record, pairs_out

    with ThreadPoolExecutor(max_workers=SCORING_WORKERS) as pool:
        results = list(pool.map(one, ordered_examples))
    records = [r for r, _ in results]
    pair_rows = [p for _, ps in results for p in ps]
    stats = {
        "format_failures": sum(
            1 for e in ordered_examples
            if not (predictions.get(e.id) or parse_prediction("", e.id)).format_ok),
        "insufficient_answers": sum(
            1 for e in ordered_examples
            if (predictions.get(e.id) is not None
                and predictions[e.id].answer.strip().lower() == INSUFFICIENT_ANSWER)),
    }
    return aggregate(records), records, pair_rows, stats


def _by_source_breakdown(examples: Sequence[Example], records) -> dict[str, dict]:
    by_id = {e.id: e for e in examples}
    groups: dict[str, list] = {}
    for record in records:
        source = by_id[record.example_id].source.value
        groups.setdefault(source, []).append(record)
    return {source: aggregate_to_dict(aggregate(rs)) for source, rs in sorted(groups.items())}


def run_benchmark(manifest: RunManifest,
                  transport: Optional[httpx.BaseTransport] = None) -> dict[str, AggregateReport]:
    """Run the full benchmark described by the manifest and emit report files."""
    manifest.require_eval_inputs()
    examples, record_errors = load_dataset(manifest.dataset, strict=False)
    out_dir = Path(manifest.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = manifest.cache_dir or (out_dir / "cache")

    judge = (answer_scoring.HttpJudge(manifest.judge_endpoint, manifest.timeout_ms,
                                      transport=transport)
             if manifest.judge_endpoint else None)

    model_predictions: dict[str, dict[str, Prediction]] = {}
    if manifest.predictions is not None:
        for model, path in sorted(manifest.predictions_by_model().items()):
            model_predictions[model] = load_predictions(path)
    else:
        for endpoint in sorted(manifest.model_endpoints, key=lambda e: e["name"]):
            model_predictions[endpoint["name"]] = fetch_predictions(
                examples, endpoint, manifest, transport=transport)

    reports: dict[str, AggregateReport] = {}
    summary: dict = {
        "format": "crystal/v1",
        "config": {
            "tau": manifest.tau,
            "alpha": manifest.alpha,
            "encoder_id": manifest.encoder.encoder_id,
            "seed": manifest.seed,
            "dataset": str(manifest.dataset),
        },
        "n_examples": len(examples),
        "skipped_records": len(record_errors),
        "models": {},
    }
    rows = []
    with EmbeddingGateway(manifest.encoder, cache_dir=cache_dir, transport=transport) as gateway:
        for model in sorted(model_predictions):
            report, records, pair_rows, stats = score_model(
                examples, model_predictions[model], gateway,
                manifest.tau, manifest.alpha, judge=judge,
                collect_pairs=manifest.emit_pairs)
            reports[model] = report
            summary["models"][model] = {
                **aggregate_to_dict(report),
                **stats,
                "by_source": _by_source_breakdown(examples, records),
            }
            rows.append(table_row(model, report))
            per_example_path = out_dir / f"per_example.{model}.jsonl"
            with per_example_path.open("w", encoding="utf-8") as fh:
                fh.write(json.dumps(FORMAT_HEADER, separators=(",", ":")) + "\n")
                for record in records:
                    fh.write(dump_json(record.to_dict()).rstrip("\n") + "\n")
            if manifest.emit_pairs:
                pairs_path = out_dir / f"pairs.{model}.jsonl"
                with pairs_path.open("w", encoding="utf-8") as fh:
                    for row in pair_rows:
                        fh.write(dump_json(row).rstrip("\n") + "\n")
    emit_report(summary, rows, out_dir)
    return reports


# ---------------------------------------------------------------------------
# ablation grid

def kendall_distance(rank_a: Sequence[str], rank_b: Sequence[str]) -> float:
    """Normalized Kendall distance between two rankings of the same items."""
    if set(rank_a) != set(rank_b):
        raise ValueError("rankings must cover the same items")
    n = len(rank_a)
    if n < 2:
        return 0.0
    pos_b = {item: i for i, item in enumerate(rank_b)}
    discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            if pos_b[rank_a[i]] > pos_b[rank_a[j]]:
                discordant += 1
    return discordant / (n * (n - 1) / 2)


def run_ablation(manifest: RunManifest, encoders: Sequence[ProviderDescriptor],
                 taus: Sequence[float],
                 transport: Optional[httpx.BaseTransport] = None) -> dict:
    """Metric recomputation over the full (encoder, tau) grid.

    Embeddings are computed once per encoder and reused across thresholds;
    failed cells are recorded without discarding completed ones.
    """
    if not encoders or not taus:
        raise ValueError("ablation needs at least one encoder and one tau")
    manifest.require_eval_inputs()
    examples, _ = load_dataset(manifest.dataset, strict=False)
    out_dir = Path(manifest.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = manifest.cache_dir or (out_dir / "cache")

    model_predictions = {model: load_predictions(path)
                         for model, path in sorted(manifest.predictions_by_model().items())}

    cells: dict[str, dict] = {}
    rankings: dict[str, list[str]] = {}
    for encoder in encoders:
        try:
            with EmbeddingGateway(encoder, cache_dir=cache_dir, transport=transport) as gateway:
                for tau in taus:
                    key = f"{encoder.encoder_id}|tau={tau:g}"
                    cell: dict = {"encoder_id": encoder.encoder_id, "tau": tau, "models": {}}
                    for model, preds in model_predictions.items():
                        report, _, _, _ = score_model(examples, preds, gateway, tau,
                                                      manifest.alpha, collect_pairs=False)
                        cell["models"][model] = aggregate_to_dict(report)
                    ranking = sorted(cell["models"],
                                     key=lambda m: (-cell["models"][m]["macro_f1"], m))
                    cell["ranking"] = ranking
                    cells[key] = cell
                    rankings[key] = ranking
        except Exception as exc:  # provider failure: keep completed cells
            cells[f"{encoder.encoder_id}|error"] = {
                "encoder_id": encoder.encoder_id, "error": str(exc)}

    keys = sorted(rankings)
    distances = {}
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            distances[f"{a} vs {b}"] = kendall_distance(rankings[a], rankings[b])
    grid = {
        "format": "crystal/v1",
        "taus": list(taus),
        "encoders": [e.encoder_id for e in encoders],
        "cells": cells,
        "rank_stability": {
            "pairwise_kendall_distance": distances,
            "max_distance": max(distances.values()) if distances else 0.0,
            "mean_distance": (sum(distances.values()) / len(distances)) if distances else 0.0,
        },
    }
    (out_dir / "ablation_grid.json").write_text(dump_json(grid), encoding="utf-8")
    _write_ablation_table(grid, out_dir / "ablation_grid.md")
    return grid


def _write_ablation_table(grid: dict, path: Path) -> None:
    lines = ["| Cell | " + " | ".join(
        sorted({m for c in grid["cells"].values() for m in c.get("models", {})}) or ["-"]) + " |"]
    models = sorted({m for c in grid["cells"].values() for m in c.get("models", {})})
    lines.append("|" + "|".join("---" for _ in range(len(models) + 1)) + "|")
    for key in sorted(grid["cells"]):
        cell = grid["cells"][key]
        if "error" in cell:
            lines.append(f"| {key} | error: {cell['error']} |")
            continue
        scores = [f"{cell['models'][m]['macro_f1']:.3f}" if m in cell["models"] else "-"
                  for m in models]
        lines.append("| " + key + " | " + " | ".join(scores) + " |")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# human-agreement sampling

DEFAULT_BANDS = (
    ("high", 0.50, None),   # similarity > 0.50
    ("mid", 0.20, 0.50),    # 0.20 <= similarity <= 0.50
    ("low", None, 0.20),    # similarity < 0.20
)
DEFAULT_BAND_COUNTS = (34, 33, 33)


def _band_of(similarity: float) -> str:
    if similarity > 0.50:
        return "high"
    if similarity >= 0.20:
        return "mid"
    return "low"


def agreement_sample(run_dir: str | Path, seed: int, tau: float,
                     band_counts: Sequence[int] = DEFAULT_BAND_COUNTS) -> tuple[Path, Path]:
    """Stratified step-pair sample for the human agreement study.

    Emits a blinded labeling sheet (no similarities shown) plus a key file
    for later re-joining; sampling is reproducible from the seed.
    """
    run_dir = Path(run_dir)
    pair_files = sorted(run_dir.glob("pairs.*.jsonl"))
    pairs = []
    for pf in pair_files:
        model = pf.name[len("pairs."):-len(".jsonl")]
        for line in pf.read_text(encoding="utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                row["model"] = model
                pairs.append(row)
    by_band: dict[str, list] = {"high": [], "mid": [], "low": []}
    for row in pairs:
        by_band[_band_of(row["similarity"])].append(row)

    rng = random.Random(seed)
    sampled = []
    for (band, _, _), count in zip(DEFAULT_BANDS, band_counts):
        available = by_band[band]
        if len(available) < count:
            raise InsufficientPairs(band, len(available), count)
        ordered = sorted(available, key=lambda r: (r["model"], r["example_id"],
                                                   r["pred_index"], r["ref_index"]))
        sampled.extend(rng.sample(ordered, count))

    sheet_path = run_dir / "agreement_sheet.jsonl"
    key_path = run_dir / "agreement_key.jsonl"
    with sheet_path.open("w", encoding="utf-8") as sheet, key_path.open("w", encoding="utf-8") as key:
        for i, row in enumerate(sampled):
            pair_id = f"pair-{i:04d}"
            sheet.write(dump_json({
                "pair_id": pair_id,
                "pred_step": row["pred_step"],
                "ref_step": row["ref_step"],
                "label": None,
            }).rstrip("\n") + "\n")
            key.write(dump_json({
                "pair_id": pair_id,
                "model": row["model"],
                "example_id": row["example_id"],
                "similarity": row["similarity"],
                "encoder_match": row["similarity"] >= tau,
            }).rstrip("\n") + "\n")
    return sheet_path, key_path


def join_agreement(labeled_sheet: str | Path, key_path: str | Path) -> tuple[list[int], list[int]]:
    """Join human labels with encoder decisions; returns (human, encoder) binary lists."""
    labels = {}
    for line in Path(labeled_sheet).read_text(encoding="utf-8").splitlines():
        if line.strip():
            row = json.loads(line)
            labels[row["pair_id"]] = 1 if row["label"] else 0
    human, encoder = [], []
    for line in Path(key_path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            row = json.loads(line)
            if row["pair_id"] in labels:
                human.append(labels[row["pair_id"]])
                encoder.append(1 if row["encoder_match"] else 0)
    return human, encoder


# ---------------------------------------------------------------------------
# reference-pipeline orchestration

PIPELINE_WORKERS = 4


def run_pipeline(manifest: RunManifest, journal,
                 transport: Optional[httpx.BaseTransport] = None,
                 max_examples: Optional[int] = None,
                 workers: int = PIPELINE_WORKERS) -> dict:
    """Drive the reference pipeline over every example that still needs work.

    Examples run independently on a bounded worker pool; journal appends
    serialize internally. Examples with a rejected review restart at round 1
    with a bumped cycle counter (fresh seeds); completed or in-review examples
    are skipped.
    """
    from .journal import ReviewState

    examples, _ = load_dataset(manifest.dataset, strict=False)
    state = ReviewState.from_journal(journal.replay())
    cache_dir = manifest.cache_dir or (Path(manifest.output_dir) / "cache")

    generators = [ModelClient(g["name"], g["endpoint"], manifest.timeout_ms, transport)
                  for g in manifest.generators]
    validator = (ModelClient(manifest.validator["name"], manifest.validator["endpoint"],
                             manifest.timeout_ms, transport)
                 if manifest.validator else None)

    work: list[tuple[Example, int]] = []
    counts = {"validated": 0, "escalated": 0, "failed": 0, "skipped": 0}
    for example in sorted(examples, key=lambda e: e.id):
        cycle = state.pipeline_pending.get(example.id)
        if cycle is None:
            done = (example.id in state.reference_complete
                    or example.id in state.tasks_by_example
                    or example.id in state.escalated
                    or example.reference_complete)
            if done:
                counts["skipped"] += 1
                continue
            cycle = 0
        work.append((example, cycle))
    if max_examples is not None:
        work = work[:max_examples]

    with EmbeddingGateway(manifest.encoder, cache_dir=cache_dir, transport=transport) as gateway:

        def process(item: tuple[Example, int]) -> str:
            example, cycle = item
            try:
                result = run_delphi(example, manifest.pipeline, generators, validator,
                                    gateway, cycle=cycle)
            except Exception as exc:
                journal.append({"event": "pipeline_error", "example_id": example.id,
                                "cycle": cycle, "error": str(exc)})
                return "failed"
            for state_round in result.rounds:
                journal.append({
                    "event": "pipeline_round",
                    "example_id": example.id,
                    "cycle": cycle,
                    "round": state_round.round,
                    "status": state_round.status.value,
                    "chain": state_round.ordered_chain,
                    "criteria": (state_round.validator_verdict.criteria
                                 if state_round.validator_verdict else None),
                })
            if result.status == RoundStatus.VALIDATED:
                if 4 in manifest.phases_enabled:
                    journal.append({
                        "event": "review_enqueued",
                        "task_id": f"task-{example.id}-c{cycle}",
                        "example_id": example.id,
                        "cycle": cycle,
                        "chain": result.final_steps,
                        "round_history": [r.ordered_chain for r in result.rounds],
                    })
                else:
                    journal.append({
                        "event": "pipeline_complete",
                        "example_id": example.id,
                        "cycle": cycle,
                        "steps": result.final_steps,
                    })
                return "validated"
            journal.append({
                "event": "pipeline_escalated",
                "example_id": example.id,
                "cycle": cycle,
                "rounds": [r.ordered_chain for r in result.rounds],
            })
            return "escalated"

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            for outcome in pool.map(process, work):
                counts[outcome] += 1
    for client in generators:
        client.close()
    if validator:
        validator.close()
    return counts
