"""HTTP service: review queue for the human gate, ad-hoc metrics, and reward serving.

All mutations are single journal appends; replaying the journal at startup
reconstructs the queue, so the service can be killed and restarted at any
point. Review rejections re-enqueue the example for a fresh pipeline cycle.
"""

from __future__ import annotations

import datetime
import threading
from pathlib import Path
from typing import Literal, Optional

from fastapi import FastAPI, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .core import example_to_dict, load_dataset
from .embeddings import EmbeddingGateway
from .errors import DatasetUnreadable
from .journal import Journal, ReviewState, TaskStatus, Verdict
from .manifest import RunManifest
from .metrics import OrderParams, score_example
from .pipeline import CRITERIA
from .rewards import Phase, RewardConfig, composite_reward, cpr_reward


class DecisionBody(BaseModel):
    verdict: Literal["accept", "reject", "accept_with_edits"]
    criteria: dict[str, bool]
    reviewer_id: str
    edited_steps: Optional[list[str]] = None
    reason: Optional[str] = None


class MatchF1Body(BaseModel):
    pred_steps: list[str]
    ref_steps: list[str]
    tau: Optional[float] = None
    alpha: Optional[float] = None


class RewardCandidate(BaseModel):
    correct: bool
    f1_step: float = Field(ge=0.0, le=1.0)
    format_ok: bool = True


class RewardsBody(BaseModel):
    batch: list[RewardCandidate]
    mode: Literal["cpr", "composite"] = "cpr"
    phase: Literal[1, 2] = 2
    config: Optional[dict] = None


def create_app(manifest: RunManifest) -> FastAPI:
    app = FastAPI(title="crystal-eval service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    out_dir = Path(manifest.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    journal = Journal(out_dir / "journal.jsonl")
    state = ReviewState.from_journal(journal.replay())
    lock = threading.Lock()

    try:
        examples, _ = load_dataset(manifest.dataset, strict=False)
    except DatasetUnreadable:
        examples = []
    examples_by_id = {e.id: e for e in examples}

    gateway = EmbeddingGateway(manifest.encoder,
                               cache_dir=manifest.cache_dir or (out_dir / "cache"))

    app.state.journal = journal
    app.state.review = state
    app.state.gateway = gateway

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "format": "crystal/v1"}

    @app.get("/v1/review/next")
    def review_next():
        with lock:
            task = state.next_pending()
            if task is None:
                return Response(status_code=204)
            return JSONResponse(task.to_dict())

    @app.post("/v1/review/{task_id}")
    def review_decide(task_id: str, body: DecisionBody):
        with lock:
            task = state.tasks.get(task_id)
            if task is None:
                return JSONResponse({"error": "unknown task"}, status_code=404)
            if task.status != TaskStatus.PENDING:
                return JSONResponse({"error": "already decided",
                                     "status": task.status.value}, status_code=409)
            missing = [c for c in CRITERIA if c not in body.criteria]
            if missing:
                return JSONResponse({"error": f"criteria not set: {missing}"}, status_code=422)
            flags = {c: bool(body.criteria[c]) for c in CRITERIA}
            verdict = Verdict(body.verdict)
            if verdict == Verdict.ACCEPT_WITH_EDITS and not body.edited_steps:
                return JSONResponse({"error": "accept_with_edits requires edited_steps"},
                                    status_code=422)
            if verdict == Verdict.REJECT:
                if all(flags.values()):
                    return JSONResponse({"error": "reject requires a failed criterion"},
                                        status_code=422)
                if not body.reason:
                    return JSONResponse({"error": "reject requires a reason"}, status_code=422)
            if verdict != Verdict.REJECT and not all(flags.values()):
                return JSONResponse({"error": "acceptance requires all criteria true"},
                                    status_code=422)
            record = {
                "event": "review_decided",
                "task_id": task_id,
                "verdict": verdict.value,
                "criteria": flags,
                "reviewer_id": body.reviewer_id,
                "edited_steps": body.edited_steps,
                "reason": body.reason,
                "decided_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            }
            try:
                journal.append(record)
            except OSError as exc:
                return JSONResponse({"error": f"journal write failed: {exc}"}, status_code=503)
            state.apply(record)
            return {"task_id": task_id, "status": state.tasks[task_id].status.value,
                    "example_id": task.example_id}

    @app.get("/v1/examples/{example_id}")
    def get_example(example_id: str):
        example = examples_by_id.get(example_id)
        if example is None:
            return JSONResponse({"error": "unknown example"}, status_code=404)
        return example_to_dict(example)

    @app.post("/v1/metrics/match-f1")
    def match_f1(body: MatchF1Body):
        tau = body.tau if body.tau is not None else manifest.tau
        alpha = body.alpha if body.alpha is not None else manifest.alpha
        n_pred, n_ref = len(body.pred_steps), len(body.ref_steps)
        sims = (gateway.similarity_matrix(body.pred_steps, body.ref_steps)
                if n_pred and n_ref else None)
        record, _ = score_example(sims, tau, OrderParams(alpha=alpha), "adhoc",
                                  n_pred, n_ref, answer_correct=False)
        return record.to_dict()

    @app.post("/v1/rewards")
    def rewards(body: RewardsBody):
        cfg = RewardConfig.from_dict(body.config) if body.config else manifest.reward
        if body.mode == "cpr":
            outcomes = [cpr_reward(c.correct, c.f1_step, cfg) for c in body.batch]
        else:
            phase = Phase.PHASE1_ANSWER_ONLY if body.phase == 1 else Phase.PHASE2_CPR
            outcomes = composite_reward(
                [(c.format_ok, c.correct, c.f1_step) for c in body.batch], cfg, phase)
        return [o.to_dict() for o in outcomes]

    return app


def serve(manifest: RunManifest, host: str = "127.0.0.1", port: int = 8321) -> None:
    import errno

    import uvicorn

    from .errors import PortInUse

    app = create_app(manifest)
    config = uvicorn.Config(app, host=host, port=port, log_level="info")
    server = uvicorn.Server(config)
    try:
        server.run()
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            raise PortInUse(f"port {port} already bound") from exc
        raise
