/**
 * Live round-trip against the real service: accept marks the example
 * reference-complete, reject re-enqueues it as a round-1 pipeline item, and
 * an edited acceptance persists the edited steps verbatim.
 */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { CRITERIA } from "../src/types.js";
import { MemoryStorage, ReviewSession } from "../src/viewmodel.js";

const PORT = 8700 + (process.pid % 200);
const BASE = `http://127.0.0.1:${PORT}`;

let proc: ChildProcess | null = null;
let workDir = "";

function jsonl(lines: unknown[]): string {
  return lines.map((l) => JSON.stringify(l)).join("\n") + "\n";
}

function writeFixture(dir: string): void {
  const examples = [1, 2, 3].map((i) => ({
    id: `ex-${i}`,
    source: "RealWorldQA",
    image_ref: `images/${i}.jpg`,
    question: `Integration question ${i}?`,
    gold_answer: "yes",
    reference_steps: [],
  }));
  writeFileSync(join(dir, "dataset.jsonl"),
    jsonl([{ format: "crystal/v1" }, ...examples]));
  const enqueue = (i: number) => ({
    event: "review_enqueued",
    task_id: `task-ex-${i}-c0`,
    example_id: `ex-${i}`,
    cycle: 0,
    chain: [`observe scene ${i}`, `derive answer ${i}`],
    round_history: [[`observe scene ${i}`, `derive answer ${i}`]],
  });
  writeFileSync(join(dir, "journal.jsonl"), jsonl([enqueue(1), enqueue(2), enqueue(3)]));
  writeFileSync(join(dir, "manifest.json"), JSON.stringify({
    dataset: "dataset.jsonl",
    output_dir: ".",
    encoder: { encoder_id: "deterministic-test", endpoint: "deterministic://", dim: 64 },
  }));
}

async function waitForHealth(api: ApiClient, attempts = 60): Promise<void> {
  for (let i = 0; i < attempts; i += 1) {
    if (await api.health()) {
      return;
    }
    await new Promise((resolve) => setTimeout(resolve, 500));
  }
  throw new Error("service did not become healthy");
}

function journalEvents(): { event: string; [k: string]: unknown }[] {
  return readFileSync(join(workDir, "journal.jsonl"), "utf-8")
    .split("\n")
    .filter((l) => l.trim())
    .map((l) => JSON.parse(l));
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "crystal-ui-"));
  writeFixture(workDir);
  proc = spawn("crystal",
    ["serve", "--manifest", join(workDir, "manifest.json"), "--port", String(PORT)],
    { stdio: "ignore" });
  await waitForHealth(new ApiClient(BASE));
}, 60_000);

afterAll(() => {
  proc?.kill();
});

function freshSession(reviewer = "annotator-1"): ReviewSession {
  return new ReviewSession(new ApiClient(BASE), reviewer, new MemoryStorage());
}

function setAll(session: ReviewSession, value = true): void {
  for (const criterion of CRITERIA) {
    session.setCriterion(criterion, value);
  }
}

describe("review round-trip against the live service", () => {
  it("accept marks the task reference-complete", async () => {
    const session = freshSession();
    await session.loadNext();
    expect(session.current?.task.task_id).toBe("task-ex-1-c0");
    expect(session.current?.example?.question).toBe("Integration question 1?");
    setAll(session, true);
    const outcome = await session.submit("accept");
    expect(outcome.result.kind).toBe("ok");
    if (outcome.result.kind === "ok") {
      expect(outcome.result.ack.status).toBe("accepted");
    }
    const decided = journalEvents().filter((e) => e.event === "review_decided");
    expect(decided.at(-1)).toMatchObject({
      task_id: "task-ex-1-c0",
      verdict: "accept",
    });
    // the accepted chain is the final reference
    expect(session.tasks[0]?.decided).toBe(true);
  }, 30_000);

  it("reject re-enqueues the example as a round-1 pipeline item", async () => {
    const session = freshSession();
    await session.loadNext();
    expect(session.current?.task.task_id).toBe("task-ex-2-c0");
    setAll(session, true);
    session.setCriterion("visual_grounding", false);
    session.setReason("claims are not visible");
    const outcome = await session.submit("reject");
    expect(outcome.result.kind).toBe("ok");
    const decided = journalEvents().filter((e) => e.event === "review_decided");
    expect(decided.at(-1)).toMatchObject({
      task_id: "task-ex-2-c0",
      verdict: "reject",
      reason: "claims are not visible",
    });
    // restarting the service replays the journal: ex-2 must be pipeline-pending
    const restarted = spawn("python3", ["-c", `
import json, sys
sys.path.insert(0, ${JSON.stringify(process.env.CRYSTAL_SRC ?? "")})
from crystal_eval.journal import Journal, ReviewState
state = ReviewState.from_journal(Journal(${JSON.stringify(join(workDir, "journal.jsonl"))}).replay())
print(json.dumps({"pending": state.pipeline_pending}))
`]);
    const output = await new Promise<string>((resolve, reject) => {
      let data = "";
      restarted.stdout?.on("data", (chunk) => { data += chunk; });
      restarted.on("close", () => resolve(data));
      restarted.on("error", reject);
    });
    expect(JSON.parse(output.trim())).toEqual({ pending: { "ex-2": 1 } });
  }, 30_000);

  it("an edited acceptance persists the edited steps verbatim", async () => {
    const session = freshSession();
    await session.loadNext();
    expect(session.current?.task.task_id).toBe("task-ex-3-c0");
    setAll(session, true);
    session.editStep(0, "observe the scene  with  spacing preserved");
    expect(session.effectiveVerdict("accept")).toBe("accept_with_edits");
    const outcome = await session.submit("accept");
    expect(outcome.result.kind).toBe("ok");
    const decided = journalEvents().filter((e) => e.event === "review_decided");
    expect(decided.at(-1)).toMatchObject({
      task_id: "task-ex-3-c0",
      verdict: "accept_with_edits",
      edited_steps: ["observe the scene  with  spacing preserved", "derive answer 3"],
    });
  }, 30_000);

  it("the queue is empty afterwards and a second decision conflicts", async () => {
    const api = new ApiClient(BASE);
    expect(await api.reviewNext()).toEqual({ kind: "empty" });
    const again = await api.submitDecision("task-ex-1-c0", {
      verdict: "accept",
      criteria: Object.fromEntries(CRITERIA.map((c) => [c, true])) as never,
      reviewer_id: "annotator-2",
    });
    expect(again.kind).toBe("conflict");
  }, 30_000);
});
