import { describe, expect, it } from "vitest";

import { ApiClient, ServiceUnreachable } from "../src/api.js";
import { fakeFetch, json, makeTask, noContent } from "./helpers.js";

describe("ApiClient.reviewNext", () => {
  it("returns the pending task", async () => {
    const fetchImpl = fakeFetch({ "GET /v1/review/next": () => json(makeTask()) });
    const client = new ApiClient("http://svc", fetchImpl);
    const result = await client.reviewNext();
    expect(result.kind).toBe("task");
    if (result.kind === "task") {
      expect(result.task.task_id).toBe("t1");
      expect(result.task.chain).toEqual(["step one", "step two"]);
    }
  });

  it("maps 204 to the empty-queue state", async () => {
    const fetchImpl = fakeFetch({ "GET /v1/review/next": () => noContent() });
    const client = new ApiClient("http://svc", fetchImpl);
    expect(await client.reviewNext()).toEqual({ kind: "empty" });
  });

  it("raises ServiceUnreachable when the transport fails", async () => {
    const client = new ApiClient("http://svc", () => Promise.reject(new Error("refused")));
    await expect(client.reviewNext()).rejects.toBeInstanceOf(ServiceUnreachable);
  });
});

describe("ApiClient.submitDecision", () => {
  const body = {
    verdict: "accept" as const,
    criteria: {
      logical_soundness: true,
      sequential_coherence: true,
      visual_grounding: true,
      answer_consistency: true,
    },
    reviewer_id: "r1",
  };

  it("returns ok with the acknowledgement", async () => {
    const fetchImpl = fakeFetch({
      "POST /v1/review/t1": () =>
        json({ task_id: "t1", status: "accepted", example_id: "ex-1" }),
    });
    const client = new ApiClient("http://svc", fetchImpl);
    const result = await client.submitDecision("t1", body);
    expect(result).toEqual({
      kind: "ok",
      ack: { task_id: "t1", status: "accepted", example_id: "ex-1" },
    });
    expect(fetchImpl.log.calls[0]?.body).toMatchObject({ verdict: "accept" });
  });

  it("maps 409 to conflict and 503 to unavailable", async () => {
    const fetchImpl = fakeFetch({
      "POST /v1/review/t1": [
        () => json({ error: "already decided" }, 409),
        () => json({ error: "journal write failed" }, 503),
      ],
    });
    const client = new ApiClient("http://svc", fetchImpl);
    expect((await client.submitDecision("t1", body)).kind).toBe("conflict");
    expect((await client.submitDecision("t1", body)).kind).toBe("unavailable");
  });

  it("surfaces validation errors with the server message", async () => {
    const fetchImpl = fakeFetch({
      "POST /v1/review/t1": () => json({ error: "reject requires a reason" }, 422),
    });
    const client = new ApiClient("http://svc", fetchImpl);
    const result = await client.submitDecision("t1", body);
    expect(result).toEqual({ kind: "invalid", message: "reject requires a reason" });
  });
});

describe("ApiClient.getExample", () => {
  it("fetches the example payload", async () => {
    const fetchImpl = fakeFetch({
      "GET /v1/examples/ex-1": () => json({ id: "ex-1", question: "q" }),
    });
    const client = new ApiClient("http://svc", fetchImpl);
    expect((await client.getExample("ex-1"))?.id).toBe("ex-1");
  });

  it("returns null on 404", async () => {
    const fetchImpl = fakeFetch({});
    const client = new ApiClient("http://svc", fetchImpl);
    expect(await client.getExample("ghost")).toBeNull();
  });
});
