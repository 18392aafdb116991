/** Typed client for the crystal-eval review endpoints. */

import type { DecisionAck, DecisionBody, ExampleView, ReviewTask } from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export type NextResult =
  | { kind: "task"; task: ReviewTask }
  | { kind: "empty" };

export type SubmitResult =
  | { kind: "ok"; ack: DecisionAck }
  | { kind: "conflict" }
  | { kind: "unavailable" }
  | { kind: "invalid"; message: string };

/** Raised for transport-level failures (the server never answered). */
export class ServiceUnreachable extends Error {
  constructor(cause: unknown) {
    super(`service unreachable: ${String(cause)}`);
    this.name = "ServiceUnreachable";
  }
}

export class ApiClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async get(path: string): Promise<Response> {
    try {
      return await this.fetchImpl(`${this.base}${path}`);
    } catch (err) {
      throw new ServiceUnreachable(err);
    }
  }

  async health(): Promise<boolean> {
    try {
      const response = await this.get("/v1/health");
      return response.ok;
    } catch {
      return false;
    }
  }

  /** Fetch the next pending review task; an empty queue is a normal outcome. */
  async reviewNext(): Promise<NextResult> {
    const response = await this.get("/v1/review/next");
    if (response.status === 204) {
      return { kind: "empty" };
    }
    if (!response.ok) {
      throw new ServiceUnreachable(`status ${response.status}`);
    }
    return { kind: "task", task: (await response.json()) as ReviewTask };
  }

  async getExample(id: string): Promise<ExampleView | null> {
    const response = await this.get(`/v1/examples/${encodeURIComponent(id)}`);
    if (!response.ok) {
      return null;
    }
    return (await response.json()) as ExampleView;
  }

  async submitDecision(taskId: string, body: DecisionBody): Promise<SubmitResult> {
    let response: Response;
    try {
      response = await this.fetchImpl(
        `${this.base}/v1/review/${encodeURIComponent(taskId)}`,
        {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify(body),
        },
      );
    } catch (err) {
      throw new ServiceUnreachable(err);
    }
    if (response.ok) {
      return { kind: "ok", ack: (await response.json()) as DecisionAck };
    }
    if (response.status === 409) {
      return { kind: "conflict" };
    }
    if (response.status === 503) {
      return { kind: "unavailable" };
    }
    let message = `status ${response.status}`;
    try {
      const payload = (await response.json()) as { error?: string };
      if (payload.error) {
        message = payload.error;
      }
    } catch {
      // keep the status line
    }
    return { kind: "invalid", message };
  }
}
