import type { FetchLike } from "../src/api.js";
import type { ExampleView, ReviewTask } from "../src/types.js";

export function makeTask(overrides: Partial<ReviewTask> = {}): ReviewTask {
  return {
    task_id: "t1",
    example_id: "ex-1",
    chain: ["step one", "step two"],
    round_history: [["step one", "step two"]],
    cycle: 0,
    status: "pending",
    reviewer_id: null,
    decided_at: null,
    final_steps: null,
    reason: null,
    criteria: null,
    ...overrides,
  };
}

export function makeExample(overrides: Partial<ExampleView> = {}): ExampleView {
  return {
    id: "ex-1",
    source: "RealWorldQA",
    image_ref: "images/ex-1.jpg",
    question: "Which way is the dog going?",
    gold_answer: "Left to Right",
    reference_steps: [],
    ...overrides,
  };
}

export interface RouteLog {
  calls: { method: string; path: string; body?: unknown }[];
}

/**
 * Tiny fetch stub: routes are matched as "METHOD path" and may be a queue of
 * responses (consumed in order, last one repeating).
 */
export function fakeFetch(
  routes: Record<string, (() => Response) | (() => Response)[]>,
): FetchLike & { log: RouteLog } {
  const queues = new Map<string, (() => Response)[]>();
  for (const [key, value] of Object.entries(routes)) {
    queues.set(key, Array.isArray(value) ? [...value] : [value]);
  }
  const log: RouteLog = { calls: [] };
  const impl = (async (input: string, init?: RequestInit) => {
    const method = init?.method ?? "GET";
    const path = new URL(input, "http://test").pathname;
    log.calls.push({
      method,
      path,
      body: init?.body ? JSON.parse(String(init.body)) : undefined,
    });
    const queue = queues.get(`${method} ${path}`);
    if (!queue || queue.length === 0) {
      return new Response(JSON.stringify({ error: "no route" }), { status: 404 });
    }
    const responder = queue.length > 1 ? queue.shift()! : queue[0]!;
    return responder();
  }) as FetchLike & { log: RouteLog };
  impl.log = log;
  return impl;
}

export function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export function noContent(): Response {
  return new Response(null, { status: 204 });
}
