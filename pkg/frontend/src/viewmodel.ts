/**
 * Review-session view model: one annotator working through the queue.
 *
 * State rules the UI relies on:
 * - a decision is submittable only when all four criteria are explicitly set;
 * - reject additionally needs a reason and at least one failed criterion;
 * - accepting with any dirty step automatically becomes accept_with_edits;
 * - navigation over previously loaded tasks never touches the server;
 * - criteria and step edits persist to local draft storage per task, so a
 *   network failure or reload never loses unsent work.
 */

import { ApiClient, ServiceUnreachable, SubmitResult } from "./api.js";
import { CRITERIA, Criterion, ExampleView, ReviewTask, Verdict } from "./types.js";

export interface StepEdit {
  original: string;
  current: string;
  dirty: boolean;
}

export type CriteriaState = Record<Criterion, boolean | null>;

export interface TaskView {
  task: ReviewTask;
  example: ExampleView | null;
  steps: StepEdit[];
  criteria: CriteriaState;
  decided: boolean;
  decidedVerdict?: Verdict;
}

export type QueueStatus = "idle" | "loading" | "ready" | "empty" | "error";

export interface DraftStorage {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

/** In-memory fallback used in tests and non-browser contexts. */
export class MemoryStorage implements DraftStorage {
  private readonly map = new Map<string, string>();

  getItem(key: string): string | null {
    return this.map.has(key) ? (this.map.get(key) as string) : null;
  }

  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }

  removeItem(key: string): void {
    this.map.delete(key);
  }
}

interface Draft {
  criteria: CriteriaState;
  steps: string[];
  reason: string;
}

export interface SubmitOutcome {
  result: SubmitResult | { kind: "blocked"; message: string };
  advanced: boolean;
}

const RETRY_ATTEMPTS = 3;
const RETRY_BASE_MS = 250;

function emptyCriteria(): CriteriaState {
  const state = {} as CriteriaState;
  for (const criterion of CRITERIA) {
    state[criterion] = null;
  }
  return state;
}

export class ReviewSession {
  readonly reviewerId: string;
  tasks: TaskView[] = [];
  cursor = -1;
  status: QueueStatus = "idle";
  banner: string | null = null;
  reason = "";

  private readonly api: ApiClient;
  private readonly storage: DraftStorage;
  private readonly sleep: (ms: number) => Promise<void>;

  constructor(
    api: ApiClient,
    reviewerId: string,
    storage?: DraftStorage,
    sleep?: (ms: number) => Promise<void>,
  ) {
    this.api = api;
    this.reviewerId = reviewerId;
    this.storage = storage ?? new MemoryStorage();
    this.sleep = sleep ?? ((ms) => new Promise((resolve) => setTimeout(resolve, ms)));
  }

  get current(): TaskView | null {
    return this.cursor >= 0 && this.cursor < this.tasks.length
      ? this.tasks[this.cursor]!
      : null;
  }

  /** Pull the next pending task from the queue; prior work is never dropped. */
  async loadNext(): Promise<void> {
    this.status = "loading";
    this.banner = null;
    try {
      const next = await this.api.reviewNext();
      if (next.kind === "empty") {
        this.status = "empty";
        return;
      }
      const existing = this.tasks.findIndex((t) => t.task.task_id === next.task.task_id);
      if (existing >= 0) {
        this.cursor = existing;
        this.status = "ready";
        return;
      }
      const example = await this.api.getExample(next.task.example_id);
      const view: TaskView = {
        task: next.task,
        example,
        steps: next.task.chain.map((s) => ({ original: s, current: s, dirty: false })),
        criteria: emptyCriteria(),
        decided: false,
      };
      this.restoreDraft(view);
      this.tasks.push(view);
      this.cursor = this.tasks.length - 1;
      this.status = "ready";
    } catch (err) {
      if (err instanceof ServiceUnreachable) {
        this.status = "error";
        this.banner = "Service unreachable; your edits are kept locally. Retry.";
        return;
      }
      throw err;
    }
  }

  /* ------------------------------------------------------------------ */
  /* navigation: pure cursor moves, no server calls                      */

  prev(): void {
    if (this.cursor > 0) {
      this.cursor -= 1;
    }
  }

  next(): void {
    if (this.cursor < this.tasks.length - 1) {
      this.cursor += 1;
    }
  }

  goTo(index: number): void {
    if (index >= 0 && index < this.tasks.length) {
      this.cursor = index;
    }
  }

  /* ------------------------------------------------------------------ */
  /* edits                                                               */

  setCriterion(criterion: Criterion, value: boolean): void {
    const view = this.current;
    if (!view || view.decided) {
      return;
    }
    view.criteria[criterion] = value;
    this.saveDraft(view);
  }

  editStep(index: number, text: string): void {
    const view = this.current;
    if (!view || view.decided) {
      return;
    }
    const step = view.steps[index];
    if (!step) {
      return;
    }
    step.current = text;
    step.dirty = step.current !== step.original;
    this.saveDraft(view);
  }

  resetStep(index: number): void {
    const view = this.current;
    const step = view?.steps[index];
    if (!view || !step) {
      return;
    }
    step.current = step.original;
    step.dirty = false;
    this.saveDraft(view);
  }

  setReason(reason: string): void {
    this.reason = reason;
    const view = this.current;
    if (view) {
      this.saveDraft(view);
    }
  }

  /* ------------------------------------------------------------------ */
  /* derived state                                                       */

  get allCriteriaSet(): boolean {
    const view = this.current;
    return !!view && CRITERIA.every((c) => view.criteria[c] !== null);
  }

  /** The four-flag conjunction shown to the user; it equals the verdict family. */
  get conjunction(): boolean {
    const view = this.current;
    return !!view && CRITERIA.every((c) => view.criteria[c] === true);
  }

  get hasEdits(): boolean {
    return !!this.current && this.current.steps.some((s) => s.dirty);
  }

  get editedSteps(): string[] {
    return this.current ? this.current.steps.map((s) => s.current) : [];
  }

  /** Accepting with edits upgrades automatically; the caller states intent only. */
  effectiveVerdict(intent: "accept" | "reject"): Verdict {
    if (intent === "reject") {
      return "reject";
    }
    return this.hasEdits ? "accept_with_edits" : "accept";
  }

  canSubmit(intent: "accept" | "reject"): { ok: boolean; message?: string } {
    const view = this.current;
    if (!view) {
      return { ok: false, message: "no task loaded" };
    }
    if (view.decided) {
      return { ok: false, message: "task already decided" };
    }
    if (!this.allCriteriaSet) {
      return { ok: false, message: "set all four criteria first" };
    }
    if (intent === "accept" && !this.conjunction) {
      return { ok: false, message: "acceptance requires all criteria to hold" };
    }
    if (intent === "reject") {
      if (this.conjunction) {
        return { ok: false, message: "rejection requires a failed criterion" };
      }
      if (!this.reason.trim()) {
        return { ok: false, message: "rejection requires a reason" };
      }
    }
    return { ok: true };
  }

  /* ------------------------------------------------------------------ */
  /* submission                                                          */

  /**
   * Submit the decision for the current task. 503s retry with backoff;
   * a 409 marks the task stale so the caller reloads; success clears the
   * draft and advances to the next queue item.
   */
  async submit(intent: "accept" | "reject"): Promise<SubmitOutcome> {
    const view = this.current;
    const gate = this.canSubmit(intent);
    if (!view || !gate.ok) {
      return {
        result: { kind: "blocked", message: gate.message ?? "not submittable" },
        advanced: false,
      };
    }
    const verdict = this.effectiveVerdict(intent);
    const criteria = {} as Record<Criterion, boolean>;
    for (const criterion of CRITERIA) {
      criteria[criterion] = view.criteria[criterion] === true;
    }
    const body = {
      verdict,
      criteria,
      reviewer_id: this.reviewerId,
      ...(verdict === "accept_with_edits" ? { edited_steps: this.editedSteps } : {}),
      ...(verdict === "reject" ? { reason: this.reason.trim() } : {}),
    };
    let result: SubmitResult | null = null;
    for (let attempt = 0; attempt < RETRY_ATTEMPTS; attempt += 1) {
      result = await this.api.submitDecision(view.task.task_id, body);
      if (result.kind !== "unavailable") {
        break;
      }
      if (attempt + 1 < RETRY_ATTEMPTS) {
        await this.sleep(RETRY_BASE_MS * 2 ** attempt);
      }
    }
    if (!result) {
      return { result: { kind: "blocked", message: "no attempt made" }, advanced: false };
    }
    if (result.kind === "ok") {
      view.decided = true;
      view.decidedVerdict = verdict;
      this.clearDraft(view);
      this.reason = "";
      await this.loadNext();
      return { result, advanced: true };
    }
    if (result.kind === "conflict") {
      // someone else decided it: drop local pending state and refresh
      view.decided = true;
      this.clearDraft(view);
      await this.loadNext();
      this.banner = "Task was already decided elsewhere; loading the next one.";
      return { result, advanced: true };
    }
    if (result.kind === "unavailable") {
      this.banner = "Service temporarily unavailable; decision not recorded yet.";
    } else {
      this.banner = `Submission rejected: ${result.message}`;
    }
    return { result, advanced: false };
  }

  /* ------------------------------------------------------------------ */
  /* draft persistence                                                   */

  private draftKey(view: TaskView): string {
    return `crystal-review-draft:${this.reviewerId}:${view.task.task_id}`;
  }

  private saveDraft(view: TaskView): void {
    const draft: Draft = {
      criteria: view.criteria,
      steps: view.steps.map((s) => s.current),
      reason: this.reason,
    };
    this.storage.setItem(this.draftKey(view), JSON.stringify(draft));
  }

  private restoreDraft(view: TaskView): void {
    const raw = this.storage.getItem(this.draftKey(view));
    if (!raw) {
      return;
    }
    try {
      const draft = JSON.parse(raw) as Draft;
      for (const criterion of CRITERIA) {
        const value = draft.criteria[criterion];
        view.criteria[criterion] = value === null ? null : Boolean(value);
      }
      draft.steps.forEach((text, i) => {
        const step = view.steps[i];
        if (step) {
          step.current = text;
          step.dirty = text !== step.original;
        }
      });
      this.reason = draft.reason ?? "";
    } catch {
      this.storage.removeItem(this.draftKey(view));
    }
  }

  private clearDraft(view: TaskView): void {
    this.storage.removeItem(this.draftKey(view));
  }
}
