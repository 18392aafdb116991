/** Browser wiring: renders the review session into #app and binds controls. */

import { ApiClient } from "./api.js";
import { ReviewSession } from "./viewmodel.js";
import { CRITERIA, Criterion } from "./types.js";

const CRITERION_LABELS: Record<Criterion, string> = {
  logical_soundness: "Logically sound (no contradictions)",
  sequential_coherence: "Sequentially coherent (no jumps)",
  visual_grounding: "Visually grounded in the image",
  answer_consistency: "Steps yield the gold answer",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

export function mount(root: HTMLElement, session: ReviewSession): () => void {
  const render = () => {
    root.replaceChildren();
    root.append(renderHeader(session), renderBanner(session), renderBody(session, render));
  };

  const renderAnd = (action: () => Promise<void> | void) => async () => {
    await action();
    render();
  };

  function renderHeader(s: ReviewSession): HTMLElement {
    const position = s.tasks.length ? `${s.cursor + 1}/${s.tasks.length}` : "-";
    const slider = el("input", {
      type: "range",
      min: "0",
      max: String(Math.max(0, s.tasks.length - 1)),
      value: String(Math.max(0, s.cursor)),
    });
    slider.addEventListener("input", () => {
      s.goTo(Number(slider.value));
      render();
    });
    const prev = el("button", {}, "Prev");
    prev.addEventListener("click", renderAnd(() => s.prev()));
    const next = el("button", {}, "Next");
    next.addEventListener("click", renderAnd(() => s.next()));
    const load = el("button", {}, "Load next task");
    load.addEventListener("click", renderAnd(() => s.loadNext()));
    return el(
      "header",
      { class: "toolbar" },
      prev,
      next,
      slider,
      el("span", { class: "position" }, position),
      load,
      el("span", { class: "reviewer" }, `reviewer: ${s.reviewerId}`),
    );
  }

  function renderBanner(s: ReviewSession): HTMLElement {
    if (!s.banner) {
      return el("div", { class: "banner hidden" });
    }
    const retry = el("button", {}, "Retry");
    retry.addEventListener("click", renderAnd(() => s.loadNext()));
    return el("div", { class: "banner" }, s.banner, retry);
  }

  function renderBody(s: ReviewSession, rerender: () => void): HTMLElement {
    if (s.status === "empty" && !s.current) {
      return el("main", { class: "empty" }, "Queue is empty. Nothing to review.");
    }
    const view = s.current;
    if (!view) {
      return el("main", { class: "empty" }, "No task loaded yet.");
    }
    const example = view.example;
    const exampleBlock = example
      ? el(
          "section",
          { class: "example" },
          el("img", { src: example.image_ref, alt: `image for ${example.id}` }),
          el("h2", {}, example.question),
          el(
            "p",
            {},
            `Gold answer: ${example.gold_answer} (source: ${example.source})`,
          ),
          ...(example.choices ?? []).map(([label, text]) =>
            el("p", { class: "choice" }, `${label}) ${text}`),
          ),
        )
      : el("section", { class: "example" }, `example ${view.task.example_id}`);

    const steps = el(
      "ol",
      { class: "steps" },
      ...view.steps.map((step, i) => {
        const area = el("textarea", { rows: "2" });
        area.value = step.current;
        area.addEventListener("input", () => {
          s.editStep(i, area.value);
        });
        const reset = el("button", { class: "reset" }, "reset");
        reset.addEventListener("click", renderAnd(() => s.resetStep(i)));
        return el("li", { class: step.dirty ? "dirty" : "" }, area, reset);
      }),
    );

    const criteria = el(
      "fieldset",
      { class: "criteria" },
      ...CRITERIA.map((criterion) => {
        const group = el("div", { class: "criterion" }, CRITERION_LABELS[criterion]);
        for (const value of [true, false]) {
          const input = el("input", {
            type: "radio",
            name: `${view.task.task_id}:${criterion}`,
          }) as HTMLInputElement;
          input.checked = view.criteria[criterion] === value;
          input.addEventListener("change", renderAnd(() => s.setCriterion(criterion, value)));
          group.append(el("label", {}, input, value ? "pass" : "fail"));
        }
        return group;
      }),
    );

    const reason = el("input", {
      type: "text",
      placeholder: "rejection reason",
      value: s.reason,
    }) as HTMLInputElement;
    reason.addEventListener("input", () => s.setReason(reason.value));

    const accept = el("button", { class: "accept" },
      s.hasEdits ? "Accept with edits" : "Accept");
    accept.disabled = !s.canSubmit("accept").ok;
    accept.addEventListener("click", renderAnd(async () => {
      await s.submit("accept");
    }));
    const reject = el("button", { class: "reject" }, "Reject");
    reject.disabled = !s.canSubmit("reject").ok;
    reject.addEventListener("click", renderAnd(async () => {
      await s.submit("reject");
    }));

    const status = view.decided
      ? el("p", { class: "decided" }, `decided: ${view.decidedVerdict ?? "elsewhere"}`)
      : el("p", { class: "hint" }, s.canSubmit("accept").message ?? "");

    return el("main", {}, exampleBlock, steps, criteria, reason, accept, reject, status);
  }

  render();
  return render;
}

export async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("service") ?? "http://127.0.0.1:8321";
  const reviewer = params.get("reviewer") ?? "annotator-1";
  const api = new ApiClient(base);
  const session = new ReviewSession(api, reviewer, window.localStorage);
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app container");
  }
  const render = mount(root, session);
  await session.loadNext();
  render();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void start();
}
