/** Wire types mirroring the crystal-eval service JSON. */

export const CRITERIA = [
  "logical_soundness",
  "sequential_coherence",
  "visual_grounding",
  "answer_consistency",
] as const;

export type Criterion = (typeof CRITERIA)[number];

export type Verdict = "accept" | "reject" | "accept_with_edits";

export interface ReviewTask {
  task_id: string;
  example_id: string;
  chain: string[];
  round_history: string[][];
  cycle: number;
  status: "pending" | "accepted" | "rejected" | "edited";
  reviewer_id: string | null;
  decided_at: string | null;
  final_steps: string[] | null;
  reason: string | null;
  criteria: Record<string, boolean> | null;
}

export interface ExampleView {
  id: string;
  source: string;
  image_ref: string;
  question: string;
  gold_answer: string;
  reference_steps: string[];
  choices?: [string, string][];
  complexity_tier?: string;
}

export interface DecisionBody {
  verdict: Verdict;
  criteria: Record<Criterion, boolean>;
  reviewer_id: string;
  edited_steps?: string[];
  reason?: string;
}

export interface DecisionAck {
  task_id: string;
  status: string;
  example_id: string;
}
