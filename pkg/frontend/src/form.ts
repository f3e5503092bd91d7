// Rubric form state machine, kept free of DOM concerns so the submit
// gating rules are testable on their own. Raw answers keep protocol
// polarity (yes at "information loss?" means loss exists); the pass
// direction per metric decides which answers demand a justification.

import type {
  AnnotationSubmission,
  MetricCode,
  Predicates,
  RedundancyCategory,
} from "./types.js";
import { METRIC_ORDER } from "./types.js";

export interface MetricSpec {
  code: MetricCode;
  field: keyof Predicates;
  question: string;
  kind: "binary" | "ordinal";
  /** The answer that counts as the metric's maximum (no justification needed). */
  passAnswer: boolean | RedundancyCategory;
}

export const METRICS: MetricSpec[] = [
  { code: "IL", field: "info_loss", question: "Is critical information from the original question missing?", kind: "binary", passAnswer: false },
  { code: "IA", field: "info_add", question: "Is spurious or non-inferable information introduced?", kind: "binary", passAnswer: false },
  { code: "SI", field: "solvable_image", question: "Can the problem be solved from the image alone?", kind: "binary", passAnswer: false },
  { code: "SQ", field: "solvable_text", question: "Can the problem be solved from the text alone?", kind: "binary", passAnswer: false },
  { code: "RE", field: "redundancy", question: "How much information overlaps between text and image?", kind: "ordinal", passAnswer: "Partial" },
  { code: "NE", field: "natural", question: "Is the text fluent, coherent and grammatical?", kind: "binary", passAnswer: true },
  { code: "TQ", field: "technical", question: "Is the image technically sound and artifact-free?", kind: "binary", passAnswer: true },
  { code: "AQ", field: "aesthetic", question: "Is the image well-composed and visually clear?", kind: "binary", passAnswer: true },
  { code: "SC", field: "semantic", question: "Is the image unambiguous and scientifically accurate?", kind: "binary", passAnswer: true },
];

// Redundancy options follow the 0/1/2 codebook to avoid scale ambiguity.
export const REDUNDANCY_OPTIONS: { code: number; category: RedundancyCategory; label: string }[] = [
  { code: 0, category: "None", label: "0: no redundancy" },
  { code: 1, category: "Partial", label: "1: partial redundancy" },
  { code: 2, category: "Complete", label: "2: complete redundancy" },
];

type AnswerValue = boolean | RedundancyCategory;

export class RubricForm {
  private answers = new Map<MetricCode, AnswerValue>();
  private justifications = new Map<MetricCode, string>();

  reset(): void {
    this.answers.clear();
    this.justifications.clear();
  }

  setAnswer(code: MetricCode, value: AnswerValue): void {
    const spec = METRICS.find((m) => m.code === code);
    if (!spec) throw new Error(`unknown metric ${code}`);
    if (spec.kind === "binary" && typeof value !== "boolean") {
      throw new Error(`${code} takes a yes/no answer`);
    }
    if (spec.kind === "ordinal" && typeof value === "boolean") {
      throw new Error(`${code} takes a redundancy category`);
    }
    this.answers.set(code, value);
  }

  setJustification(code: MetricCode, text: string): void {
    this.justifications.set(code, text);
  }

  answer(code: MetricCode): AnswerValue | undefined {
    return this.answers.get(code);
  }

  /** Every one of the nine metrics has been answered. */
  isComplete(): boolean {
    return METRIC_ORDER.every((code) => this.answers.has(code));
  }

  /** Answered metrics sitting below their maximum; these need justifications. */
  nonPassMetrics(): MetricCode[] {
    return METRICS.filter(
      (m) => this.answers.has(m.code) && this.answers.get(m.code) !== m.passAnswer,
    ).map((m) => m.code);
  }

  missingJustifications(): MetricCode[] {
    return this.nonPassMetrics().filter(
      (code) => !(this.justifications.get(code) ?? "").trim(),
    );
  }

  /** Per-field problems blocking submission, for inline display. */
  fieldErrors(): Partial<Record<MetricCode, string>> {
    const errors: Partial<Record<MetricCode, string>> = {};
    for (const metric of METRICS) {
      if (!this.answers.has(metric.code)) {
        errors[metric.code] = "answer required";
      }
    }
    for (const code of this.missingJustifications()) {
      errors[code] = "justification required for a non-pass score";
    }
    return errors;
  }

  canSubmit(): boolean {
    return this.isComplete() && this.missingJustifications().length === 0;
  }

  buildPayload(taskId: string): AnnotationSubmission {
    if (!this.canSubmit()) {
      const blockers = Object.entries(this.fieldErrors())
        .map(([code, message]) => `${code}: ${message}`)
        .join("; ");
      throw new Error(`form is not submittable: ${blockers}`);
    }
    const predicates: Partial<Predicates> = {};
    for (const metric of METRICS) {
      // isComplete() guaranteed the answer exists.
      (predicates as Record<string, AnswerValue>)[metric.field] = this.answers.get(metric.code)!;
    }
    const justifications: Partial<Record<MetricCode, string>> = {};
    for (const code of this.nonPassMetrics()) {
      justifications[code] = (this.justifications.get(code) ?? "").trim();
    }
    const payload: AnnotationSubmission = {
      task_id: taskId,
      predicates: predicates as Predicates,
    };
    if (Object.keys(justifications).length > 0) {
      payload.justifications = justifications;
    }
    return payload;
  }
}
