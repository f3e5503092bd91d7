// Wire types for the annotation service API. Field names must match the
// server exactly; the submission shape is additionally pinned by the
// published JSON schema (see ../src/mmqa/schemas/annotation_api.json).

export type RedundancyCategory = "None" | "Partial" | "Complete";

export interface Predicates {
  info_loss: boolean;
  info_add: boolean;
  solvable_text: boolean;
  solvable_image: boolean;
  redundancy: RedundancyCategory;
  natural: boolean;
  technical: boolean;
  aesthetic: boolean;
  semantic: boolean;
}

export type MetricCode = "IL" | "IA" | "SI" | "SQ" | "RE" | "NE" | "TQ" | "AQ" | "SC";

export const METRIC_ORDER: MetricCode[] = ["IL", "IA", "SI", "SQ", "RE", "NE", "TQ", "AQ", "SC"];

export interface AnnotationSubmission {
  task_id: string;
  predicates: Predicates;
  justifications?: Partial<Record<MetricCode, string>>;
}

export interface TaskImage {
  placeholder: string;
  image_url: string;
}

export interface TaskView {
  task_id: string;
  candidate_ref: string;
  role: string;
  source: { id: string; question: string; options: string[]; answer: string };
  candidate: { modified_question: string; images: TaskImage[]; explanation: string };
}

export interface SubmissionResult {
  task_id: string;
  status: string;
  escalated: boolean;
  resolved: boolean;
}

export interface ProgressView {
  annotator_id: string;
  completed: number;
  pending: number;
}

export interface IaaView {
  per_metric: Record<string, number | null>;
  mean: number | null;
  items: number;
  status: "ok" | "insufficient-data";
}
