// Payload shapes served by the design service. The dashboard renders these
// verbatim; it never re-derives statistical quantities client-side.

export interface SelectedPoint {
  candidate_index: number;
  point: number[];
  observation: number[] | null;
}

export interface MetricEntry {
  round: number;
  mse: number;
  crps: number;
}

export interface SessionSummary {
  session_id: string;
  schema_version: number;
  scenario: { name: string; params: Record<string, unknown> };
  round: number;
  budget: number;
  criterion: string;
  alpha: number;
  seed: number;
  selected: SelectedPoint[];
  remaining: number[];
  candidates: number[][];
  n_outputs: number;
  pending_suggestion: Suggestion | null;
  metric_history: MetricEntry[];
}

export interface ScoreRow {
  candidate_index: number;
  raw: number;
  complexity: number | null;
  hybrid: number | null;
  direction: string;
}

export interface Suggestion {
  candidate_index: number;
  point: number[];
  round: number;
  table: ScoreRow[];
  seconds: number;
}

export interface OutputBand {
  mean: number[];
  lower95: number[];
  upper95: number[];
}

export interface PredictiveDoc {
  grid: number[];
  outputs: OutputBand[];
  field_points: { x: number[]; y: number[] | number[][] };
}

export interface ObserveResult {
  round: number;
  observed: number[];
  candidate_index: number;
  mse: number;
  crps: number;
}

export interface JobTicket {
  job_id: string;
  status_url: string;
}

export interface JobStatus {
  job_id: string;
  status: "pending" | "done" | "failed";
  result: Suggestion | { error: string } | null;
}
