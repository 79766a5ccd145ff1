// Pure derivation of everything the screen shows from server payloads.
// Keeping this a plain function of the JSON documents makes every render
// reproducible in tests from fixture files alone.

import type {
  MetricEntry,
  PredictiveDoc,
  ScoreRow,
  SessionSummary,
  Suggestion,
} from "./types.js";

export interface BandSeries {
  grid: number[];
  mean: number[];
  lower95: number[];
  upper95: number[];
  outputIndex: number;
}

export interface CandidateMarker {
  candidateIndex: number;
  x: number;
  score: number | null;
  isSuggested: boolean;
  isSelected: boolean;
}

export interface TimelineEntry {
  round: number;
  candidateIndex: number;
  x: number;
  observation: number[] | null;
}

export interface SessionView {
  sessionId: string;
  round: number;
  budget: number;
  criterion: string;
  alpha: number;
  done: boolean;
  bands: BandSeries[];
  fieldPoints: { x: number[]; y: number[] | number[][] };
  candidates: CandidateMarker[];
  scoreTable: ScoreRow[];
  suggestion: Suggestion | null;
  timeline: TimelineEntry[];
  metricHistory: MetricEntry[];
}

export function deriveSessionView(
  session: SessionSummary,
  predictive: PredictiveDoc | null,
  suggestion: Suggestion | null,
): SessionView {
  const activeSuggestion = suggestion ?? session.pending_suggestion;
  const scoreByIndex = new Map<number, ScoreRow>();
  for (const row of activeSuggestion?.table ?? []) {
    scoreByIndex.set(row.candidate_index, row);
  }
  const selectedSet = new Set(
    session.selected.map((s) => s.candidate_index),
  );

  const candidates: CandidateMarker[] = session.candidates.map((pt, i) => {
    const row = scoreByIndex.get(i);
    const score = row ? (row.hybrid ?? row.raw) : null;
    return {
      candidateIndex: i,
      x: pt[0],
      score,
      isSuggested: activeSuggestion?.candidate_index === i,
      isSelected: selectedSet.has(i),
    };
  });

  const bands: BandSeries[] = (predictive?.outputs ?? []).map(
    (band, outputIndex) => ({
      grid: predictive!.grid,
      mean: band.mean,
      lower95: band.lower95,
      upper95: band.upper95,
      outputIndex,
    }),
  );

  const timeline: TimelineEntry[] = session.selected.map((s, i) => ({
    round: i + 1,
    candidateIndex: s.candidate_index,
    x: s.point[0],
    observation: s.observation,
  }));

  return {
    sessionId: session.session_id,
    round: session.round,
    budget: session.budget,
    criterion: session.criterion,
    alpha: session.alpha,
    done: session.round >= session.budget,
    bands,
    fieldPoints: predictive?.field_points ?? { x: [], y: [] },
    candidates,
    scoreTable: activeSuggestion?.table ?? [],
    suggestion: activeSuggestion,
    timeline,
    metricHistory: session.metric_history,
  };
}

// Mean band width over the grid; a display statistic, read straight off
// the server-provided band.
export function bandWidth(view: SessionView, outputIndex = 0): number | null {
  const band = view.bands[outputIndex];
  if (!band || band.grid.length === 0) return null;
  let total = 0;
  for (let i = 0; i < band.grid.length; i++) {
    total += band.upper95[i] - band.lower95[i];
  }
  return total / band.grid.length;
}

export function validateObservation(
  raw: string,
  nOutputs: number,
): number[] | null {
  const parts = raw.split(",").map((s) => s.trim());
  if (parts.length !== nOutputs) return null;
  if (parts.some((s) => s === "")) return null;
  const values = parts.map(Number);
  if (values.some((v) => !Number.isFinite(v))) return null;
  return values;
}
