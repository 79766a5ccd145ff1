import { describe, expect, it } from "vitest";
import { deriveSessionView, bandWidth, validateObservation } from "../src/view.js";
import type {
  PredictiveDoc,
  SessionSummary,
  Suggestion,
} from "../src/types.js";

import session0 from "./fixtures/session_round0.json";
import session1 from "./fixtures/session_round1.json";
import suggestion from "./fixtures/suggestion.json";
import predictive0 from "./fixtures/predictive_round0.json";
import predictive1 from "./fixtures/predictive_round1.json";

const s0 = session0 as unknown as SessionSummary;
const s1 = session1 as unknown as SessionSummary;
const sug = suggestion as unknown as Suggestion;
const p0 = predictive0 as unknown as PredictiveDoc;
const p1 = predictive1 as unknown as PredictiveDoc;

describe("deriveSessionView", () => {
  it("matches the round-0 snapshot from fixture payloads", () => {
    const view = deriveSessionView(s0, p0, sug);
    expect(view).toMatchSnapshot();
  });

  it("matches the round-1 snapshot after an observation", () => {
    const view = deriveSessionView(s1, p1, null);
    expect(view).toMatchSnapshot();
  });

  it("marks the suggested candidate and no others", () => {
    const view = deriveSessionView(s0, p0, sug);
    const flagged = view.candidates.filter((c) => c.isSuggested);
    expect(flagged).toHaveLength(1);
    expect(flagged[0].candidateIndex).toBe(sug.candidate_index);
  });

  it("removes committed candidates from the open pool", () => {
    const view = deriveSessionView(s1, p1, null);
    const committed = s1.selected[0].candidate_index;
    expect(view.candidates[committed].isSelected).toBe(true);
    expect(view.timeline).toHaveLength(1);
    expect(view.timeline[0].candidateIndex).toBe(committed);
    expect(view.round).toBe(1);
  });

  it("derives exclusively from server values (no recomputation)", () => {
    const view = deriveSessionView(s0, p0, sug);
    expect(view.bands[0].mean).toEqual(p0.outputs[0].mean);
    expect(view.bands[0].lower95).toEqual(p0.outputs[0].lower95);
    expect(view.metricHistory).toEqual(s0.metric_history);
  });

  it("band width is the average of server-provided envelopes", () => {
    const view = deriveSessionView(s0, p0, sug);
    const manual =
      p0.outputs[0].upper95
        .map((u, i) => u - p0.outputs[0].lower95[i])
        .reduce((a, b) => a + b, 0) / p0.grid.length;
    expect(bandWidth(view)).toBeCloseTo(manual, 12);
  });
});

describe("validateObservation", () => {
  it("rejects non-numeric entry", () => {
    expect(validateObservation("abc", 1)).toBeNull();
    expect(validateObservation("", 1)).toBeNull();
    expect(validateObservation("1.2,nan", 2)).toBeNull();
  });

  it("rejects wrong arity", () => {
    expect(validateObservation("1.0", 2)).toBeNull();
    expect(validateObservation("1.0,2.0", 1)).toBeNull();
  });

  it("accepts well-formed vectors", () => {
    expect(validateObservation("1.5", 1)).toEqual([1.5]);
    expect(validateObservation(" 1.5 , -2e-3 ", 2)).toEqual([1.5, -0.002]);
  });
});
