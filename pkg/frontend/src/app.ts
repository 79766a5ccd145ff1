// Round-flow state machine for the adaptive loop: fetch a suggestion, show
// it, let the experimenter type the measured response (or override the
// candidate with confirmation), submit, and re-fetch everything the screen
// derives from. All server state is re-read after a commit; nothing is
// patched locally.

import { ApiClient, ApiError } from "./api.js";
import type { PredictiveDoc, SessionSummary, Suggestion } from "./types.js";
import { deriveSessionView, SessionView, validateObservation } from "./view.js";

export type Phase =
  | "idle"
  | "suggesting"
  | "awaiting-observation"
  | "confirm-override"
  | "submitting"
  | "done"
  | "error";

export interface RoundFlowState {
  phase: Phase;
  view: SessionView | null;
  suggestion: Suggestion | null;
  overrideIndex: number | null;
  inputError: string | null;
  lastError: string | null;
}

export class RoundFlow {
  state: RoundFlowState = {
    phase: "idle",
    view: null,
    suggestion: null,
    overrideIndex: null,
    inputError: null,
    lastError: null,
  };
  private listeners: ((s: RoundFlowState) => void)[] = [];

  constructor(
    private api: ApiClient,
    private sessionId: string,
  ) {}

  onChange(fn: (s: RoundFlowState) => void): void {
    this.listeners.push(fn);
  }

  private emit(patch: Partial<RoundFlowState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) fn(this.state);
  }

  async refresh(): Promise<void> {
    const [session, predictive] = await Promise.all([
      this.api.getSession(this.sessionId),
      this.api.predictive(this.sessionId),
    ]);
    this.applyServerState(session, predictive);
  }

  private applyServerState(
    session: SessionSummary,
    predictive: PredictiveDoc,
  ): void {
    const view = deriveSessionView(session, predictive, this.state.suggestion);
    const phase: Phase = view.done
      ? "done"
      : this.state.suggestion
        ? "awaiting-observation"
        : "idle";
    this.emit({ phase, view });
  }

  async requestSuggestion(): Promise<void> {
    if (this.state.phase !== "idle") return;
    this.emit({ phase: "suggesting", lastError: null });
    try {
      const suggestion = await this.api.suggest(this.sessionId);
      this.emit({ suggestion, overrideIndex: null });
      await this.refresh();
    } catch (err) {
      this.emit({ phase: "error", lastError: describe(err) });
    }
  }

  // Experimenter picks a different unselected candidate; requires an
  // explicit confirmation step before it becomes the pending target.
  proposeOverride(candidateIndex: number): void {
    if (this.state.phase !== "awaiting-observation") return;
    const view = this.state.view;
    if (!view) return;
    const marker = view.candidates[candidateIndex];
    if (!marker || marker.isSelected) return;
    this.emit({ phase: "confirm-override", overrideIndex: candidateIndex });
  }

  confirmOverride(accept: boolean): void {
    if (this.state.phase !== "confirm-override") return;
    this.emit({
      phase: "awaiting-observation",
      overrideIndex: accept ? this.state.overrideIndex : null,
    });
  }

  targetCandidate(): number | null {
    return this.state.overrideIndex ?? this.state.suggestion?.candidate_index
      ?? null;
  }

  async submitObservation(raw: string): Promise<void> {
    if (this.state.phase !== "awaiting-observation") return;
    const view = this.state.view;
    const target = this.targetCandidate();
    if (!view || target === null) return;
    const nOutputs = view.fieldPoints &&
      Array.isArray((view.fieldPoints.y as number[][])[0])
      ? (view.fieldPoints.y as number[][])[0].length
      : 1;
    const values = validateObservation(raw, nOutputs);
    if (values === null) {
      this.emit({
        inputError: `enter ${nOutputs} finite number(s), comma-separated`,
      });
      return;
    }
    this.emit({ phase: "submitting", inputError: null });
    try {
      await this.api.observe(this.sessionId, target, values);
      this.emit({ suggestion: null, overrideIndex: null });
      await this.refresh();
    } catch (err) {
      if (err instanceof ApiError && (err.status === 409 ||
          err.status === 422)) {
        // surfaced for retry: suggestion state is preserved
        this.emit({
          phase: "awaiting-observation",
          lastError: `${err.code}: ${err.message}`,
        });
        return;
      }
      this.emit({ phase: "error", lastError: describe(err) });
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}
