// Browser entry point: binds the round-flow machine to the DOM and renders
// the SVG panels. Everything numeric comes from the server documents.

import { ApiClient } from "./api.js";
import { RoundFlow, RoundFlowState } from "./app.js";
import {
  bandPath,
  linePath,
  makeScale,
  scatterMarkers,
  scoreBars,
} from "./charts.js";
import { bandWidth } from "./view.js";

const WIDTH = 720;
const HEIGHT = 260;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function renderBands(state: RoundFlowState): string {
  const view = state.view;
  if (!view || view.bands.length === 0) return "";
  const panels = view.bands.map((band, k) => {
    const sx = makeScale(band.grid, [40, WIDTH - 10]);
    const values = [...band.lower95, ...band.upper95];
    const fieldY = Array.isArray(view.fieldPoints.y[0])
      ? (view.fieldPoints.y as number[][]).map((row) => row[k])
      : (view.fieldPoints.y as number[]);
    values.push(...fieldY);
    const sy = makeScale(values, [HEIGHT - 24, 10]);
    const band95 = bandPath(band.grid, band.lower95, band.upper95, sx, sy);
    const mean = linePath(band.grid, band.mean, sx, sy);
    const field = scatterMarkers(view.fieldPoints.x, fieldY, "field", sx, sy)
      .map((m) => `<circle class="pt-${m.cls}" cx="${m.x}" cy="${m.y}" r="3"/>`)
      .join("");
    const selected = view.timeline
      .map((t) => `<line class="selected-marker" x1="${
        (sx.range[0] + ((t.x - sx.domain[0]) / (sx.domain[1] - sx.domain[0]))
          * (sx.range[1] - sx.range[0])).toFixed(1)
      }" y1="10" x2="${
        (sx.range[0] + ((t.x - sx.domain[0]) / (sx.domain[1] - sx.domain[0]))
          * (sx.range[1] - sx.range[0])).toFixed(1)
      }" y2="${HEIGHT - 24}"/>`)
      .join("");
    return `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" class="panel">
      <path class="band" d="${band95}"/>
      <path class="mean" d="${mean}"/>
      ${selected}${field}
      <text x="44" y="20" class="panel-label">output ${k + 1}</text>
    </svg>`;
  });
  return panels.join("\n");
}

function renderScores(state: RoundFlowState): string {
  const view = state.view;
  if (!view) return "";
  const bars = scoreBars(
    view.candidates.map((c) => ({
      candidateIndex: c.candidateIndex,
      score: c.isSelected ? null : c.score,
    })),
    WIDTH - 50,
    120,
    view.suggestion?.candidate_index ?? null,
  );
  const rects = bars
    .map(
      (b) =>
        `<rect data-cand="${b.candidateIndex}" class="bar${
          b.highlighted ? " suggested" : ""
        }" x="${(40 + b.x).toFixed(1)}" y="${b.y.toFixed(1)}" width="${
          b.width.toFixed(1)
        }" height="${b.height.toFixed(1)}"/>`,
    )
    .join("");
  return `<svg viewBox="0 0 ${WIDTH} 130" class="panel">${rects}</svg>`;
}

function renderMetrics(state: RoundFlowState): string {
  const history = state.view?.metricHistory ?? [];
  const rows = history
    .map(
      (h) =>
        `<tr><td>${h.round}</td><td>${h.mse.toPrecision(4)}</td>` +
        `<td>${h.crps.toPrecision(4)}</td></tr>`,
    )
    .join("");
  return `<table><tr><th>round</th><th>mse</th><th>crps</th></tr>${rows}</table>`;
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "";
  const api = new ApiClient(base, (url, init) => fetch(url, init));

  let sessionId = params.get("session");
  if (!sessionId) {
    const created = await api.createSession("toy", {}, { mode: "ade" });
    sessionId = created.session_id;
  }
  const flow = new RoundFlow(api, sessionId);

  const status = el<HTMLDivElement>("status");
  const bands = el<HTMLDivElement>("bands");
  const scores = el<HTMLDivElement>("scores");
  const metrics = el<HTMLDivElement>("metrics");
  const input = el<HTMLInputElement>("observation");
  const alphaSlider = el<HTMLInputElement>("alpha");

  flow.onChange((state) => {
    status.textContent = describeState(state);
    bands.innerHTML = renderBands(state);
    scores.innerHTML = renderScores(state);
    metrics.innerHTML = renderMetrics(state);
    const width = state.view ? bandWidth(state.view) : null;
    el<HTMLSpanElement>("bandwidth").textContent =
      width === null ? "-" : width.toPrecision(4);
    el<HTMLButtonElement>("suggest").disabled = state.phase !== "idle";
    el<HTMLButtonElement>("submit").disabled =
      state.phase !== "awaiting-observation";
    el<HTMLDivElement>("input-error").textContent = state.inputError ?? "";
    el<HTMLDivElement>("confirm-box").style.display =
      state.phase === "confirm-override" ? "block" : "none";
  });

  el<HTMLButtonElement>("suggest").addEventListener("click", () =>
    flow.requestSuggestion(),
  );
  el<HTMLButtonElement>("submit").addEventListener("click", () =>
    flow.submitObservation(input.value),
  );
  el<HTMLButtonElement>("confirm-yes").addEventListener("click", () =>
    flow.confirmOverride(true),
  );
  el<HTMLButtonElement>("confirm-no").addEventListener("click", () =>
    flow.confirmOverride(false),
  );
  scores.addEventListener("click", (ev) => {
    const target = ev.target as SVGElement;
    const cand = target.getAttribute?.("data-cand");
    if (cand !== null && cand !== undefined) {
      flow.proposeOverride(Number(cand));
    }
  });
  alphaSlider.addEventListener("change", async () => {
    // the slider is a request parameter; the server recomputes scores
    const suggestion = await api.suggest(
      sessionId!,
      Number(alphaSlider.value),
    );
    flow.state.suggestion = suggestion;
    await flow.refresh();
  });

  await flow.refresh();
}

function describeState(state: RoundFlowState): string {
  const round = state.view ? `round ${state.view.round}/${state.view.budget}`
    : "";
  switch (state.phase) {
    case "idle":
      return `${round} - ask for the next suggestion`;
    case "suggesting":
      return `${round} - scoring candidates...`;
    case "awaiting-observation": {
      const target = state.overrideIndex ?? state.suggestion?.candidate_index;
      return `${round} - run the experiment at candidate ${target}, then ` +
        "enter the measured response";
    }
    case "confirm-override":
      return `${round} - confirm overriding the suggestion`;
    case "submitting":
      return `${round} - committing observation, refitting...`;
    case "done":
      return `${round} - budget spent; campaign complete`;
    case "error":
      return `error: ${state.lastError}`;
  }
}

boot().catch((err) => {
  document.body.insertAdjacentText("beforeend", `failed to start: ${err}`);
});
