// SVG fragment builders: pure string functions over numeric series, so the
// chart layer is testable without a DOM.

export interface Scale {
  domain: [number, number];
  range: [number, number];
}

export function makeScale(values: number[], range: [number, number],
                          pad = 0.05): Scale {
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (!Number.isFinite(lo) || !Number.isFinite(hi)) {
    lo = 0;
    hi = 1;
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const span = hi - lo;
  return { domain: [lo - pad * span, hi + pad * span], range };
}

export function scaleValue(s: Scale, v: number): number {
  const [d0, d1] = s.domain;
  const [r0, r1] = s.range;
  return r0 + ((v - d0) / (d1 - d0)) * (r1 - r0);
}

const fmt = (v: number) => (Math.round(v * 100) / 100).toString();

export function linePath(xs: number[], ys: number[], sx: Scale,
                         sy: Scale): string {
  return xs
    .map((x, i) => {
      const cmd = i === 0 ? "M" : "L";
      return `${cmd}${fmt(scaleValue(sx, x))},${fmt(scaleValue(sy, ys[i]))}`;
    })
    .join(" ");
}

// Closed region between lower and upper series (upper traced back in
// reverse), suitable for a translucent fill.
export function bandPath(xs: number[], lower: number[], upper: number[],
                         sx: Scale, sy: Scale): string {
  const down = linePath(xs, lower, sx, sy);
  const back = [...xs]
    .reverse()
    .map(
      (x, i) =>
        `L${fmt(scaleValue(sx, x))},` +
        `${fmt(scaleValue(sy, upper[upper.length - 1 - i]))}`,
    )
    .join(" ");
  return `${down} ${back} Z`;
}

export interface Marker {
  x: number;
  y: number;
  cls: string;
}

export function scatterMarkers(xs: number[], ys: number[], cls: string,
                               sx: Scale, sy: Scale): Marker[] {
  return xs.map((x, i) => ({
    x: scaleValue(sx, x),
    y: scaleValue(sy, ys[i]),
    cls,
  }));
}

export interface Bar {
  x: number;
  y: number;
  width: number;
  height: number;
  candidateIndex: number;
  highlighted: boolean;
}

export function scoreBars(
  scores: { candidateIndex: number; score: number | null }[],
  width: number,
  height: number,
  suggestedIndex: number | null,
): Bar[] {
  const usable = scores.filter((s) => s.score !== null);
  if (usable.length === 0) return [];
  const max = Math.max(...usable.map((s) => s.score as number));
  const min = Math.min(...usable.map((s) => s.score as number), 0);
  const span = max - min || 1;
  const barWidth = width / scores.length;
  return scores.map((s, i) => {
    const value = s.score ?? min;
    const h = ((value - min) / span) * height;
    return {
      x: i * barWidth,
      y: height - h,
      width: barWidth * 0.85,
      height: h,
      candidateIndex: s.candidateIndex,
      highlighted: s.candidateIndex === suggestedIndex,
    };
  });
}
