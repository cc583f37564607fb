// Pure chart geometry: data in, SVG path strings and bar rectangles out.
// Kept free of DOM access so the tests can exercise it directly.

export interface SeriesPoint {
  n: number;
  value: number;
}

export interface ChartBox {
  width: number;
  height: number;
  padding: number;
}

export interface Bar {
  x: number;
  y: number;
  width: number;
  height: number;
  value: number;
  label: string;
}

export function valueRange(series: SeriesPoint[][], includeZero = true): [number, number] {
  let lo = includeZero ? 0 : Infinity;
  let hi = includeZero ? 0 : -Infinity;
  for (const s of series) {
    for (const pt of s) {
      if (pt.value < lo) lo = pt.value;
      if (pt.value > hi) hi = pt.value;
    }
  }
  if (!(hi > lo)) {
    hi = lo + 1;
  }
  const pad = (hi - lo) * 0.08;
  return [lo - pad, hi + pad];
}

export function polylinePath(series: SeriesPoint[], box: ChartBox, range: [number, number], nMax: number): string {
  if (series.length === 0) return "";
  const [lo, hi] = range;
  const plotW = box.width - 2 * box.padding;
  const plotH = box.height - 2 * box.padding;
  const sx = (n: number) => box.padding + (nMax <= 1 ? 0 : ((n - 1) / (nMax - 1)) * plotW);
  const sy = (v: number) => box.padding + (1 - (v - lo) / (hi - lo)) * plotH;
  return series
    .map((pt, i) => `${i === 0 ? "M" : "L"}${sx(pt.n).toFixed(2)},${sy(pt.value).toFixed(2)}`)
    .join(" ");
}

export function horizontalLineY(value: number, box: ChartBox, range: [number, number]): number {
  const [lo, hi] = range;
  const plotH = box.height - 2 * box.padding;
  return box.padding + (1 - (value - lo) / (hi - lo)) * plotH;
}

// One bar per margin cell, grouped by covariate, signed bars sharing a
// zero baseline.
export function marginBars(margins: number[][], box: ChartBox): Bar[] {
  const cells: Array<{ value: number; label: string }> = [];
  margins.forEach((cellValues, cov) => {
    cellValues.forEach((value, level) => {
      cells.push({ value, label: `Z${cov + 1}=${level + 1}` });
    });
  });
  if (cells.length === 0) return [];
  let hi = Math.max(0, ...cells.map((c) => c.value));
  let lo = Math.min(0, ...cells.map((c) => c.value));
  if (!(hi > lo)) hi = lo + 1;
  const plotW = box.width - 2 * box.padding;
  const plotH = box.height - 2 * box.padding;
  const slot = plotW / cells.length;
  const barW = slot * 0.7;
  const sy = (v: number) => box.padding + (1 - (v - lo) / (hi - lo)) * plotH;
  const zero = sy(0);
  return cells.map((cell, i) => {
    const top = sy(Math.max(cell.value, 0));
    const bottom = sy(Math.min(cell.value, 0));
    return {
      x: box.padding + i * slot + (slot - barW) / 2,
      y: top,
      width: barW,
      height: Math.max(bottom - top, cell.value === 0 ? 0 : 1),
      value: cell.value,
      label: cell.label,
    };
  }).map((bar) => (bar.height === 0 ? { ...bar, y: zero, height: 0 } : bar));
}

// Each enrolled unit lands in exactly one cell per covariate, so the
// cell totals of every covariate sum to the same overall imbalance.
export function marginTotals(margins: number[][]): number[] {
  return margins.map((cells) => cells.reduce((acc, v) => acc + v, 0));
}
