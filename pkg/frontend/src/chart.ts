// Minimal SVG chart builders: per-visit weight series with std shading and
// a daily min/avg/max band. Pure string output so tests can assert on the
// exact values rendered.

import { DailyPoint } from "./aggregate.js";
import { WeightPoint } from "./viewmodel.js";

const W = 720;
const H = 220;
const PAD = 36;

function scale(values: number[], lo: number, hi: number): (v: number) => number {
  const min = Math.min(...values);
  const max = Math.max(...values);
  const span = max - min || 1;
  return (v) => lo + ((v - min) / span) * (hi - lo);
}

function polyline(points: [number, number][], cls: string): string {
  const attr = points.map(([x, y]) => `${x.toFixed(1)},${y.toFixed(1)}`).join(" ");
  return `<polyline class="${cls}" fill="none" points="${attr}"/>`;
}

export function weightChartSvg(series: WeightPoint[]): string {
  if (series.length === 0) {
    return `<svg viewBox="0 0 ${W} ${H}"><text x="${W / 2}" y="${H / 2}" class="empty">no visits for this filter</text></svg>`;
  }
  const xs = scale(series.map((p) => p.t), PAD, W - PAD);
  const ys = scale(
    series.flatMap((p) => [p.weight - p.std, p.weight + p.std]),
    H - PAD,
    PAD,
  );
  const band = [
    ...series.map((p): [number, number] => [xs(p.t), ys(p.weight + p.std)]),
    ...[...series].reverse().map((p): [number, number] => [xs(p.t), ys(p.weight - p.std)]),
  ];
  const bandPath = band.map(([x, y]) => `${x.toFixed(1)},${y.toFixed(1)}`).join(" ");
  const dots = series
    .map(
      (p) =>
        `<circle cx="${xs(p.t).toFixed(1)}" cy="${ys(p.weight).toFixed(1)}" r="2.5" ` +
        `data-t="${p.t}" data-w="${p.weight}" data-std="${p.std}"/>`,
    )
    .join("");
  return (
    `<svg viewBox="0 0 ${W} ${H}">` +
    `<polygon class="std-band" points="${bandPath}"/>` +
    polyline(series.map((p) => [xs(p.t), ys(p.weight)]), "weight-line") +
    dots +
    `</svg>`
  );
}

export function dailyChartSvg(series: DailyPoint[]): string {
  if (series.length === 0) {
    return `<svg viewBox="0 0 ${W} ${H}"><text x="${W / 2}" y="${H / 2}" class="empty">no data</text></svg>`;
  }
  const xs = scale(series.map((p) => p.day), PAD, W - PAD);
  const ys = scale(series.flatMap((p) => [p.min, p.max]), H - PAD, PAD);
  return (
    `<svg viewBox="0 0 ${W} ${H}">` +
    polyline(series.map((p) => [xs(p.day), ys(p.min)]), "min-line") +
    polyline(series.map((p) => [xs(p.day), ys(p.avg)]), "avg-line") +
    polyline(series.map((p) => [xs(p.day), ys(p.max)]), "max-line") +
    series
      .map(
        (p) =>
          `<circle cx="${xs(p.day).toFixed(1)}" cy="${ys(p.avg).toFixed(1)}" r="2" ` +
          `data-day="${p.day}" data-avg="${p.avg}"/>`,
      )
      .join("") +
    `</svg>`
  );
}
