/** Minimal deterministic SVG rendering: one row of panels, each with axes,
 * a mean line per series, and a +-std band.  No DOM, no canvas; the output
 * is a plain string whose bytes depend only on the input data. */

import { FigureData, Panel, Series } from "./aggregate";

export const PANEL_WIDTH = 320;
export const PANEL_HEIGHT = 240;
const MARGIN = { left: 52, right: 12, top: 28, bottom: 40 };

function fmt(v: number): string {
  return Number(v.toFixed(2)).toString();
}

function tickLabel(v: number): string {
  if (v === 0) return "0";
  const magnitude = Math.abs(v);
  if (magnitude >= 1000) return v.toExponential(1);
  if (magnitude >= 1) return Number(v.toFixed(2)).toString();
  return Number(v.toPrecision(2)).toString();
}

interface Scale {
  lo: number;
  hi: number;
  toPixel(v: number): number;
}

function makeScale(lo: number, hi: number, pixelLo: number, pixelHi: number): Scale {
  if (lo === hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const span = hi - lo;
  return {
    lo,
    hi,
    toPixel: (v: number) => pixelLo + ((v - lo) / span) * (pixelHi - pixelLo),
  };
}

function ticks(lo: number, hi: number, count = 4): number[] {
  const rawStep = (hi - lo) / count;
  const power = Math.pow(10, Math.floor(Math.log10(rawStep)));
  const candidates = [1, 2, 5, 10].map((m) => m * power);
  const step = candidates.find((s) => (hi - lo) / s <= count + 1) ?? candidates[3];
  const out: number[] = [];
  for (let v = Math.ceil(lo / step) * step; v <= hi + 1e-12; v += step) {
    out.push(Number(v.toPrecision(12)));
  }
  return out;
}

function seriesExtent(series: Series[]): [number, number, number, number] {
  let xLo = Infinity, xHi = -Infinity, yLo = Infinity, yHi = -Infinity;
  for (const s of series) {
    for (let i = 0; i < s.x.length; i++) {
      xLo = Math.min(xLo, s.x[i]);
      xHi = Math.max(xHi, s.x[i]);
      yLo = Math.min(yLo, s.mean[i] - s.std[i]);
      yHi = Math.max(yHi, s.mean[i] + s.std[i]);
    }
  }
  const pad = (yHi - yLo) * 0.05 || 0.5;
  return [xLo, xHi, yLo - pad, yHi + pad];
}

function renderPanel(panel: Panel, offsetX: number): string {
  const [xLo, xHi, yLo, yHi] = seriesExtent(panel.series);
  const plotLeft = offsetX + MARGIN.left;
  const plotRight = offsetX + PANEL_WIDTH - MARGIN.right;
  const plotTop = MARGIN.top;
  const plotBottom = PANEL_HEIGHT - MARGIN.bottom;
  const xScale = makeScale(xLo, xHi, plotLeft, plotRight);
  const yScale = makeScale(yLo, yHi, plotBottom, plotTop);
  const parts: string[] = [];
  parts.push(
    `<rect class="panel" x="${fmt(plotLeft)}" y="${fmt(plotTop)}" ` +
      `width="${fmt(plotRight - plotLeft)}" height="${fmt(plotBottom - plotTop)}" ` +
      `fill="none" stroke="#cccccc"/>`,
  );
  parts.push(
    `<text class="title" x="${fmt((plotLeft + plotRight) / 2)}" y="${fmt(plotTop - 10)}" ` +
      `text-anchor="middle" font-size="13">${panel.title}</text>`,
  );
  for (const t of ticks(xScale.lo, xScale.hi)) {
    const px = xScale.toPixel(t);
    parts.push(
      `<line x1="${fmt(px)}" y1="${fmt(plotBottom)}" x2="${fmt(px)}" ` +
        `y2="${fmt(plotBottom + 4)}" stroke="#666666"/>`,
      `<text x="${fmt(px)}" y="${fmt(plotBottom + 16)}" text-anchor="middle" ` +
        `font-size="10">${tickLabel(t)}</text>`,
    );
  }
  for (const t of ticks(yScale.lo, yScale.hi)) {
    const py = yScale.toPixel(t);
    parts.push(
      `<line x1="${fmt(plotLeft - 4)}" y1="${fmt(py)}" x2="${fmt(plotLeft)}" ` +
        `y2="${fmt(py)}" stroke="#666666"/>`,
      `<text x="${fmt(plotLeft - 6)}" y="${fmt(py + 3)}" text-anchor="end" ` +
        `font-size="10">${tickLabel(t)}</text>`,
    );
  }
  parts.push(
    `<text x="${fmt((plotLeft + plotRight) / 2)}" y="${fmt(PANEL_HEIGHT - 8)}" ` +
      `text-anchor="middle" font-size="11">${panel.xLabel}</text>`,
  );
  parts.push(
    `<text x="${fmt(offsetX + 14)}" y="${fmt((plotTop + plotBottom) / 2)}" ` +
      `text-anchor="middle" font-size="11" transform="rotate(-90 ` +
      `${fmt(offsetX + 14)} ${fmt((plotTop + plotBottom) / 2)})">${panel.yLabel}</text>`,
  );
  for (const s of panel.series) {
    const upper = s.x.map(
      (x, i) => `${fmt(xScale.toPixel(x))},${fmt(yScale.toPixel(s.mean[i] + s.std[i]))}`,
    );
    const lower = s.x
      .map(
        (x, i) =>
          `${fmt(xScale.toPixel(x))},${fmt(yScale.toPixel(s.mean[i] - s.std[i]))}`,
      )
      .reverse();
    parts.push(
      `<polygon class="band" data-series="${s.label}" ` +
        `points="${upper.concat(lower).join(" ")}" fill="${s.color}" ` +
        `fill-opacity="0.15" stroke="none"/>`,
    );
    const line = s.x.map(
      (x, i) => `${fmt(xScale.toPixel(x))},${fmt(yScale.toPixel(s.mean[i]))}`,
    );
    parts.push(
      `<polyline class="mean" data-series="${s.label}" points="${line.join(" ")}" ` +
        `fill="none" stroke="${s.color}" stroke-width="1.5"/>`,
    );
  }
  return parts.join("\n");
}

function renderLegend(series: Series[], width: number): string {
  const labels = new Map<string, string>();
  for (const s of series) {
    labels.set(s.label, s.color);
  }
  const parts: string[] = [];
  let x = width / 2 - labels.size * 60;
  const y = 14;
  for (const [label, color] of labels) {
    parts.push(
      `<line x1="${fmt(x)}" y1="${fmt(y)}" x2="${fmt(x + 18)}" y2="${fmt(y)}" ` +
        `stroke="${color}" stroke-width="2"/>`,
      `<text x="${fmt(x + 24)}" y="${fmt(y + 4)}" font-size="12">${label}</text>`,
    );
    x += 120;
  }
  return parts.join("\n");
}

export function renderFigure(data: FigureData): string {
  const width = PANEL_WIDTH * data.panels.length;
  const height = PANEL_HEIGHT + 20;
  const body = data.panels
    .map((panel, i) => renderPanel(panel, i * PANEL_WIDTH))
    .join("\n");
  const legend = renderLegend(
    data.panels.flatMap((p) => p.series),
    width,
  );
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" ` +
    `height="${height}" viewBox="0 0 ${width} ${height}" ` +
    `data-kind="${data.kind}" data-panels="${data.panels.length}" ` +
    `font-family="sans-serif">\n<g transform="translate(0 20)">\n${body}\n</g>\n` +
    `${legend}\n</svg>\n`
  );
}
