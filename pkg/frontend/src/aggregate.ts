/** Build the plotted series from summary CSVs.
 *
 * Every plotted point comes verbatim from a summary row (mean plus std over
 * seeds, computed upstream); this module only selects, orders, and lays out
 * those values, and the --dump output exposes exactly what is drawn.
 * Inconsistent seed counts are collected as warnings, never dropped.
 */

import * as fs from "fs";
import * as path from "path";
import { SchemaError, numberCell, parseCsv, requireHeader } from "./csv";

export type FigureKind = "ilp-curves" | "forgetting" | "rl-steps";

export interface Series {
  label: string;
  color: string;
  x: number[];
  mean: number[];
  std: number[];
  nSeeds: number[];
}

export interface Panel {
  task: number;
  title: string;
  xLabel: string;
  yLabel: string;
  series: Series[];
}

export interface FigureData {
  kind: FigureKind;
  domain?: string;
  panels: Panel[];
  warnings: string[];
}

const ILP_HEADER = [
  "epoch", "mode", "mean_loss", "std_loss", "mean_accuracy", "std_accuracy",
  "n_seeds",
];
const FORGETTING_HEADER = [
  "training_task", "epoch", "replay", "mean_loss", "std_loss", "n_seeds",
];
const RL_HEADER = [
  "grad_step", "mode", "mean_steps", "std_steps", "mean_success", "std_success",
  "n_seeds",
];

const MODE_COLORS: Record<string, string> = {
  individual: "#d62728",
  lifelong: "#1f77b4",
};
const REPLAY_COLORS: Record<string, string> = {
  off: "#ff7f0e",
  on: "#2ca02c",
};

function listPanels(dir: string, prefix: string): Array<[number, string]> {
  const out: Array<[number, string]> = [];
  for (const name of fs.readdirSync(dir).sort()) {
    const match = name.match(new RegExp(`^${prefix}task(\\d+)\\.csv$`));
    if (match) {
      out.push([Number(match[1]), path.join(dir, name)]);
    }
  }
  if (out.length === 0) {
    throw new SchemaError(`no ${prefix}task*.csv files under ${dir}`);
  }
  return out.sort((a, b) => a[0] - b[0]);
}

function checkSeedCounts(
  label: string, nSeeds: number[], warnings: string[],
): void {
  const distinct = Array.from(new Set(nSeeds));
  if (distinct.length > 1) {
    warnings.push(
      `${label}: seed counts differ across points (${distinct.join(", ")}); ` +
        "some seeds are missing from parts of the curve",
    );
  }
}

export function loadIlpCurves(dir: string, domain: string): FigureData {
  const warnings: string[] = [];
  const panels: Panel[] = [];
  for (const [task, file] of listPanels(dir, `summary_ilp_${domain}_`)) {
    const table = parseCsv(fs.readFileSync(file, "utf-8"));
    requireHeader(table, ILP_HEADER, path.basename(file));
    const series: Series[] = [];
    for (const mode of ["individual", "lifelong"]) {
      const rows = table.rows.filter((r) => r[1] === mode);
      if (rows.length === 0) continue;
      const s: Series = {
        label: mode,
        color: MODE_COLORS[mode],
        x: rows.map((r) => numberCell(r[0], "epoch")),
        mean: rows.map((r) => numberCell(r[2], "mean_loss")),
        std: rows.map((r) => numberCell(r[3], "std_loss")),
        nSeeds: rows.map((r) => numberCell(r[6], "n_seeds")),
      };
      checkSeedCounts(`${path.basename(file)} ${mode}`, s.nSeeds, warnings);
      series.push(s);
    }
    if (series.length === 0) {
      throw new SchemaError(`${file}: no rows for either mode`);
    }
    panels.push({
      task,
      title: `${domain} task ${task}`,
      xLabel: "epoch",
      yLabel: "test loss",
      series,
    });
  }
  return { kind: "ilp-curves", domain, panels, warnings };
}

export function loadForgetting(dir: string, domain: string): FigureData {
  const warnings: string[] = [];
  const panels: Panel[] = [];
  for (const [task, file] of listPanels(dir, `summary_forgetting_${domain}_`)) {
    const table = parseCsv(fs.readFileSync(file, "utf-8"));
    requireHeader(table, FORGETTING_HEADER, path.basename(file));
    // epochs restart per training phase; lay phases end to end
    const phaseLen =
      Math.max(...table.rows.map((r) => numberCell(r[1], "epoch"))) + 1;
    const series: Series[] = [];
    for (const replay of ["off", "on"]) {
      const rows = table.rows.filter((r) => r[2] === replay);
      if (rows.length === 0) continue;
      const ordered = rows
        .map((r) => ({
          x:
            numberCell(r[0], "training_task") * phaseLen +
            numberCell(r[1], "epoch"),
          mean: numberCell(r[3], "mean_loss"),
          std: numberCell(r[4], "std_loss"),
          n: numberCell(r[5], "n_seeds"),
        }))
        .sort((a, b) => a.x - b.x);
      const s: Series = {
        label: replay === "on" ? "replay" : "no replay",
        color: REPLAY_COLORS[replay],
        x: ordered.map((p) => p.x),
        mean: ordered.map((p) => p.mean),
        std: ordered.map((p) => p.std),
        nSeeds: ordered.map((p) => p.n),
      };
      checkSeedCounts(`${path.basename(file)} replay=${replay}`, s.nSeeds, warnings);
      series.push(s);
    }
    if (series.length === 0) {
      throw new SchemaError(`${file}: no replay=off/on rows`);
    }
    panels.push({
      task,
      title: `${domain} task ${task}`,
      xLabel: "epoch (phases laid end to end)",
      yLabel: "test loss",
      series,
    });
  }
  return { kind: "forgetting", domain, panels, warnings };
}

export function loadRlSteps(dir: string): FigureData {
  const warnings: string[] = [];
  const panels: Panel[] = [];
  for (const [task, file] of listPanels(dir, "summary_rl_")) {
    const table = parseCsv(fs.readFileSync(file, "utf-8"));
    requireHeader(table, RL_HEADER, path.basename(file));
    const series: Series[] = [];
    for (const mode of ["individual", "lifelong"]) {
      const rows = table.rows.filter((r) => r[1] === mode);
      if (rows.length === 0) continue;
      const s: Series = {
        label: mode,
        color: MODE_COLORS[mode],
        x: rows.map((r) => numberCell(r[0], "grad_step")),
        mean: rows.map((r) => numberCell(r[2], "mean_steps")),
        std: rows.map((r) => numberCell(r[3], "std_steps")),
        nSeeds: rows.map((r) => numberCell(r[6], "n_seeds")),
      };
      checkSeedCounts(`${path.basename(file)} ${mode}`, s.nSeeds, warnings);
      series.push(s);
    }
    if (series.length === 0) {
      throw new SchemaError(`${file}: no rows for either mode`);
    }
    panels.push({
      task,
      title: `BlocksWorld task ${task}`,
      xLabel: "gradient step",
      yLabel: "evaluation steps",
      series,
    });
  }
  return { kind: "rl-steps", panels, warnings };
}

export function loadFigure(
  kind: FigureKind, dir: string, domain?: string,
): FigureData {
  if (kind === "rl-steps") {
    return loadRlSteps(dir);
  }
  if (!domain) {
    throw new SchemaError(`${kind} needs --domain`);
  }
  return kind === "ilp-curves" ? loadIlpCurves(dir, domain) : loadForgetting(dir, domain);
}

/** The exact aggregation backing every drawn mark, for --dump. */
export function dumpFigure(data: FigureData): string {
  return JSON.stringify(
    {
      kind: data.kind,
      domain: data.domain ?? null,
      warnings: data.warnings,
      panels: data.panels.map((p) => ({
        task: p.task,
        series: p.series.map((s) => ({
          label: s.label,
          x: s.x,
          mean: s.mean,
          std: s.std,
          n_seeds: s.nSeeds,
        })),
      })),
    },
    null,
    1,
  );
}
