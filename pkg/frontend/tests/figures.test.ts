import { describe, expect, it } from "vitest";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { loadFigure } from "../src/aggregate";
import { PANEL_WIDTH, renderFigure } from "../src/svg";
import { run } from "../src/cli";

function tmpDir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "plots-"));
}

function writeIlpSummaries(dir: string, tasks: number, seeds: number, std = 0.1) {
  for (let task = 0; task < tasks; task++) {
    const lines = [
      "epoch,mode,mean_loss,std_loss,mean_accuracy,std_accuracy,n_seeds",
    ];
    for (const mode of ["individual", "lifelong"]) {
      for (let epoch = 0; epoch < 4; epoch++) {
        const loss = 1 - 0.2 * epoch + (mode === "lifelong" ? -0.05 : 0);
        lines.push(`${epoch},${mode},${loss},${std},0.8,0.05,${seeds}`);
      }
    }
    fs.writeFileSync(
      path.join(dir, `summary_ilp_graph_task${task}.csv`),
      lines.join("\n") + "\n",
    );
  }
}

describe("renderFigure", () => {
  it("lays out four panels per domain with two curves each", () => {
    const dir = tmpDir();
    writeIlpSummaries(dir, 4, 4);
    const svg = renderFigure(loadFigure("ilp-curves", dir, "graph"));
    expect(svg).toContain('data-panels="4"');
    expect(svg.match(/<polyline class="mean"/g)!.length).toBe(8);
    expect(svg.match(/<polygon class="band"/g)!.length).toBe(8);
    expect(svg).toContain(`width="${4 * PANEL_WIDTH}"`);
    expect(svg.match(/<rect class="panel"/g)!.length).toBe(4);
  });

  it("collapses the band onto the line when std is zero", () => {
    const dir = tmpDir();
    writeIlpSummaries(dir, 1, 1, 0);
    const svg = renderFigure(loadFigure("ilp-curves", dir, "graph"));
    const band = svg.match(/<polygon class="band"[^>]*points="([^"]+)"/)![1];
    const line = svg.match(/<polyline class="mean"[^>]*points="([^"]+)"/)![1];
    const bandPoints = band.split(" ");
    const linePoints = line.split(" ");
    // upper edge equals the mean line, lower edge is its reverse
    expect(bandPoints.slice(0, linePoints.length)).toEqual(linePoints);
    expect(bandPoints.slice(linePoints.length)).toEqual(
      [...linePoints].reverse(),
    );
  });

  it("is deterministic", () => {
    const dir = tmpDir();
    writeIlpSummaries(dir, 2, 3);
    const data1 = renderFigure(loadFigure("ilp-curves", dir, "graph"));
    const data2 = renderFigure(loadFigure("ilp-curves", dir, "graph"));
    expect(data1).toBe(data2);
  });
});

describe("cli", () => {
  it("renders, dumps, and fails cleanly on bad inputs", () => {
    const dir = tmpDir();
    writeIlpSummaries(dir, 4, 2);
    const out = path.join(dir, "fig.svg");
    const dump = path.join(dir, "fig.json");
    const code = run([
      "ilp-curves", "--in", dir, "--out", out, "--domain", "graph",
      "--dump", dump,
    ]);
    expect(code).toBe(0);
    expect(fs.readFileSync(out, "utf-8")).toContain("<svg");
    const parsed = JSON.parse(fs.readFileSync(dump, "utf-8"));
    expect(parsed.kind).toBe("ilp-curves");
    expect(parsed.panels.length).toBe(4);
    expect(run(["nope", "--in", dir, "--out", out])).toBe(1);
    expect(run(["ilp-curves", "--in", tmpDir(), "--out", out, "--domain", "graph"]))
      .toBe(1);
    expect(run(["ilp-curves", "--in", dir])).toBe(1);
  });
});
