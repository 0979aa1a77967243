#!/usr/bin/env node
/** plots <ilp-curves|forgetting|rl-steps> --in DIR --out FILE.svg
 *                                         [--domain D] [--dump FILE.json]
 *
 * Reads the summary CSVs exported by the experiment runner's `report`
 * subcommand and renders one figure: a row of per-task panels with a mean
 * line and a +-std band per series.  --dump writes the exact plotted
 * aggregates as JSON.  Missing seeds are reported on stderr.
 */

import * as fs from "fs";
import { FigureKind, dumpFigure, loadFigure } from "./aggregate";
import { SchemaError } from "./csv";
import { renderFigure } from "./svg";

const KINDS: FigureKind[] = ["ilp-curves", "forgetting", "rl-steps"];

interface Args {
  kind: FigureKind;
  inDir: string;
  outFile: string;
  domain?: string;
  dumpFile?: string;
}

function usage(): string {
  return (
    "usage: plots <ilp-curves|forgetting|rl-steps> --in DIR --out FILE.svg " +
    "[--domain D] [--dump FILE.json]"
  );
}

export function parseArgs(argv: string[]): Args {
  if (argv.length === 0 || !KINDS.includes(argv[0] as FigureKind)) {
    throw new SchemaError(usage());
  }
  const args: Partial<Args> = { kind: argv[0] as FigureKind };
  for (let i = 1; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (value === undefined) {
      throw new SchemaError(`missing value for ${flag}\n${usage()}`);
    }
    if (flag === "--in") args.inDir = value;
    else if (flag === "--out") args.outFile = value;
    else if (flag === "--domain") args.domain = value;
    else if (flag === "--dump") args.dumpFile = value;
    else throw new SchemaError(`unknown flag ${flag}\n${usage()}`);
  }
  if (!args.inDir || !args.outFile) {
    throw new SchemaError(usage());
  }
  return args as Args;
}

export function run(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    process.stderr.write(`${(err as Error).message}\n`);
    return 1;
  }
  try {
    const data = loadFigure(args.kind, args.inDir, args.domain);
    for (const warning of data.warnings) {
      process.stderr.write(`warning: ${warning}\n`);
    }
    fs.writeFileSync(args.outFile, renderFigure(data), "utf-8");
    if (args.dumpFile) {
      fs.writeFileSync(args.dumpFile, dumpFigure(data) + "\n", "utf-8");
    }
    return 0;
  } catch (err) {
    if (err instanceof SchemaError) {
      process.stderr.write(`schema error: ${err.message}\n`);
      return 1;
    }
    throw err;
  }
}

if (require.main === module) {
  process.exit(run(process.argv.slice(2)));
}
