/** Strict CSV handling for the summary files exported by `report`.
 *
 * The files are plain comma-separated UTF-8 with LF line endings and no
 * quoting; the header must match the figure schema exactly, and every cell
 * of a numeric column must parse as a finite number.
 */

export class SchemaError extends Error {}

export interface Table {
  header: string[];
  rows: string[][];
}

export function parseCsv(text: string): Table {
  const lines = text.split("\n").filter((line) => line.length > 0);
  if (lines.length === 0) {
    throw new SchemaError("empty CSV");
  }
  const header = lines[0].split(",");
  const rows = lines.slice(1).map((line, i) => {
    const cells = line.split(",");
    if (cells.length !== header.length) {
      throw new SchemaError(
        `row ${i + 2} has ${cells.length} cells, header has ${header.length}`,
      );
    }
    return cells;
  });
  return { header, rows };
}

export function requireHeader(table: Table, expected: string[], name: string): void {
  if (
    table.header.length !== expected.length ||
    table.header.some((h, i) => h !== expected[i])
  ) {
    throw new SchemaError(
      `${name}: header [${table.header.join(",")}] does not match ` +
        `[${expected.join(",")}]`,
    );
  }
}

export function numberCell(cell: string, column: string): number {
  const value = Number(cell);
  if (!Number.isFinite(value)) {
    throw new SchemaError(`column ${column}: ${JSON.stringify(cell)} is not a number`);
  }
  return value;
}
