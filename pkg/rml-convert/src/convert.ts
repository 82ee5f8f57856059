/**
 * Archive-to-AMCD conversion: fixes class indices by sorting names
 * lexicographically, emits records grouped by class then ascending SNR in
 * the archive's row order, and records the layout in a JSON manifest.
 * The numeric payload is copied bit-exactly (32-bit floats untouched).
 */

import * as fs from "fs";

import { ArchiveCell, ArchiveError, parseArchive, RmlArchive } from "./archive";
import { AmcdRecord, encodeAmcd } from "./amcd";

export interface ConvertOptions {
  /** Keep only these modulation classes (default: all present). */
  includeClasses?: string[];
  manifestPath?: string;
}

export interface ConvertResult {
  classes: string[];
  snrGrid: number[];
  sequenceLength: number;
  totalRecords: number;
}

interface ManifestCell {
  class: string;
  snr_db: number;
  count: number;
}

function selectCells(archive: RmlArchive, include?: string[]): ArchiveCell[] {
  if (include === undefined) {
    return archive.cells;
  }
  const present = new Set(archive.cells.map((c) => c.modulation));
  const unknown = include.filter((name) => !present.has(name));
  if (unknown.length > 0) {
    throw new ArchiveError(
      `unknown class names: ${unknown.join(", ")} (archive has ${[...present].sort().join(", ")})`,
    );
  }
  const wanted = new Set(include);
  return archive.cells.filter((c) => wanted.has(c.modulation));
}

function* cellRecords(cells: ArchiveCell[], labels: Map<string, number>, length: number) {
  for (const cell of cells) {
    const label = labels.get(cell.modulation) as number;
    const flat = cell.samples.floats();
    for (let row = 0; row < cell.count; row++) {
      const base = row * 2 * length;
      const rec: AmcdRecord = {
        label,
        snr: cell.snr,
        i: flat.subarray(base, base + length),
        q: flat.subarray(base + length, base + 2 * length),
      };
      yield rec;
    }
  }
}

export function convert(
  archivePath: string,
  outPath: string,
  options: ConvertOptions = {},
): ConvertResult {
  const raw = fs.readFileSync(archivePath);
  const archive = parseArchive(raw);
  const cells = selectCells(archive, options.includeClasses);
  if (cells.length === 0) {
    throw new ArchiveError("class filter removed every cell");
  }

  const classes = [...new Set(cells.map((c) => c.modulation))].sort();
  const labels = new Map(classes.map((name, idx) => [name, idx]));
  const snrGrid = [...new Set(cells.map((c) => c.snr))].sort((a, b) => a - b);

  // Deterministic record order: class-major, then ascending SNR, then the
  // archive's own row order within a cell.
  const ordered = [...cells].sort(
    (a, b) =>
      (labels.get(a.modulation) as number) - (labels.get(b.modulation) as number) ||
      a.snr - b.snr,
  );
  const totalRecords = ordered.reduce((a, c) => a + c.count, 0);

  const length = archive.sequenceLength;
  const payload = encodeAmcd(classes, length, cellRecords(ordered, labels, length), totalRecords);
  fs.writeFileSync(outPath, payload);

  if (options.manifestPath !== undefined) {
    const perCell: ManifestCell[] = ordered.map((c) => ({
      class: c.modulation,
      snr_db: c.snr,
      count: c.count,
    }));
    const manifest = {
      format: "AMCD",
      classes,
      sequence_length: length,
      snr_grid: snrGrid,
      total_records: totalRecords,
      per_cell: perCell,
    };
    fs.writeFileSync(options.manifestPath, JSON.stringify(manifest, null, 2) + "\n");
  }

  return { classes, snrGrid, sequenceLength: length, totalRecords };
}
