/**
 * RML2016-style archive model: the unpickled payload is a dict keyed by
 * (modulation-name, snr_db) holding float32 arrays of shape (n, 2, L) —
 * n samples, I and Q planes, L complex samples each.
 */

import { NdArray, PyDict, PValue, unpickle } from "./pickle";

export class ArchiveError extends Error {}

export interface ArchiveCell {
  modulation: string;
  snr: number;
  /** Sample count in this cell (first axis of the source array). */
  count: number;
  samples: NdArray;
}

export interface RmlArchive {
  cells: ArchiveCell[];
  /** Complex samples per row, common to every cell. */
  sequenceLength: number;
}

function describeKey(key: PValue): string {
  if (Array.isArray(key)) {
    return `(${key.map(describeKey).join(", ")})`;
  }
  if (Buffer.isBuffer(key)) return JSON.stringify(key.toString("latin1"));
  return JSON.stringify(key);
}

export function parseArchive(raw: Buffer): RmlArchive {
  const root = unpickle(raw);
  if (!(root instanceof PyDict)) {
    throw new ArchiveError("archive root is not a dict");
  }
  if (root.size === 0) {
    throw new ArchiveError("archive contains no cells");
  }

  const cells: ArchiveCell[] = [];
  let length: number | null = null;
  for (const { key, value } of root.entries) {
    if (!Array.isArray(key) || key.length !== 2) {
      throw new ArchiveError(`archive key ${describeKey(key)} is not a (modulation, snr) pair`);
    }
    const [modRaw, snr] = key;
    const modulation = Buffer.isBuffer(modRaw) ? modRaw.toString("latin1") : modRaw;
    if (typeof modulation !== "string" || modulation.length === 0) {
      throw new ArchiveError(`modulation name in key ${describeKey(key)} is not a string`);
    }
    if (typeof snr !== "number" || !Number.isInteger(snr)) {
      throw new ArchiveError(`SNR in key ${describeKey(key)} is not an integer`);
    }
    if (!(value instanceof NdArray)) {
      throw new ArchiveError(`cell ${describeKey(key)} does not hold an array`);
    }
    if (value.shape.length !== 3 || value.shape[1] !== 2) {
      throw new ArchiveError(
        `cell ${describeKey(key)} has shape (${value.shape.join(", ")}), expected (n, 2, L)`,
      );
    }
    const cellLength = value.shape[2];
    if (length === null) {
      length = cellLength;
    } else if (cellLength !== length) {
      throw new ArchiveError(
        `cell ${describeKey(key)} has length ${cellLength}, other cells have ${length}`,
      );
    }
    cells.push({ modulation, snr, count: value.shape[0], samples: value });
  }

  return { cells, sequenceLength: length as number };
}
