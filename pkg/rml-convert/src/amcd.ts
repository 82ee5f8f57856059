/**
 * AMCD binary dataset container (little-endian):
 *
 *   magic "AMCD" | u32 version=1 | u32 class count
 *   per class: u16 name length | UTF-8 name bytes
 *   u32 record count | u32 sequence length L
 *   per record: u16 label | f32 snr_db | L×f32 I plane | L×f32 Q plane
 *
 * This mirrors the container the training pipeline reads; the layout is the
 * interface contract between the two tools.
 */

export class AmcdError extends Error {}

export const AMCD_MAGIC = "AMCD";
export const AMCD_VERSION = 1;

export interface AmcdRecord {
  label: number;
  snr: number;
  i: Float32Array;
  q: Float32Array;
}

export interface AmcdFile {
  classes: string[];
  sequenceLength: number;
  records: AmcdRecord[];
}

export function encodeAmcd(
  classes: string[],
  sequenceLength: number,
  records: Iterable<AmcdRecord>,
  recordCount: number,
): Buffer {
  if (classes.length === 0) {
    throw new AmcdError("class table must not be empty");
  }
  const nameBytes = classes.map((c) => Buffer.from(c, "utf8"));
  for (const [idx, name] of nameBytes.entries()) {
    if (name.length === 0 || name.length > 0xffff) {
      throw new AmcdError(`class name ${idx} has invalid byte length ${name.length}`);
    }
  }
  const headerSize =
    4 + 4 + 4 + nameBytes.reduce((a, b) => a + 2 + b.length, 0) + 4 + 4;
  const recordSize = 2 + 4 + 8 * sequenceLength;
  const out = Buffer.allocUnsafe(headerSize + recordCount * recordSize);

  let pos = 0;
  pos += out.write(AMCD_MAGIC, pos, "latin1");
  pos = out.writeUInt32LE(AMCD_VERSION, pos);
  pos = out.writeUInt32LE(classes.length, pos);
  for (const name of nameBytes) {
    pos = out.writeUInt16LE(name.length, pos);
    pos += name.copy(out, pos);
  }
  pos = out.writeUInt32LE(recordCount, pos);
  pos = out.writeUInt32LE(sequenceLength, pos);

  let written = 0;
  for (const rec of records) {
    if (written === recordCount) break;
    if (rec.label < 0 || rec.label >= classes.length) {
      throw new AmcdError(`record label ${rec.label} outside class table`);
    }
    if (rec.i.length !== sequenceLength || rec.q.length !== sequenceLength) {
      throw new AmcdError(
        `record planes have length ${rec.i.length}/${rec.q.length}, expected ${sequenceLength}`,
      );
    }
    pos = out.writeUInt16LE(rec.label, pos);
    pos = out.writeFloatLE(Math.fround(rec.snr), pos);
    // Planes are little-endian float32 on both sides; copy the raw bytes.
    for (const plane of [rec.i, rec.q]) {
      const bytes = Buffer.from(plane.buffer, plane.byteOffset, 4 * plane.length);
      pos += bytes.copy(out, pos);
    }
    written++;
  }
  if (written !== recordCount) {
    throw new AmcdError(`expected ${recordCount} records, producer yielded ${written}`);
  }
  return out;
}

/** Parse an AMCD buffer back into records (used by tests and spot checks). */
export function decodeAmcd(buf: Buffer): AmcdFile {
  let pos = 0;
  const need = (n: number, what: string) => {
    if (pos + n > buf.length) {
      throw new AmcdError(`truncated AMCD file while reading ${what}`);
    }
  };

  need(4, "magic");
  const magic = buf.toString("latin1", 0, 4);
  pos = 4;
  if (magic !== AMCD_MAGIC) {
    throw new AmcdError(`bad magic ${JSON.stringify(magic)}`);
  }
  need(4, "version");
  const version = buf.readUInt32LE(pos);
  pos += 4;
  if (version !== AMCD_VERSION) {
    throw new AmcdError(`unsupported AMCD version ${version}`);
  }
  need(4, "class count");
  const nClasses = buf.readUInt32LE(pos);
  pos += 4;
  const classes: string[] = [];
  for (let c = 0; c < nClasses; c++) {
    need(2, "class name length");
    const n = buf.readUInt16LE(pos);
    pos += 2;
    need(n, "class name");
    classes.push(buf.toString("utf8", pos, pos + n));
    pos += n;
  }
  need(8, "record header");
  const nRecords = buf.readUInt32LE(pos);
  const sequenceLength = buf.readUInt32LE(pos + 4);
  pos += 8;

  const recordSize = 2 + 4 + 8 * sequenceLength;
  if (buf.length - pos !== nRecords * recordSize) {
    throw new AmcdError(
      `payload is ${buf.length - pos} bytes, expected ${nRecords * recordSize}`,
    );
  }
  const records: AmcdRecord[] = [];
  for (let r = 0; r < nRecords; r++) {
    const label = buf.readUInt16LE(pos);
    const snr = buf.readFloatLE(pos + 2);
    if (label >= nClasses) {
      throw new AmcdError(`record ${r} label ${label} outside class table`);
    }
    const planes = new ArrayBuffer(8 * sequenceLength);
    buf.copy(Buffer.from(planes), 0, pos + 6, pos + 6 + 8 * sequenceLength);
    const both = new Float32Array(planes);
    records.push({
      label,
      snr,
      i: both.subarray(0, sequenceLength),
      q: both.subarray(sequenceLength),
    });
    pos += recordSize;
  }
  return { classes, sequenceLength, records };
}
