/**
 * Test fixture builder: serializes {(mod, snr): float32 ndarray} dicts with
 * the same opcode layout a Python-2 cPickle protocol-2 dump produces —
 * SHORT_BINSTRING keys, BININT/BININT1 SNRs, _reconstruct + BUILD arrays,
 * a memoized dtype shared across cells, and batched SETITEMS.
 */

export interface FixtureCell {
  modulation: string;
  snr: number;
  rows: number;
  length: number;
  /** Row-major (rows, 2, length) float32 payload. */
  data: Float32Array;
}

/** Small deterministic PRNG so fixtures are reproducible across runs. */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function buildCell(
  modulation: string,
  snr: number,
  rows: number,
  length: number,
  seed: number,
): FixtureCell {
  const rand = mulberry32(seed);
  const data = new Float32Array(rows * 2 * length);
  for (let k = 0; k < data.length; k++) {
    data[k] = Math.fround(rand() * 2 - 1);
  }
  return { modulation, snr, rows, length, data };
}

class Emitter {
  private chunks: Buffer[] = [];
  private memoNext = 0;

  byte(b: number): void {
    this.chunks.push(Buffer.from([b]));
  }

  raw(buf: Buffer): void {
    this.chunks.push(buf);
  }

  text(s: string): void {
    this.raw(Buffer.from(s, "latin1"));
  }

  /** BINPUT/LONG_BINPUT for a fresh memo slot; returns the slot id. */
  put(): number {
    const slot = this.memoNext++;
    if (slot < 256) {
      this.byte(0x71); // BINPUT
      this.byte(slot);
    } else {
      this.byte(0x72); // LONG_BINPUT
      const b = Buffer.allocUnsafe(4);
      b.writeUInt32LE(slot, 0);
      this.raw(b);
    }
    return slot;
  }

  get(slot: number): void {
    if (slot < 256) {
      this.byte(0x68); // BINGET
      this.byte(slot);
    } else {
      this.byte(0x6a); // LONG_BINGET
      const b = Buffer.allocUnsafe(4);
      b.writeUInt32LE(slot, 0);
      this.raw(b);
    }
  }

  int(v: number): void {
    if (v >= 0 && v < 256) {
      this.byte(0x4b); // BININT1
      this.byte(v);
    } else if (v >= 0 && v < 65536) {
      this.byte(0x4d); // BININT2
      const b = Buffer.allocUnsafe(2);
      b.writeUInt16LE(v, 0);
      this.raw(b);
    } else {
      this.byte(0x4a); // BININT
      const b = Buffer.allocUnsafe(4);
      b.writeInt32LE(v, 0);
      this.raw(b);
    }
  }

  shortString(s: string): void {
    const bytes = Buffer.from(s, "latin1");
    if (bytes.length > 255) throw new Error("short string too long");
    this.byte(0x55); // SHORT_BINSTRING
    this.byte(bytes.length);
    this.raw(bytes);
  }

  binString(payload: Buffer): void {
    this.byte(0x54); // BINSTRING
    const b = Buffer.allocUnsafe(4);
    b.writeUInt32LE(payload.length, 0);
    this.raw(b);
    this.raw(payload);
  }

  global(module: string, name: string): void {
    this.byte(0x63); // GLOBAL
    this.text(`${module}\n${name}\n`);
  }

  finish(): Buffer {
    return Buffer.concat(this.chunks);
  }
}

export function pickleArchive(cells: FixtureCell[]): Buffer {
  const e = new Emitter();
  e.raw(Buffer.from([0x80, 2])); // PROTO 2
  e.byte(0x7d); // EMPTY_DICT
  e.put();

  let reconstructSlot: number | null = null;
  let ndarraySlot: number | null = null;
  let dtypeSlot: number | null = null;

  const emitArray = (cell: FixtureCell) => {
    if (reconstructSlot === null) {
      e.global("numpy.core.multiarray", "_reconstruct");
      reconstructSlot = e.put();
    } else {
      e.get(reconstructSlot);
    }
    // args: (ndarray, (0,), 'b')
    if (ndarraySlot === null) {
      e.global("numpy", "ndarray");
      ndarraySlot = e.put();
    } else {
      e.get(ndarraySlot);
    }
    e.int(0);
    e.byte(0x85); // TUPLE1
    e.put();
    e.shortString("b");
    e.put();
    e.byte(0x87); // TUPLE3
    e.put();
    e.byte(0x52); // REDUCE
    e.put();

    // state: (1, shape, dtype, False, data)
    e.byte(0x28); // MARK
    e.int(1);
    e.int(cell.rows);
    e.int(2);
    e.int(cell.length);
    e.byte(0x87); // TUPLE3 (shape)
    e.put();
    if (dtypeSlot === null) {
      e.global("numpy", "dtype");
      e.shortString("f4");
      e.int(0);
      e.int(1);
      e.byte(0x87); // TUPLE3
      e.byte(0x52); // REDUCE
      dtypeSlot = e.put();
      // dtype state: (3, '<', None, None, None, -1, -1, 0)
      e.byte(0x28); // MARK
      e.int(3);
      e.shortString("<");
      e.byte(0x4e); // NONE
      e.byte(0x4e);
      e.byte(0x4e);
      e.int(-1);
      e.int(-1);
      e.int(0);
      e.byte(0x74); // TUPLE
      e.byte(0x62); // BUILD
    } else {
      e.get(dtypeSlot);
    }
    e.byte(0x89); // NEWFALSE
    e.binString(Buffer.from(cell.data.buffer, cell.data.byteOffset, cell.data.byteLength));
    e.byte(0x74); // TUPLE (5-item state)
    e.put();
    e.byte(0x62); // BUILD
  };

  const emitPair = (cell: FixtureCell) => {
    e.shortString(cell.modulation);
    e.put();
    e.int(cell.snr);
    e.byte(0x86); // TUPLE2 key
    e.put();
    emitArray(cell);
  };

  if (cells.length === 1) {
    emitPair(cells[0]);
    e.byte(0x73); // SETITEM
  } else {
    // cPickle batches dict items 1000 at a time.
    for (let start = 0; start < cells.length; start += 1000) {
      e.byte(0x28); // MARK
      for (const cell of cells.slice(start, start + 1000)) {
        emitPair(cell);
      }
      e.byte(0x75); // SETITEMS
    }
  }
  e.byte(0x2e); // STOP
  return e.finish();
}
