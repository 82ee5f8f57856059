/**
 * Minimal reader for Python pickle streams, protocol <= 2, covering exactly
 * the value shapes found in the RML2016 radio archives: a dict mapping
 * (str, int) tuples to numpy float32 arrays.
 *
 * This is deliberately not a general unpickler. Any opcode or GLOBAL outside
 * the supported set raises PickleError, so a hostile or unexpected stream
 * fails fast instead of being half-interpreted.
 */

export class PickleError extends Error {}

/** Reference to a module-level Python name (the GLOBAL opcode). */
export class Global {
  constructor(public readonly module: string, public readonly name: string) {}

  get qualified(): string {
    return `${this.module}.${this.name}`;
  }
}

/** numpy dtype stub: only scalar codes like "f4" (little-endian) appear. */
export class DType {
  public byteOrder = "=";

  constructor(public readonly code: string) {
    if (!/^[a-z][0-9]+$/.test(code)) {
      throw new PickleError(`unsupported dtype code ${JSON.stringify(code)}`);
    }
  }

  get itemSize(): number {
    return Number(this.code.slice(1));
  }
}

/** numpy ndarray rebuilt from _reconstruct + BUILD state. */
export class NdArray {
  public shape: number[] = [];
  public dtype: DType | null = null;
  public data: Buffer = Buffer.alloc(0);
  private built = false;

  /** Apply the BUILD state tuple (version, shape, dtype, fortran, data). */
  setState(state: PValue): void {
    if (!Array.isArray(state) || state.length < 5) {
      throw new PickleError("ndarray BUILD state is not a 5-tuple");
    }
    const [, shape, dtype, fortran, data] = state;
    if (!Array.isArray(shape) || !shape.every((d) => typeof d === "number")) {
      throw new PickleError("ndarray shape is not a tuple of ints");
    }
    if (!(dtype instanceof DType)) {
      throw new PickleError("ndarray state carries no dtype");
    }
    if (fortran !== false) {
      throw new PickleError("fortran-order arrays are not supported");
    }
    const raw = typeof data === "string" ? Buffer.from(data, "latin1") : data;
    if (!Buffer.isBuffer(raw)) {
      throw new PickleError("ndarray data payload is not a byte string");
    }
    const count = (shape as number[]).reduce((a, b) => a * b, 1);
    if (raw.length !== count * dtype.itemSize) {
      throw new PickleError(
        `ndarray payload is ${raw.length} bytes, expected ${count * dtype.itemSize}`,
      );
    }
    this.shape = shape as number[];
    this.dtype = dtype;
    this.data = raw;
    this.built = true;
  }

  /** Copy out the payload as an aligned Float32Array (dtype must be <f4). */
  floats(): Float32Array {
    if (!this.built || this.dtype === null) {
      throw new PickleError("ndarray was never BUILt");
    }
    if (this.dtype.code !== "f4" || (this.dtype.byteOrder !== "<" && this.dtype.byteOrder !== "=")) {
      throw new PickleError(`expected little-endian float32 data, got ${this.dtype.byteOrder}${this.dtype.code}`);
    }
    const out = new ArrayBuffer(this.data.length);
    this.data.copy(Buffer.from(out));
    return new Float32Array(out);
  }
}

export class PyDict {
  readonly entries: { key: PValue; value: PValue }[] = [];
  private index = new Map<string, number>();

  set(key: PValue, value: PValue): void {
    const canon = keyString(key);
    const at = this.index.get(canon);
    if (at === undefined) {
      this.index.set(canon, this.entries.length);
      this.entries.push({ key, value });
    } else {
      this.entries[at] = { key, value };
    }
  }

  get size(): number {
    return this.entries.length;
  }
}

export type PValue =
  | number
  | boolean
  | null
  | string
  | Buffer
  | PValue[]
  | PyDict
  | Global
  | DType
  | NdArray;

/** Canonical string for hashable keys (strings, ints, tuples thereof). */
function keyString(key: PValue): string {
  if (typeof key === "string") return `s:${key}`;
  if (typeof key === "number") return `n:${key}`;
  if (Buffer.isBuffer(key)) return `s:${key.toString("latin1")}`;
  if (Array.isArray(key)) return `t:[${key.map(keyString).join(",")}]`;
  throw new PickleError("unhashable pickle dict key");
}

// Opcode bytes (names follow pickletools).
const OP = {
  PROTO: 0x80,
  STOP: 0x2e,
  MARK: 0x28,
  NONE: 0x4e,
  NEWTRUE: 0x88,
  NEWFALSE: 0x89,
  BININT: 0x4a,
  BININT1: 0x4b,
  BININT2: 0x4d,
  LONG1: 0x8a,
  BINFLOAT: 0x47,
  SHORT_BINSTRING: 0x55,
  BINSTRING: 0x54,
  BINUNICODE: 0x58,
  EMPTY_TUPLE: 0x29,
  TUPLE1: 0x85,
  TUPLE2: 0x86,
  TUPLE3: 0x87,
  TUPLE: 0x74,
  EMPTY_DICT: 0x7d,
  SETITEM: 0x73,
  SETITEMS: 0x75,
  BINPUT: 0x71,
  LONG_BINPUT: 0x72,
  BINGET: 0x68,
  LONG_BINGET: 0x6a,
  GLOBAL: 0x63,
  REDUCE: 0x52,
  BUILD: 0x62,
} as const;

const SUPPORTED_GLOBALS = new Set([
  "numpy.core.multiarray._reconstruct",
  "numpy.ndarray",
  "numpy.dtype",
]);

/** Stack sentinel for MARK. */
const MARK = Symbol("mark");

export function unpickle(buf: Buffer): PValue {
  const stack: (PValue | typeof MARK)[] = [];
  const memo = new Map<number, PValue>();
  let pos = 0;

  const need = (n: number) => {
    if (pos + n > buf.length) {
      throw new PickleError(`truncated pickle stream at byte ${pos}`);
    }
  };
  const u8 = () => {
    need(1);
    return buf[pos++];
  };
  const u16 = () => {
    need(2);
    const v = buf.readUInt16LE(pos);
    pos += 2;
    return v;
  };
  const u32 = () => {
    need(4);
    const v = buf.readUInt32LE(pos);
    pos += 4;
    return v;
  };
  const i32 = () => {
    need(4);
    const v = buf.readInt32LE(pos);
    pos += 4;
    return v;
  };
  const line = (): string => {
    const nl = buf.indexOf(0x0a, pos);
    if (nl < 0) throw new PickleError("unterminated text line in pickle stream");
    const s = buf.toString("latin1", pos, nl);
    pos = nl + 1;
    return s;
  };
  const pop = (): PValue => {
    const v = stack.pop();
    if (v === undefined || v === MARK) {
      throw new PickleError("pickle stack underflow");
    }
    return v;
  };
  const popToMark = (): PValue[] => {
    const items: PValue[] = [];
    for (;;) {
      const v = stack.pop();
      if (v === undefined) throw new PickleError("MARK not found on stack");
      if (v === MARK) break;
      items.push(v);
    }
    return items.reverse();
  };
  const put = (key: number) => {
    const top = stack[stack.length - 1];
    if (top === undefined || top === MARK) {
      throw new PickleError("memo PUT with empty stack");
    }
    memo.set(key, top);
  };
  const get = (key: number) => {
    const v = memo.get(key);
    if (v === undefined) throw new PickleError(`memo GET of unset slot ${key}`);
    stack.push(v);
  };

  for (;;) {
    const opAt = pos;
    const op = u8();
    switch (op) {
      case OP.PROTO: {
        const proto = u8();
        if (proto > 2) {
          throw new PickleError(`pickle protocol ${proto} not supported (max 2)`);
        }
        break;
      }
      case OP.STOP: {
        const result = pop();
        if (stack.length !== 0) {
          throw new PickleError("pickle stack not empty at STOP");
        }
        return result;
      }
      case OP.MARK:
        stack.push(MARK);
        break;
      case OP.NONE:
        stack.push(null);
        break;
      case OP.NEWTRUE:
        stack.push(true);
        break;
      case OP.NEWFALSE:
        stack.push(false);
        break;
      case OP.BININT:
        stack.push(i32());
        break;
      case OP.BININT1:
        stack.push(u8());
        break;
      case OP.BININT2:
        stack.push(u16());
        break;
      case OP.LONG1: {
        const n = u8();
        need(n);
        let v = 0n;
        for (let i = n - 1; i >= 0; i--) v = (v << 8n) | BigInt(buf[pos + i]);
        if (n > 0 && buf[pos + n - 1] & 0x80) v -= 1n << BigInt(8 * n);
        pos += n;
        if (v > BigInt(Number.MAX_SAFE_INTEGER) || v < BigInt(Number.MIN_SAFE_INTEGER)) {
          throw new PickleError("integer too large");
        }
        stack.push(Number(v));
        break;
      }
      case OP.BINFLOAT: {
        need(8);
        const v = buf.readDoubleBE(pos);
        pos += 8;
        stack.push(v);
        break;
      }
      case OP.SHORT_BINSTRING: {
        const n = u8();
        need(n);
        const s = buf.toString("latin1", pos, pos + n);
        pos += n;
        stack.push(s);
        break;
      }
      case OP.BINSTRING: {
        const n = i32();
        if (n < 0) throw new PickleError("negative BINSTRING length");
        need(n);
        // Long byte strings (numpy payloads) stay as raw bytes.
        stack.push(buf.subarray(pos, pos + n));
        pos += n;
        break;
      }
      case OP.BINUNICODE: {
        const n = u32();
        need(n);
        const s = buf.toString("utf8", pos, pos + n);
        pos += n;
        stack.push(s);
        break;
      }
      case OP.EMPTY_TUPLE:
        stack.push([]);
        break;
      case OP.TUPLE1:
        stack.push([pop()]);
        break;
      case OP.TUPLE2: {
        const b = pop();
        const a = pop();
        stack.push([a, b]);
        break;
      }
      case OP.TUPLE3: {
        const c = pop();
        const b = pop();
        const a = pop();
        stack.push([a, b, c]);
        break;
      }
      case OP.TUPLE:
        stack.push(popToMark());
        break;
      case OP.EMPTY_DICT:
        stack.push(new PyDict());
        break;
      case OP.SETITEM: {
        const value = pop();
        const key = pop();
        const target = stack[stack.length - 1];
        if (!(target instanceof PyDict)) {
          throw new PickleError("SETITEM on a non-dict");
        }
        target.set(key, value);
        break;
      }
      case OP.SETITEMS: {
        const items = popToMark();
        if (items.length % 2 !== 0) {
          throw new PickleError("odd number of SETITEMS entries");
        }
        const target = stack[stack.length - 1];
        if (!(target instanceof PyDict)) {
          throw new PickleError("SETITEMS on a non-dict");
        }
        for (let i = 0; i < items.length; i += 2) {
          target.set(items[i], items[i + 1]);
        }
        break;
      }
      case OP.BINPUT:
        put(u8());
        break;
      case OP.LONG_BINPUT:
        put(u32());
        break;
      case OP.BINGET:
        get(u8());
        break;
      case OP.LONG_BINGET:
        get(u32());
        break;
      case OP.GLOBAL: {
        const g = new Global(line(), line());
        if (!SUPPORTED_GLOBALS.has(g.qualified)) {
          throw new PickleError(`unsupported GLOBAL ${g.qualified}`);
        }
        stack.push(g);
        break;
      }
      case OP.REDUCE: {
        const args = pop();
        const func = pop();
        if (!(func instanceof Global) || !Array.isArray(args)) {
          throw new PickleError("REDUCE without a callable global");
        }
        stack.push(reduce(func, args));
        break;
      }
      case OP.BUILD: {
        const state = pop();
        const target = stack[stack.length - 1];
        if (target instanceof NdArray) {
          target.setState(state);
        } else if (target instanceof DType) {
          applyDtypeState(target, state);
        } else {
          throw new PickleError("BUILD on an unsupported object");
        }
        break;
      }
      default:
        throw new PickleError(
          `unsupported pickle opcode 0x${op.toString(16).padStart(2, "0")} at byte ${opAt}`,
        );
    }
  }
}

function reduce(func: Global, args: PValue[]): PValue {
  switch (func.qualified) {
    case "numpy.core.multiarray._reconstruct": {
      const cls = args[0];
      if (!(cls instanceof Global) || cls.qualified !== "numpy.ndarray") {
        throw new PickleError("_reconstruct of a non-ndarray class");
      }
      return new NdArray();
    }
    case "numpy.dtype": {
      const code = args[0];
      if (typeof code !== "string") {
        throw new PickleError("numpy.dtype called without a string code");
      }
      return new DType(code);
    }
    default:
      throw new PickleError(`REDUCE of unsupported global ${func.qualified}`);
  }
}

function applyDtypeState(dtype: DType, state: PValue): void {
  // State tuple (3, byteorder, subdescr, names, fields, elsize, alignment, flags);
  // only the byte order matters for plain scalar dtypes.
  if (!Array.isArray(state) || state.length < 2 || typeof state[1] !== "string") {
    throw new PickleError("malformed dtype BUILD state");
  }
  const order = state[1];
  if (order !== "<" && order !== "|" && order !== "=") {
    throw new PickleError(`unsupported dtype byte order ${JSON.stringify(order)}`);
  }
  dtype.byteOrder = order === "|" ? "=" : order;
}
