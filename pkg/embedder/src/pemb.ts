/**
 * PEMB1 binary embedding format (little-endian):
 *
 *   magic "PEMB1\0" (6 bytes)
 *   u32 version = 1
 *   u32 dim
 *   u64 count
 *   u8  normalized flag
 *   u8  dtype (0 = float32)
 *   id block:   count x (u16 byte-length + UTF-8 bytes)
 *   data block: count x dim float32, row-major
 */

export const PEMB_MAGIC = Buffer.from("PEMB1\0", "latin1");
export const PEMB_VERSION = 1;

export interface EmbeddingFile {
  ids: string[];
  dim: number;
  normalized: boolean;
  /** row-major count x dim values */
  data: Float32Array;
}

export function writePemb(file: EmbeddingFile): Buffer {
  const { ids, dim, normalized, data } = file;
  if (data.length !== ids.length * dim) {
    throw new Error(`data length ${data.length} != ${ids.length} x ${dim}`);
  }
  if (new Set(ids).size !== ids.length) {
    throw new Error("duplicate ids");
  }
  const idBlocks: Buffer[] = [];
  for (const id of ids) {
    const raw = Buffer.from(id, "utf-8");
    if (raw.length > 0xffff) throw new Error(`id too long: ${id.slice(0, 32)}...`);
    const len = Buffer.alloc(2);
    len.writeUInt16LE(raw.length);
    idBlocks.push(len, raw);
  }
  const header = Buffer.alloc(24);
  PEMB_MAGIC.copy(header, 0);
  header.writeUInt32LE(PEMB_VERSION, 6);
  header.writeUInt32LE(dim, 10);
  header.writeBigUInt64LE(BigInt(ids.length), 14);
  header.writeUInt8(normalized ? 1 : 0, 22);
  header.writeUInt8(0, 23);
  const payload = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) payload.writeFloatLE(data[i], i * 4);
  return Buffer.concat([header, ...idBlocks, payload]);
}

export function readPemb(buf: Buffer): EmbeddingFile {
  if (buf.length < 24 || !buf.subarray(0, 6).equals(PEMB_MAGIC)) {
    throw new Error("bad magic: not a PEMB1 file");
  }
  const version = buf.readUInt32LE(6);
  if (version !== PEMB_VERSION) throw new Error(`unsupported version ${version}`);
  const dim = buf.readUInt32LE(10);
  const count = Number(buf.readBigUInt64LE(14));
  const normalized = buf.readUInt8(22);
  const dtype = buf.readUInt8(23);
  if (dtype !== 0) throw new Error(`unsupported dtype code ${dtype}`);
  let off = 24;
  const ids: string[] = [];
  for (let i = 0; i < count; i++) {
    if (off + 2 > buf.length) throw new Error(`truncated while reading id ${i}`);
    const len = buf.readUInt16LE(off);
    off += 2;
    if (off + len > buf.length) throw new Error(`truncated while reading id ${i}`);
    ids.push(buf.subarray(off, off + len).toString("utf-8"));
    off += len;
  }
  const need = count * dim * 4;
  if (off + need > buf.length) throw new Error("truncated data block");
  if (off + need < buf.length) throw new Error(`${buf.length - off - need} trailing bytes`);
  const data = new Float32Array(count * dim);
  for (let i = 0; i < data.length; i++) data[i] = buf.readFloatLE(off + i * 4);
  return { ids, dim, normalized: normalized === 1, data };
}

export interface VerifyReport {
  ok: boolean;
  dim: number;
  count: number;
  normalized: boolean;
  errors: string[];
}

/** Validate structure and the normalized-flag/row-norm consistency. */
export function verifyPemb(buf: Buffer, normTolerance = 1e-4): VerifyReport {
  let file: EmbeddingFile;
  try {
    file = readPemb(buf);
  } catch (e) {
    return { ok: false, dim: 0, count: 0, normalized: false, errors: [String(e)] };
  }
  const errors: string[] = [];
  if (new Set(file.ids).size !== file.ids.length) errors.push("duplicate ids");
  if (file.normalized) {
    for (let r = 0; r < file.ids.length; r++) {
      let s = 0;
      for (let j = 0; j < file.dim; j++) {
        const v = file.data[r * file.dim + j];
        s += v * v;
      }
      const norm = Math.sqrt(s);
      if (Math.abs(norm - 1) > normTolerance) {
        errors.push(`normalized flag set but row ${r} has L2 norm ${norm}`);
        break;
      }
    }
  }
  return {
    ok: errors.length === 0,
    dim: file.dim,
    count: file.ids.length,
    normalized: file.normalized,
    errors,
  };
}
