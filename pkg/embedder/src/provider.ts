import { createHash } from "node:crypto";

/**
 * Per-token final-layer states for one sequence. `residueMask[t]` is true
 * for actual residue tokens and false for special/padding tokens, which are
 * excluded from pooling.
 */
export interface TokenStates {
  states: Float32Array[];
  residueMask: boolean[];
}

export interface ModelProvider {
  readonly name: string;
  readonly hiddenSize: number;
  encode(sequence: string): Promise<TokenStates>;
  encodeBatch?(sequences: string[]): Promise<TokenStates[]>;
}

/**
 * Deterministic offline provider: each residue token's state is a hash-seeded
 * pseudo-random vector of (residue, position), bracketed by BOS/EOS special
 * tokens. Exercises the full pooling/export path without model downloads.
 */
export class HashProvider implements ModelProvider {
  readonly name: string;
  readonly hiddenSize: number;
  private readonly seed: string;

  constructor(hiddenSize = 32, seed = "hash-provider") {
    this.hiddenSize = hiddenSize;
    this.seed = seed;
    this.name = `mock:${hiddenSize}`;
  }

  private tokenState(residue: string, position: number): Float32Array {
    const out = new Float32Array(this.hiddenSize);
    let counter = 0;
    let filled = 0;
    while (filled < this.hiddenSize) {
      const digest = createHash("sha256")
        .update(`${this.seed}|${residue}|${position}|${counter++}`)
        .digest();
      for (let off = 0; off + 4 <= digest.length && filled < this.hiddenSize; off += 4) {
        // uniform in [-1, 1) from 32 hash bits
        out[filled++] = (digest.readUInt32LE(off) / 2 ** 31) - 1;
      }
    }
    return out;
  }

  async encode(sequence: string): Promise<TokenStates> {
    const states: Float32Array[] = [this.tokenState("<bos>", -1)];
    const residueMask: boolean[] = [false];
    for (let i = 0; i < sequence.length; i++) {
      states.push(this.tokenState(sequence[i], i));
      residueMask.push(true);
    }
    states.push(this.tokenState("<eos>", sequence.length));
    residueMask.push(false);
    return { states, residueMask };
  }

  async encodeBatch(sequences: string[]): Promise<TokenStates[]> {
    return Promise.all(sequences.map((s) => this.encode(s)));
  }
}

/**
 * Provider backed by a pretrained checkpoint through transformers.js.
 * Loaded lazily so offline use of the mock provider never imports it.
 */
export class TransformersProvider implements ModelProvider {
  readonly name: string;
  hiddenSize = 0;
  private pipe: any = null;

  constructor(modelName: string) {
    this.name = modelName;
  }

  private async load() {
    if (this.pipe) return;
    const { pipeline } = await import("@huggingface/transformers");
    this.pipe = await pipeline("feature-extraction", this.name);
  }

  async encode(sequence: string): Promise<TokenStates> {
    await this.load();
    // pooling "none" keeps per-token final-layer states
    const output = await this.pipe(sequence, { pooling: "none", normalize: false });
    const [tokens, hidden] = output.dims.slice(-2);
    this.hiddenSize = hidden;
    const data: Float32Array = output.data;
    const states: Float32Array[] = [];
    for (let t = 0; t < tokens; t++) {
      states.push(data.slice(t * hidden, (t + 1) * hidden));
    }
    const enc = this.pipe.tokenizer(sequence);
    const ids: bigint[] = Array.from(enc.input_ids.data);
    const special = new Set<number>(
      (this.pipe.tokenizer.all_special_ids ?? []).map((x: any) => Number(x)),
    );
    const residueMask = ids.map((id) => !special.has(Number(id)));
    return { states, residueMask };
  }
}

export function resolveProvider(modelName: string): ModelProvider {
  const mock = /^mock:(\d+)$/.exec(modelName);
  if (mock) return new HashProvider(Number(mock[1]));
  return new TransformersProvider(modelName);
}
