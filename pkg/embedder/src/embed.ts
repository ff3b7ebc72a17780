import { readFileSync, writeFileSync } from "node:fs";

import { parseFasta } from "./fasta.js";
import { meanPool, l2Normalize } from "./pool.js";
import { writePemb } from "./pemb.js";
import type { ModelProvider } from "./provider.js";

export interface EmbedJob {
  fastaPath: string;
  outPath: string;
  maxLen: number; // residues kept from the start of each sequence
  batchSize: number; // sequences per forward pass when the provider batches
  normalize: boolean;
  strict: boolean; // abort on a per-record failure instead of skipping
}

export interface EmbedReport {
  written: number;
  skipped: { id: string; reason: string }[];
  dim: number;
}

export const DEFAULT_MAX_LEN = 512;
export const DEFAULT_BATCH_SIZE = 16;

/**
 * Encode every FASTA record with the provider, mean-pool the residue-token
 * states (special tokens excluded), optionally L2-normalize, and write a
 * PEMB1 file with ids in input order. Forward passes are batched when the
 * provider supports it; writing stays single-threaded and ordered.
 */
export async function embedFasta(job: EmbedJob, provider: ModelProvider): Promise<EmbedReport> {
  const records = parseFasta(readFileSync(job.fastaPath, "utf-8"));
  const ids: string[] = [];
  const rows: Float64Array[] = [];
  const skipped: { id: string; reason: string }[] = [];
  let dim = 0;

  const batchSize = Math.max(1, job.batchSize);
  for (let start = 0; start < records.length; start += batchSize) {
    const batch = records.slice(start, start + batchSize);
    const sequences = batch.map((r) => r.sequence.slice(0, job.maxLen));
    let encoded: (Awaited<ReturnType<ModelProvider["encode"]>> | Error)[];
    if (provider.encodeBatch && sequences.every(Boolean)) {
      try {
        encoded = await provider.encodeBatch(sequences);
      } catch (e) {
        encoded = sequences.map(() => (e instanceof Error ? e : new Error(String(e))));
      }
    } else {
      encoded = [];
      for (const sequence of sequences) {
        try {
          if (!sequence) throw new Error("empty sequence");
          encoded.push(await provider.encode(sequence));
        } catch (e) {
          encoded.push(e instanceof Error ? e : new Error(String(e)));
        }
      }
    }
    for (let i = 0; i < batch.length; i++) {
      const record = batch[i];
      const result = encoded[i];
      try {
        if (result instanceof Error) throw result;
        let pooled = meanPool(result);
        if (job.normalize) pooled = l2Normalize(pooled);
        if (dim === 0) dim = pooled.length;
        if (pooled.length !== dim) {
          throw new Error(`dimension changed from ${dim} to ${pooled.length}`);
        }
        ids.push(record.id);
        rows.push(pooled);
      } catch (e) {
        if (job.strict) throw new Error(`record ${record.id}: ${String(e)}`);
        skipped.push({ id: record.id, reason: String(e) });
      }
    }
  }

  const data = new Float32Array(ids.length * dim);
  rows.forEach((row, r) => {
    for (let j = 0; j < dim; j++) data[r * dim + j] = row[j];
  });
  writeFileSync(
    job.outPath,
    writePemb({ ids, dim, normalized: job.normalize, data }),
  );
  return { written: ids.length, skipped, dim };
}
