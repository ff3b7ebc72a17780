#!/usr/bin/env node
import { readFileSync } from "node:fs";

import { DEFAULT_BATCH_SIZE, DEFAULT_MAX_LEN, embedFasta } from "./embed.js";
import { verifyPemb } from "./pemb.js";
import { resolveProvider } from "./provider.js";

function usage(): never {
  console.error(
    [
      "usage:",
      "  protembed-embed embed --model <name|mock:DIM> --fasta <in.fasta> --out <out.pemb>",
      "                        [--max-len 512] [--batch-size 16] [--no-normalize] [--strict]",
      "  protembed-embed verify <file.pemb>",
    ].join("\n"),
  );
  process.exit(2);
}

function parseArgs(argv: string[]): Map<string, string | boolean> {
  const out = new Map<string, string | boolean>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) {
      out.set("_", arg);
      continue;
    }
    const key = arg.slice(2);
    if (key === "no-normalize" || key === "strict") {
      out.set(key, true);
    } else {
      const value = argv[++i];
      if (value === undefined) usage();
      out.set(key, value);
    }
  }
  return out;
}

async function main() {
  const [command, ...rest] = process.argv.slice(2);
  if (command === "embed") {
    const args = parseArgs(rest);
    const model = args.get("model");
    const fasta = args.get("fasta");
    const out = args.get("out");
    if (typeof model !== "string" || typeof fasta !== "string" || typeof out !== "string") usage();
    const provider = resolveProvider(model);
    const report = await embedFasta(
      {
        fastaPath: fasta,
        outPath: out,
        maxLen: args.has("max-len") ? Number(args.get("max-len")) : DEFAULT_MAX_LEN,
        batchSize: args.has("batch-size") ? Number(args.get("batch-size")) : DEFAULT_BATCH_SIZE,
        normalize: !args.get("no-normalize"),
        strict: Boolean(args.get("strict")),
      },
      provider,
    );
    console.log(
      `wrote ${report.written} embeddings (dim ${report.dim}) -> ${out}` +
        (report.skipped.length ? `, skipped ${report.skipped.length}` : ""),
    );
    for (const s of report.skipped) console.error(`skipped ${s.id}: ${s.reason}`);
  } else if (command === "verify") {
    const path = rest[0];
    if (!path || path.startsWith("--")) usage();
    const report = verifyPemb(readFileSync(path));
    console.log(
      `${path}: count=${report.count} dim=${report.dim} normalized=${report.normalized}`,
    );
    if (!report.ok) {
      for (const e of report.errors) console.error(`error: ${e}`);
      process.exit(1);
    }
    console.log("ok");
  } else {
    usage();
  }
}

main().catch((e) => {
  console.error(String(e));
  process.exit(2);
});
