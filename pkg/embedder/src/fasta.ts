export interface FastaRecord {
  id: string;
  sequence: string;
  description?: string;
}

/**
 * Parse FASTA text: first header token is the id, the rest the description;
 * sequences are uppercased and a single terminal '*' stop is stripped.
 */
export function parseFasta(text: string): FastaRecord[] {
  const records: FastaRecord[] = [];
  const seen = new Set<string>();
  let current: { id: string; description?: string; chunks: string[] } | null = null;

  const flush = (line: number) => {
    if (!current) return;
    let seq = current.chunks.join("").toUpperCase();
    if (seq.endsWith("*")) seq = seq.slice(0, -1);
    if (!seq) throw new Error(`line ${line}: record ${current.id} has an empty sequence`);
    records.push({ id: current.id, sequence: seq, description: current.description });
    current = null;
  };

  const lines = text.split(/\r?\n/);
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    if (line.startsWith(">")) {
      flush(i + 1);
      const body = line.slice(1).trim();
      const sp = body.search(/\s/);
      const id = sp === -1 ? body : body.slice(0, sp);
      if (!id) throw new Error(`line ${i + 1}: empty header`);
      if (seen.has(id)) throw new Error(`line ${i + 1}: duplicate id ${id}`);
      seen.add(id);
      current = {
        id,
        description: sp === -1 ? undefined : body.slice(sp + 1).trim(),
        chunks: [],
      };
    } else {
      if (!current) throw new Error(`line ${i + 1}: sequence data before any header`);
      current.chunks.push(line);
    }
  }
  flush(lines.length + 1);
  return records;
}
