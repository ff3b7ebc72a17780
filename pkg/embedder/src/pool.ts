import type { TokenStates } from "./provider.js";

/** Mean of the state vectors whose mask entry is true, in float64. */
export function meanPool(tokens: TokenStates): Float64Array {
  const { states, residueMask } = tokens;
  if (states.length !== residueMask.length) {
    throw new Error("states and mask lengths differ");
  }
  const kept = residueMask.filter(Boolean).length;
  if (kept === 0) throw new Error("mask selects no tokens");
  const dim = states[0].length;
  const out = new Float64Array(dim);
  for (let t = 0; t < states.length; t++) {
    if (!residueMask[t]) continue;
    const row = states[t];
    for (let j = 0; j < dim; j++) out[j] += row[j];
  }
  for (let j = 0; j < dim; j++) out[j] /= kept;
  return out;
}

export function l2Normalize(v: Float64Array): Float64Array {
  let s = 0;
  for (let j = 0; j < v.length; j++) s += v[j] * v[j];
  const norm = Math.sqrt(s);
  if (norm === 0) throw new Error("cannot normalize a zero vector");
  const out = new Float64Array(v.length);
  for (let j = 0; j < v.length; j++) out[j] = v[j] / norm;
  return out;
}
