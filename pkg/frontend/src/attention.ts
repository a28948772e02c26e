/**
 * Explicit attention recomputation from captured Q/K/V.
 *
 * Fused attention kernels never materialize the token-to-token probability
 * matrix, so extraction recomputes softmax(Q K^T / sqrt(d_head)) from raw
 * captures, head by head, and averages the heads. Softmax rows and the
 * head average are accumulated in float64 before the final float32 cast,
 * which keeps row sums well inside the downstream 1e-3 tolerance.
 */

/** Per-head token tensor, row-major [head][token][dim]. */
export interface HeadTensor {
  heads: number;
  tokens: number;
  dim: number;
  data: Float32Array;
}

export function headTensor(heads: number, tokens: number, dim: number): HeadTensor {
  return { heads, tokens, dim, data: new Float32Array(heads * tokens * dim) };
}

function checkCompatible(q: HeadTensor, k: HeadTensor): void {
  if (q.heads !== k.heads) throw new Error(`head count mismatch: ${q.heads} vs ${k.heads}`);
  if (q.dim !== k.dim) throw new Error(`head dim mismatch: ${q.dim} vs ${k.dim}`);
}

/**
 * Head-averaged attention probabilities softmax(q k^T / sqrt(d)), shape
 * [q.tokens x k.tokens] row-major.
 */
export function headAveragedAttention(q: HeadTensor, k: HeadTensor): Float32Array {
  checkCompatible(q, k);
  const n = q.tokens;
  const m = k.tokens;
  const out = new Float32Array(n * m);
  const rowAcc = new Float64Array(m);
  const logits = new Float64Array(m);
  const scale = 1.0 / Math.sqrt(q.dim);
  for (let i = 0; i < n; i++) {
    rowAcc.fill(0);
    for (let h = 0; h < q.heads; h++) {
      softmaxRow(q, k, h, i, scale, logits);
      for (let j = 0; j < m; j++) rowAcc[j] += logits[j];
    }
    const inv = 1.0 / q.heads;
    for (let j = 0; j < m; j++) out[i * m + j] = rowAcc[j] * inv;
  }
  return out;
}

/**
 * One pass producing both head-averaged attention and head-averaged
 * attention outputs (per-head A V, then averaged), for the image pass.
 */
export function attentionAndOutput(
  q: HeadTensor,
  k: HeadTensor,
  v: HeadTensor,
): { attention: Float32Array; output: Float32Array } {
  checkCompatible(q, k);
  if (v.tokens !== k.tokens) throw new Error('V token count must match K');
  const n = q.tokens;
  const m = k.tokens;
  const d = v.dim;
  const attention = new Float32Array(n * m);
  const output = new Float32Array(n * d);
  const rowAcc = new Float64Array(m);
  const outAcc = new Float64Array(d);
  const probs = new Float64Array(m);
  const scale = 1.0 / Math.sqrt(q.dim);
  for (let i = 0; i < n; i++) {
    rowAcc.fill(0);
    outAcc.fill(0);
    for (let h = 0; h < q.heads; h++) {
      softmaxRow(q, k, h, i, scale, probs);
      const vBase = h * m * d;
      for (let j = 0; j < m; j++) {
        const p = probs[j];
        rowAcc[j] += p;
        const vOff = vBase + j * d;
        for (let c = 0; c < d; c++) outAcc[c] += p * v.data[vOff + c];
      }
    }
    const inv = 1.0 / q.heads;
    for (let j = 0; j < m; j++) attention[i * m + j] = rowAcc[j] * inv;
    for (let c = 0; c < d; c++) output[i * d + c] = outAcc[c] * inv;
  }
  return { attention, output };
}

/** Softmax of one query row against all keys of one head, written into `out`. */
function softmaxRow(
  q: HeadTensor,
  k: HeadTensor,
  head: number,
  row: number,
  scale: number,
  out: Float64Array,
): void {
  const d = q.dim;
  const m = k.tokens;
  const qOff = (head * q.tokens + row) * d;
  const kBase = head * m * d;
  let max = -Infinity;
  for (let j = 0; j < m; j++) {
    let dot = 0;
    const kOff = kBase + j * d;
    for (let c = 0; c < d; c++) dot += q.data[qOff + c] * k.data[kOff + c];
    const logit = dot * scale;
    out[j] = logit;
    if (logit > max) max = logit;
  }
  let sum = 0;
  for (let j = 0; j < m; j++) {
    const e = Math.exp(out[j] - max);
    out[j] = e;
    sum += e;
  }
  const inv = 1.0 / sum;
  for (let j = 0; j < m; j++) out[j] *= inv;
}
