import { describe, expect, it } from 'vitest';

import { attentionAndOutput, headAveragedAttention, headTensor } from '../src/attention.js';
import { normal, rngFromString } from '../src/rng.js';

function randomTensor(heads: number, tokens: number, dim: number, seed: string) {
  const t = headTensor(heads, tokens, dim);
  const rng = rngFromString(seed);
  for (let i = 0; i < t.data.length; i++) t.data[i] = normal(rng);
  return t;
}

function rowSums(flat: Float32Array, rows: number, cols: number): number[] {
  const sums = [];
  for (let i = 0; i < rows; i++) {
    let s = 0;
    for (let j = 0; j < cols; j++) s += flat[i * cols + j];
    sums.push(s);
  }
  return sums;
}

describe('attention recomputation', () => {
  it('softmax rows sum to one within 1e-6', () => {
    const q = randomTensor(2, 9, 4, 'q');
    const k = randomTensor(2, 9, 4, 'k');
    const a = headAveragedAttention(q, k);
    for (const s of rowSums(a, 9, 9)) expect(Math.abs(s - 1)).toBeLessThan(1e-6);
  });

  it('head averaging preserves row-stochasticity', () => {
    const q = randomTensor(4, 6, 3, 'q2');
    const k = randomTensor(4, 6, 3, 'k2');
    const a = headAveragedAttention(q, k);
    for (const s of rowSums(a, 6, 6)) expect(Math.abs(s - 1)).toBeLessThan(1e-6);
  });

  it('zero queries give uniform attention', () => {
    const q = headTensor(1, 3, 4); // all zeros
    const k = randomTensor(1, 5, 4, 'k3');
    const a = headAveragedAttention(q, k);
    for (let j = 0; j < 15; j++) expect(a[j]).toBeCloseTo(1 / 5, 6);
  });

  it('matches a hand-computed two-token softmax', () => {
    const q = headTensor(1, 1, 1);
    const k = headTensor(1, 2, 1);
    q.data[0] = 2.0;
    k.data[0] = 1.0;
    k.data[1] = -1.0;
    // logits are (2, -2): softmax = e^2 / (e^2 + e^-2), e^-2 / (...)
    const a = headAveragedAttention(q, k);
    const e2 = Math.exp(2);
    const em2 = Math.exp(-2);
    expect(a[0]).toBeCloseTo(e2 / (e2 + em2), 6);
    expect(a[1]).toBeCloseTo(em2 / (e2 + em2), 6);
  });

  it('outputs are the attention-weighted value rows, averaged over heads', () => {
    const q = randomTensor(2, 4, 3, 'q4');
    const k = randomTensor(2, 4, 3, 'k4');
    const v = randomTensor(2, 4, 5, 'v4');
    const { attention, output } = attentionAndOutput(q, k, v);
    for (const s of rowSums(attention, 4, 4)) expect(Math.abs(s - 1)).toBeLessThan(1e-6);

    // recompute per-head explicitly and average
    const expect4 = new Float64Array(4 * 5);
    for (let h = 0; h < 2; h++) {
      const sub = { heads: 1, tokens: 4, dim: 3, data: new Float32Array(12) };
      const subK = { heads: 1, tokens: 4, dim: 3, data: new Float32Array(12) };
      sub.data.set(q.data.subarray(h * 12, (h + 1) * 12));
      subK.data.set(k.data.subarray(h * 12, (h + 1) * 12));
      const aH = headAveragedAttention(sub, subK);
      for (let i = 0; i < 4; i++) {
        for (let c = 0; c < 5; c++) {
          let acc = 0;
          for (let j = 0; j < 4; j++) acc += aH[i * 4 + j] * v.data[(h * 4 + j) * 5 + c];
          expect4[i * 5 + c] += acc / 2;
        }
      }
    }
    for (let i = 0; i < 20; i++) expect(output[i]).toBeCloseTo(expect4[i], 5);
  });

  it('concept rows attend over image tokens only', () => {
    const qConcept = randomTensor(2, 3, 4, 'qc');
    const kImg = randomTensor(2, 7, 4, 'kimg');
    const a = headAveragedAttention(qConcept, kImg);
    expect(a.length).toBe(3 * 7);
    for (const s of rowSums(a, 3, 7)) expect(Math.abs(s - 1)).toBeLessThan(1e-6);
  });

  it('rejects incompatible head layouts', () => {
    const q = randomTensor(2, 3, 4, 'a');
    const k = randomTensor(3, 3, 4, 'b');
    expect(() => headAveragedAttention(q, k)).toThrow(/head count/);
  });
});

describe('rng determinism', () => {
  it('same seed, same stream', () => {
    const a = rngFromString('seed|x');
    const b = rngFromString('seed|x');
    for (let i = 0; i < 100; i++) expect(a()).toBe(b());
  });

  it('different seeds diverge', () => {
    const a = rngFromString('seed|x');
    const b = rngFromString('seed|y');
    const same = Array.from({ length: 20 }, () => a() === b()).every(Boolean);
    expect(same).toBe(false);
  });
});
