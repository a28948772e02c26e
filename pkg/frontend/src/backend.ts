/**
 * Model backend abstraction for attention capture.
 *
 * A backend owns the denoising pipeline of one diffusion transformer and can
 * run it twice per extraction: a structural pass capturing image-token Q/K/V
 * per recorded layer, and a concept pass with the target concept tokens
 * injected as extra attention probes (concept queries attend to image keys;
 * image tokens are unaffected).
 *
 * The shipped SyntheticBackend fabricates deterministic captures with the
 * geometry of a real pipeline (patchified latent grid, per-head Q/K/V,
 * scheduler step list) so the extraction and serialization machinery can run
 * and be validated at any size without model weights. Integrating a real
 * model means implementing this interface with forward hooks that record raw
 * per-head Q/K/V at the chosen layers.
 */

import { readFileSync } from 'node:fs';

import { HeadTensor, headTensor } from './attention.js';
import { normal, rngFromString } from './rng.js';

export type TrajectoryMode = 'generation' | 'inversion';

export interface ExtractionJob {
  /** backend selector, e.g. "synthetic:sd3-medium" */
  model: string;
  prompt: string;
  concepts: string[];
  mode: TrajectoryMode;
  /** transformer layers to record */
  layers: number[];
  /** source image, required in inversion mode */
  imagePath?: string;
  /** output bundle path */
  out: string;
  /** square input resolution, default 1024 */
  pixelSize?: number;
  /** sampler seed for generation mode */
  seed?: number;
  /** sampler step count, default 28 */
  totalSteps?: number;
}

export interface LayerCapture {
  qImg: HeadTensor;
  kImg: HeadTensor;
  vImg: HeadTensor;
}

export interface ConceptCapture {
  qConcept: HeadTensor;
  kImg: HeadTensor;
}

export interface ModelBackend {
  readonly modelId: string;
  readonly layerCount: number;
  readonly headCount: number;
  readonly headDim: number;
  /** latent tokens per side for a square input of the given pixel size */
  gridSide(pixelSize: number): number;
  /** scheduler step indices, highest-noise first */
  schedulerSteps(totalSteps: number): number[];
  captureImagePass(job: ExtractionJob, stepIndex: number, layers: number[]): Map<number, LayerCapture>;
  captureConceptPass(job: ExtractionJob, stepIndex: number, layers: number[]): Map<number, ConceptCapture>;
}

const PATCH_SIZE = 16;

export interface SyntheticBackendOptions {
  layerCount?: number;
  headCount?: number;
  headDim?: number;
}

/**
 * Deterministic stand-in for an instrumented diffusion transformer.
 *
 * Captures are seeded by (model, prompt or image bytes, seed, step, layer,
 * head), so repeated extractions of the same job are byte-identical. Query
 * and key vectors share a smooth positional component, which gives the
 * recomputed attention a realistic local structure instead of white noise.
 */
export class SyntheticBackend implements ModelBackend {
  readonly modelId: string;
  readonly layerCount: number;
  readonly headCount: number;
  readonly headDim: number;

  constructor(modelId: string, opts: SyntheticBackendOptions = {}) {
    this.modelId = modelId;
    this.layerCount = opts.layerCount ?? 24;
    this.headCount = opts.headCount ?? 2;
    this.headDim = opts.headDim ?? 8;
  }

  gridSide(pixelSize: number): number {
    if (pixelSize <= 0 || pixelSize % PATCH_SIZE !== 0) {
      throw new Error(`pixel size must be a positive multiple of ${PATCH_SIZE}, got ${pixelSize}`);
    }
    return pixelSize / PATCH_SIZE;
  }

  schedulerSteps(totalSteps: number): number[] {
    if (totalSteps < 1) throw new Error('totalSteps must be >= 1');
    const steps = [];
    for (let i = 0; i < totalSteps; i++) steps.push(1000 - Math.round((1000 * i) / totalSteps));
    return steps;
  }

  private jobSeed(job: ExtractionJob): string {
    if (job.mode === 'inversion') {
      if (!job.imagePath) throw new Error('inversion mode requires an input image');
      const bytes = readFileSync(job.imagePath);
      let h = 0;
      for (const b of bytes) h = (Math.imul(h, 31) + b) | 0;
      return `${this.modelId}|inv|${h}`;
    }
    return `${this.modelId}|gen|${job.prompt}|${job.seed ?? 0}`;
  }

  private fillTokens(t: HeadTensor, side: number, seedKey: string): void {
    const d = t.dim;
    for (let h = 0; h < t.heads; h++) {
      const rng = rngFromString(`${seedKey}|head${h}`);
      // per-head random frequencies for the positional component
      const freq = Array.from({ length: d }, () => 0.5 + 2.5 * rng());
      const phase = Array.from({ length: d }, () => 2 * Math.PI * rng());
      for (let tok = 0; tok < t.tokens; tok++) {
        const r = Math.floor(tok / side);
        const c = tok % side;
        const off = (h * t.tokens + tok) * d;
        for (let k = 0; k < d; k++) {
          const pos =
            Math.sin(freq[k] * (r / side) * Math.PI * 2 + phase[k]) +
            Math.cos(freq[k] * (c / side) * Math.PI * 2 + phase[k]);
          t.data[off + k] = 1.2 * pos + 0.35 * normal(rng);
        }
      }
    }
  }

  captureImagePass(job: ExtractionJob, stepIndex: number, layers: number[]): Map<number, LayerCapture> {
    const side = this.gridSide(job.pixelSize ?? 1024);
    const n = side * side;
    const base = `${this.jobSeed(job)}|step${stepIndex}`;
    const out = new Map<number, LayerCapture>();
    for (const layer of layers) {
      if (layer < 0 || layer >= this.layerCount) {
        throw new Error(`layer ${layer} out of range for ${this.layerCount}-layer model`);
      }
      const qImg = headTensor(this.headCount, n, this.headDim);
      const kImg = headTensor(this.headCount, n, this.headDim);
      const vImg = headTensor(this.headCount, n, this.headDim);
      this.fillTokens(qImg, side, `${base}|L${layer}|q`);
      this.fillTokens(kImg, side, `${base}|L${layer}|k`);
      this.fillTokens(vImg, side, `${base}|L${layer}|v`);
      out.set(layer, { qImg, kImg, vImg });
    }
    return out;
  }

  captureConceptPass(job: ExtractionJob, stepIndex: number, layers: number[]): Map<number, ConceptCapture> {
    const side = this.gridSide(job.pixelSize ?? 1024);
    const base = `${this.jobSeed(job)}|step${stepIndex}`;
    const imagePass = this.captureImagePass(job, stepIndex, layers);
    const out = new Map<number, ConceptCapture>();
    for (const layer of layers) {
      const kImg = imagePass.get(layer)!.kImg;
      const qConcept = headTensor(this.headCount, job.concepts.length, this.headDim);
      for (let h = 0; h < this.headCount; h++) {
        for (let ci = 0; ci < job.concepts.length; ci++) {
          const rng = rngFromString(`${base}|L${layer}|concept|${job.concepts[ci]}|head${h}`);
          const off = (h * job.concepts.length + ci) * this.headDim;
          for (let k = 0; k < this.headDim; k++) {
            qConcept.data[off + k] = 1.5 * normal(rng);
          }
        }
      }
      out.set(layer, { qConcept, kImg });
    }
    return out;
  }
}

/** Resolve a job's model string to a backend instance. */
export function backendFor(model: string): ModelBackend {
  if (model.startsWith('synthetic:') || model === 'synthetic') {
    return new SyntheticBackend(model);
  }
  throw new Error(
    `no backend for model "${model}"; only synthetic:* backends ship here - ` +
      'integrate a real pipeline by implementing the ModelBackend interface',
  );
}
