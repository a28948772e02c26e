/**
 * Bundle extraction: two capture passes, explicit attention recomputation,
 * head averaging, and archive serialization.
 *
 * Pass one records image-token Q/K/V per layer at the midpoint denoising
 * step and recomputes the token-to-token attention and its output features.
 * Pass two injects the target concept tokens and records their attention
 * rows over image tokens (softmax normalized over image tokens; the joint
 * text-image normalization of the injection protocol is a backend concern).
 */

import { existsSync, mkdirSync, readFileSync, writeFileSync } from 'node:fs';
import { dirname, join } from 'node:path';

import { attentionAndOutput, headAveragedAttention } from './attention.js';
import { ExtractionJob, ModelBackend, backendFor } from './backend.js';
import { BundleTensors, writeBundle } from './bundle.js';

export function validateJob(job: ExtractionJob, backend: ModelBackend): void {
  if (!job.concepts || job.concepts.length === 0) {
    throw new Error('job must list at least one concept');
  }
  if (job.mode === 'inversion') {
    if (!job.imagePath) throw new Error('inversion mode requires an input image path');
    if (!existsSync(job.imagePath)) throw new Error(`input image not found: ${job.imagePath}`);
  }
  if (!job.layers || job.layers.length === 0) {
    throw new Error('job must list at least one layer to record');
  }
  for (const layer of job.layers) {
    if (layer < 0 || layer >= backend.layerCount) {
      throw new Error(`layer ${layer} out of range for ${backend.layerCount}-layer model`);
    }
  }
}

/** Midpoint step index: floor(T/2) over the scheduler's step list. */
export function midpointIndex(stepCount: number): number {
  return Math.floor(stepCount / 2);
}

export async function extractBundle(job: ExtractionJob, backend?: ModelBackend): Promise<string> {
  const model = backend ?? backendFor(job.model);
  validateJob(job, model);

  const steps = model.schedulerSteps(job.totalSteps ?? 28);
  const stepIndex = midpointIndex(steps.length);
  const timestep = steps[stepIndex];
  const side = model.gridSide(job.pixelSize ?? 1024);
  const layers = [...job.layers].sort((a, b) => a - b);

  const aIi = new Map<number, Float32Array>();
  const oIi = new Map<number, Float32Array>();
  const imageCaptures = model.captureImagePass(job, stepIndex, layers);
  for (const layer of layers) {
    const cap = imageCaptures.get(layer);
    if (!cap) throw new Error(`backend did not capture layer ${layer}`);
    const { attention, output } = attentionAndOutput(cap.qImg, cap.kImg, cap.vImg);
    aIi.set(layer, attention);
    oIi.set(layer, output);
  }

  const aCi = new Map<number, Float32Array>();
  const conceptCaptures = model.captureConceptPass(job, stepIndex, layers);
  for (const layer of layers) {
    const cap = conceptCaptures.get(layer);
    if (!cap) throw new Error(`backend did not capture concept pass for layer ${layer}`);
    aCi.set(layer, headAveragedAttention(cap.qConcept, cap.kImg));
  }

  const tensors: BundleTensors = {
    gridH: side,
    gridW: side,
    concepts: job.concepts,
    layers,
    dH: model.headDim,
    aCi,
    aIi,
    oIi,
    model: model.modelId,
    timestep,
    trajectory: job.mode,
    prompt: job.prompt,
  };
  await writeBundle(tensors, job.out);
  return job.out;
}

export interface BatchResult {
  succeeded: { index: number; out: string }[];
  failed: { index: number; error: string }[];
}

/**
 * Run every job in a manifest; failures are logged and skipped, never fatal
 * to the batch. Writes batch_summary.json next to the bundles.
 */
export async function batchExtract(manifestPath: string, outDir: string): Promise<BatchResult> {
  const jobs: ExtractionJob[] = JSON.parse(readFileSync(manifestPath, 'utf-8'));
  if (!Array.isArray(jobs)) throw new Error('manifest must be a JSON array of jobs');
  mkdirSync(outDir, { recursive: true });
  const result: BatchResult = { succeeded: [], failed: [] };
  for (let i = 0; i < jobs.length; i++) {
    const job = { ...jobs[i] };
    if (!job.out) job.out = join(outDir, `job_${String(i).padStart(4, '0')}.bundle.zip`);
    else job.out = join(outDir, job.out);
    try {
      const out = await extractBundle(job);
      result.succeeded.push({ index: i, out });
    } catch (err) {
      const message = err instanceof Error ? err.message : String(err);
      console.error(`job ${i} failed: ${message}`);
      result.failed.push({ index: i, error: message });
    }
  }
  writeFileSync(join(outDir, 'batch_summary.json'), JSON.stringify(result, null, 2) + '\n');
  return result;
}

export function ensureParentDir(path: string): void {
  mkdirSync(dirname(path), { recursive: true });
}
