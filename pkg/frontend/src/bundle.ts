/**
 * Bundle archive assembly: NPY tensors in a zip with a JSON manifest,
 * matching the grounding engine's on-disk format exactly.
 */

import { writeFileSync } from 'node:fs';

import JSZip from 'jszip';

import { encodeNpyFloat32 } from './npy.js';
import { TrajectoryMode } from './backend.js';

export interface BundleTensors {
  gridH: number;
  gridW: number;
  concepts: string[];
  layers: number[];
  dH: number;
  /** per layer, row-major K x N */
  aCi: Map<number, Float32Array>;
  /** per layer, row-major N x N */
  aIi: Map<number, Float32Array>;
  /** per layer, row-major N x dH */
  oIi: Map<number, Float32Array>;
  model: string;
  timestep: number;
  trajectory: TrajectoryMode;
  prompt: string;
}

// fixed entry timestamp so identical tensors produce identical archives
const ZIP_EPOCH = new Date(Date.UTC(1980, 0, 1, 0, 0, 0));

export async function bundleArchiveBytes(t: BundleTensors): Promise<Uint8Array> {
  const n = t.gridH * t.gridW;
  const k = t.concepts.length;
  const manifest = {
    grid: { h: t.gridH, w: t.gridW },
    concepts: t.concepts,
    layers: t.layers,
    d_h: t.dH,
    model: t.model,
    timestep: t.timestep,
    trajectory: t.trajectory,
    prompt: t.prompt,
    format_version: 1,
  };
  const zip = new JSZip();
  const opts = { date: ZIP_EPOCH, compression: 'STORE' as const, createFolders: false };
  zip.file('manifest.json', JSON.stringify(manifest, null, 1), opts);
  for (const layer of t.layers) {
    const aCi = t.aCi.get(layer);
    const aIi = t.aIi.get(layer);
    const oIi = t.oIi.get(layer);
    if (!aCi || !aIi || !oIi) throw new Error(`missing tensors for layer ${layer}`);
    zip.file(`a_ci/layer_${layer}.npy`, encodeNpyFloat32(aCi, [k, n]), opts);
    zip.file(`a_ii/layer_${layer}.npy`, encodeNpyFloat32(aIi, [n, n]), opts);
    zip.file(`o_ii/layer_${layer}.npy`, encodeNpyFloat32(oIi, [n, t.dH]), opts);
  }
  return zip.generateAsync({ type: 'uint8array', compression: 'STORE' });
}

export async function writeBundle(t: BundleTensors, outPath: string): Promise<void> {
  const bytes = await bundleArchiveBytes(t);
  writeFileSync(outPath, bytes);
}
