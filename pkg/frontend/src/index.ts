export { attentionAndOutput, headAveragedAttention, headTensor } from './attention.js';
export type { HeadTensor } from './attention.js';
export {
  SyntheticBackend,
  backendFor,
} from './backend.js';
export type {
  ConceptCapture,
  ExtractionJob,
  LayerCapture,
  ModelBackend,
  TrajectoryMode,
} from './backend.js';
export { bundleArchiveBytes, writeBundle } from './bundle.js';
export type { BundleTensors } from './bundle.js';
export { batchExtract, extractBundle, midpointIndex, validateJob } from './extract.js';
export type { BatchResult } from './extract.js';
export { decodeNpyFloat32, encodeNpyFloat32 } from './npy.js';
export { cyrb128, normal, rngFromString, sfc32 } from './rng.js';
