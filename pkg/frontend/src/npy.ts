/**
 * Minimal NPY v1.0 writer/reader for little-endian float32 arrays.
 *
 * Layout: 6-byte magic, version (1, 0), uint16 header length, ASCII header
 * dict, raw C-order payload. The total preamble is padded with spaces to a
 * multiple of 64 bytes and terminated with a newline, matching the published
 * format so any standard reader accepts these files.
 */

const MAGIC = Uint8Array.from([0x93, 0x4e, 0x55, 0x4d, 0x50, 0x59]); // \x93NUMPY

export function encodeNpyFloat32(data: Float32Array, shape: number[]): Uint8Array {
  const count = shape.reduce((a, b) => a * b, 1);
  if (count !== data.length) {
    throw new Error(`shape ${JSON.stringify(shape)} does not match length ${data.length}`);
  }
  const shapeRepr = shape.length === 1 ? `(${shape[0]},)` : `(${shape.join(', ')})`;
  let header = `{'descr': '<f4', 'fortran_order': False, 'shape': ${shapeRepr}, }`;
  const unpadded = MAGIC.length + 2 + 2 + header.length + 1;
  const pad = (64 - (unpadded % 64)) % 64;
  header = header + ' '.repeat(pad) + '\n';

  const out = new Uint8Array(MAGIC.length + 4 + header.length + count * 4);
  out.set(MAGIC, 0);
  out[6] = 1; // major version
  out[7] = 0; // minor version
  const view = new DataView(out.buffer);
  view.setUint16(8, header.length, true);
  for (let i = 0; i < header.length; i++) out[10 + i] = header.charCodeAt(i);

  const payload = new Uint8Array(data.buffer, data.byteOffset, count * 4);
  out.set(payload, 10 + header.length);
  return out;
}

export interface NpyArray {
  shape: number[];
  data: Float32Array;
}

export function decodeNpyFloat32(bytes: Uint8Array): NpyArray {
  for (let i = 0; i < MAGIC.length; i++) {
    if (bytes[i] !== MAGIC[i]) throw new Error('not an NPY file');
  }
  if (bytes[6] !== 1 || bytes[7] !== 0) {
    throw new Error(`unsupported NPY version ${bytes[6]}.${bytes[7]}`);
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const headerLen = view.getUint16(8, true);
  const header = new TextDecoder('ascii').decode(bytes.subarray(10, 10 + headerLen));
  if (!header.includes("'descr': '<f4'")) {
    throw new Error(`unsupported dtype in header: ${header.trim()}`);
  }
  if (!header.includes("'fortran_order': False")) {
    throw new Error('fortran-order arrays are not supported');
  }
  const shapeMatch = header.match(/'shape':\s*\(([^)]*)\)/);
  if (!shapeMatch) throw new Error('malformed NPY header');
  const shape = shapeMatch[1]
    .split(',')
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map(Number);
  const count = shape.reduce((a, b) => a * b, 1);
  const start = 10 + headerLen;
  const payload = bytes.subarray(start, start + count * 4);
  const copy = new Uint8Array(payload); // ensure alignment for the f32 view
  return { shape, data: new Float32Array(copy.buffer, 0, count) };
}
