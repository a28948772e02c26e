#!/usr/bin/env node
/**
 * Extraction CLI.
 *
 *   seedprop-extract extract --model synthetic:sd3-medium --prompt "..." \
 *     --concepts cat,dog --mode generation --layers 9,18 --out bundle.zip
 *   seedprop-extract batch --manifest jobs.json --out-dir bundles/
 */

import { parseArgs } from 'node:util';

import { ExtractionJob, TrajectoryMode } from './backend.js';
import { batchExtract, extractBundle } from './extract.js';

function usage(): never {
  console.error(
    [
      'usage:',
      '  seedprop-extract extract --model <id> --prompt <text> --concepts a,b',
      '      [--mode generation|inversion] [--layers 9,18] [--image path]',
      '      [--pixel-size 1024] [--seed 0] [--total-steps 28] --out bundle.zip',
      '  seedprop-extract batch --manifest jobs.json --out-dir dir/',
    ].join('\n'),
  );
  process.exit(2);
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  if (command === 'extract') {
    const { values } = parseArgs({
      args: rest,
      options: {
        model: { type: 'string' },
        prompt: { type: 'string', default: '' },
        concepts: { type: 'string' },
        mode: { type: 'string', default: 'generation' },
        layers: { type: 'string', default: '9,18' },
        image: { type: 'string' },
        'pixel-size': { type: 'string', default: '1024' },
        seed: { type: 'string', default: '0' },
        'total-steps': { type: 'string', default: '28' },
        out: { type: 'string' },
      },
    });
    if (!values.model || !values.concepts || !values.out) usage();
    const job: ExtractionJob = {
      model: values.model,
      prompt: values.prompt ?? '',
      concepts: values.concepts.split(',').map((s) => s.trim()).filter(Boolean),
      mode: (values.mode as TrajectoryMode) ?? 'generation',
      layers: values.layers!.split(',').map((s) => parseInt(s.trim(), 10)),
      imagePath: values.image,
      out: values.out,
      pixelSize: parseInt(values['pixel-size']!, 10),
      seed: parseInt(values.seed!, 10),
      totalSteps: parseInt(values['total-steps']!, 10),
    };
    const out = await extractBundle(job);
    console.log(JSON.stringify({ out }, null, 2));
    return 0;
  }
  if (command === 'batch') {
    const { values } = parseArgs({
      args: rest,
      options: {
        manifest: { type: 'string' },
        'out-dir': { type: 'string' },
      },
    });
    if (!values.manifest || !values['out-dir']) usage();
    const result = await batchExtract(values.manifest, values['out-dir']);
    console.log(JSON.stringify(result, null, 2));
    return result.failed.length > 0 && result.succeeded.length === 0 ? 1 : 0;
  }
  usage();
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(JSON.stringify({ error: err instanceof Error ? err.message : String(err) }));
    process.exit(1);
  },
);
