#!/usr/bin/env node
/**
 * moodspace-extract: run two vision backbones over images and write the
 * aligned V/W embedding files consumed by the moodspace CLI.
 *
 * Usage:
 *   moodspace-extract --images a.png b.png --v-backbone local:384 \
 *     --w-backbone local:512 --out-v v.emb --out-w w.emb \
 *     [--grid 16] [--class-token]
 */

import { backboneFromSpec } from './backbone.js';
import { extract } from './extract.js';

interface Args {
  images: string[];
  vSpec: string;
  wSpec: string;
  outV: string;
  outW: string;
  grid: number;
  classToken: boolean;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {
    images: [],
    vSpec: '',
    wSpec: '',
    outV: '',
    outW: '',
    grid: 16,
    classToken: false,
  };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    switch (flag) {
      case '--images':
        while (i + 1 < argv.length && !argv[i + 1].startsWith('--')) {
          args.images.push(argv[++i]);
        }
        break;
      case '--v-backbone':
        args.vSpec = argv[++i];
        break;
      case '--w-backbone':
        args.wSpec = argv[++i];
        break;
      case '--out-v':
        args.outV = argv[++i];
        break;
      case '--out-w':
        args.outW = argv[++i];
        break;
      case '--grid':
        args.grid = Number.parseInt(argv[++i], 10);
        break;
      case '--class-token':
        args.classToken = true;
        break;
      case '--help':
      case '-h':
        console.log(
          'usage: moodspace-extract --images IMG... --v-backbone SPEC ' +
            '--w-backbone SPEC --out-v PATH --out-w PATH [--grid N] [--class-token]',
        );
        process.exit(0);
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!args.images.length) throw new Error('--images is required');
  for (const required of ['vSpec', 'wSpec', 'outV', 'outW'] as const) {
    if (!args[required]) throw new Error('missing required flag (see --help)');
  }
  if (!Number.isFinite(args.grid) || args.grid < 1) throw new Error('bad --grid');
  return args;
}

async function main(): Promise<number> {
  let args: Args;
  try {
    args = parseArgs(process.argv.slice(2));
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
  try {
    const result = await extract({
      imagePaths: args.images,
      vBackbone: backboneFromSpec(args.vSpec),
      wBackbone: backboneFromSpec(args.wSpec),
      gridH: args.grid,
      gridW: args.grid,
      includeClassToken: args.classToken,
      outV: args.outV,
      outW: args.outW,
    });
    console.error(
      `extracted ${result.nImages} images x ${result.tokensPerImage} tokens ` +
        `(V dim ${result.vDim}, W dim ${result.wDim})`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

main().then((code) => {
  process.exitCode = code;
});
