/**
 * Extraction jobs: run a source-space backbone and a target-space backbone
 * over the same image list and write two aligned MOODEMB1 files.
 */

import { readFileSync } from 'node:fs';
import { basename } from 'node:path';

import { Backbone } from './backbone.js';
import { EmbeddingSet, writeEmbeddings } from './moodemb.js';
import { decodePng, RawImage } from './png.js';

export interface ExtractionJob {
  imagePaths: string[];
  vBackbone: Backbone;
  wBackbone: Backbone;
  gridH: number;
  gridW: number;
  includeClassToken: boolean;
  outV: string;
  outW: string;
}

export interface ExtractionResult {
  nImages: number;
  tokensPerImage: number;
  vDim: number;
  wDim: number;
}

function loadImage(path: string): RawImage {
  let blob: Buffer;
  try {
    blob = readFileSync(path);
  } catch (err) {
    throw new Error(`unreadable image ${path}: ${err}`);
  }
  return decodePng(blob);
}

async function runBackbone(
  backbone: Backbone,
  images: RawImage[],
  job: ExtractionJob,
): Promise<{ data: Float32Array; tokens: number; dim: number }> {
  const expectedTokens = job.gridH * job.gridW + (job.includeClassToken ? 1 : 0);
  let dim = -1;
  let all: Float32Array | null = null;
  for (let i = 0; i < images.length; i++) {
    const result = await backbone.extract(images[i], job.gridH, job.gridW,
                                          job.includeClassToken);
    if (result.tokens !== expectedTokens) {
      throw new Error(
        `grid mismatch: backbone ${backbone.id} produced ${result.tokens} tokens, ` +
          `declared grid needs ${expectedTokens}`,
      );
    }
    if (dim === -1) {
      dim = result.dim;
      all = new Float32Array(images.length * expectedTokens * dim);
    } else if (result.dim !== dim) {
      throw new Error(`backbone ${backbone.id} changed dimension between images`);
    }
    all!.set(result.data, i * expectedTokens * dim);
  }
  return { data: all!, tokens: expectedTokens, dim };
}

export async function extract(job: ExtractionJob): Promise<ExtractionResult> {
  if (job.imagePaths.length < 1) throw new Error('need at least one image');
  const images = job.imagePaths.map(loadImage);
  const v = await runBackbone(job.vBackbone, images, job);
  const w = await runBackbone(job.wBackbone, images, job);
  if (v.tokens !== w.tokens) {
    throw new Error('backbones disagree on token count; refusing to write');
  }
  const names = job.imagePaths.map((p) => basename(p)).join(',');
  const common = {
    nImages: images.length,
    tokensPerImage: v.tokens,
    gridH: job.gridH,
    gridW: job.gridW,
    hasClassToken: job.includeClassToken,
  };
  const vSet: EmbeddingSet = {
    ...common,
    data: v.data,
    dim: v.dim,
    spaceTag: 'V',
    sourceTag: `backbone=${job.vBackbone.id} images=${names}`,
  };
  const wSet: EmbeddingSet = {
    ...common,
    data: w.data,
    dim: w.dim,
    spaceTag: 'W',
    sourceTag: `backbone=${job.wBackbone.id} images=${names}`,
  };
  writeEmbeddings(vSet, job.outV);
  writeEmbeddings(wSet, job.outW);
  return {
    nImages: images.length,
    tokensPerImage: v.tokens,
    vDim: v.dim,
    wDim: w.dim,
  };
}
