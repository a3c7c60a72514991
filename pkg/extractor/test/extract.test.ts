import { describe, expect, it } from 'vitest';
import { mkdtempSync, readFileSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { spawnSync } from 'node:child_process';

import { backboneFromSpec, localProjectionBackbone } from '../src/backbone.js';
import { extract } from '../src/extract.js';
import { readEmbeddings } from '../src/moodemb.js';
import { encodePng, RawImage } from '../src/png.js';

function testImage(seed: number, size = 64): RawImage {
  const pixels = new Uint8Array(size * size * 3);
  let state = seed * 2654435761 + 1;
  for (let i = 0; i < pixels.length; i++) {
    state = (Math.imul(state, 1664525) + 1013904223) >>> 0;
    pixels[i] = state % 256;
  }
  return { width: size, height: size, pixels };
}

function writeImages(dir: string, count: number): string[] {
  const paths: string[] = [];
  for (let i = 0; i < count; i++) {
    const path = join(dir, `img${i}.png`);
    writeFileSync(path, encodePng(testImage(i + 1)));
    paths.push(path);
  }
  return paths;
}

function makeJob(dir: string, images: string[], classToken = false) {
  return {
    imagePaths: images,
    vBackbone: localProjectionBackbone(24, 1),
    wBackbone: localProjectionBackbone(32, 2),
    gridH: 4,
    gridW: 4,
    includeClassToken: classToken,
    outV: join(dir, 'v.emb'),
    outW: join(dir, 'w.emb'),
  };
}

describe('extraction jobs', () => {
  it('writes aligned V and W files for a 2-image sample', async () => {
    const dir = mkdtempSync(join(tmpdir(), 'ext-'));
    const job = makeJob(dir, writeImages(dir, 2));
    const result = await extract(job);
    expect(result.nImages).toBe(2);
    expect(result.tokensPerImage).toBe(16);
    const v = readEmbeddings(job.outV);
    const w = readEmbeddings(job.outW);
    expect(v.nImages).toBe(w.nImages);
    expect(v.tokensPerImage).toBe(w.tokensPerImage);
    expect(v.dim).toBe(24);
    expect(w.dim).toBe(32);
    expect(v.spaceTag).toBe('V');
    expect(w.spaceTag).toBe('W');
    expect(v.sourceTag).toContain('local-proj:24:1');
  });

  it('re-extraction is byte-identical', async () => {
    const dir = mkdtempSync(join(tmpdir(), 'ext-'));
    const images = writeImages(dir, 2);
    const job = makeJob(dir, images);
    await extract(job);
    const first = readFileSync(job.outV);
    const firstW = readFileSync(job.outW);
    await extract(job);
    expect(readFileSync(job.outV).equals(first)).toBe(true);
    expect(readFileSync(job.outW).equals(firstW)).toBe(true);
  });

  it('duplicate image produces identical token blocks', async () => {
    const dir = mkdtempSync(join(tmpdir(), 'ext-'));
    const [img] = writeImages(dir, 1);
    const job = makeJob(dir, [img, img]);
    await extract(job);
    const v = readEmbeddings(job.outV);
    const perImage = v.tokensPerImage * v.dim;
    const a = v.data.subarray(0, perImage);
    const b = v.data.subarray(perImage, 2 * perImage);
    expect(Buffer.from(a.slice().buffer).equals(Buffer.from(b.slice().buffer))).toBe(true);
  });

  it('class token is appended last and flagged', async () => {
    const dir = mkdtempSync(join(tmpdir(), 'ext-'));
    const job = makeJob(dir, writeImages(dir, 2), true);
    const result = await extract(job);
    expect(result.tokensPerImage).toBe(17);
    const v = readEmbeddings(job.outV);
    expect(v.hasClassToken).toBe(true);
  });

  it('rejects images that do not divide into the grid', async () => {
    const dir = mkdtempSync(join(tmpdir(), 'ext-'));
    const path = join(dir, 'odd.png');
    writeFileSync(path, encodePng(testImage(9, 63)));  // 63 % 4 != 0
    const job = makeJob(dir, [path]);
    await expect(extract(job)).rejects.toThrow(/grid mismatch/);
  });

  it('rejects unreadable images before writing anything', async () => {
    const dir = mkdtempSync(join(tmpdir(), 'ext-'));
    const job = makeJob(dir, [join(dir, 'missing.png')]);
    await expect(extract(job)).rejects.toThrow(/unreadable image/);
  });

  it('hf backbone reports unavailability without weights', async () => {
    const backbone = backboneFromSpec('hf:some/unreachable-model');
    const img = testImage(1, 16);
    await expect(backbone.extract(img, 4, 4, false)).rejects.toThrow(
      /backbone unavailable/,
    );
  });
});

describe('primary-reader validation', () => {
  it('extracted files load under the python reader', async () => {
    const probe = spawnSync('python3', ['-c', 'import moodspace'], { encoding: 'utf-8' });
    if (probe.status !== 0) {
      console.warn('python moodspace package not importable; skipping cross-check');
      return;
    }
    const dir = mkdtempSync(join(tmpdir(), 'ext-'));
    const job = makeJob(dir, writeImages(dir, 2));
    await extract(job);
    const script = [
      'import sys',
      'from moodspace.embedding_io import read_embeddings',
      'v = read_embeddings(sys.argv[1])',
      'w = read_embeddings(sys.argv[2])',
      'assert v.n_images == w.n_images == 2',
      'assert v.tokens_per_image == w.tokens_per_image == 16',
      'assert v.space_tag == "V" and w.space_tag == "W"',
      'print("ok")',
    ].join('\n');
    const check = spawnSync('python3', ['-c', script, job.outV, job.outW], {
      encoding: 'utf-8',
    });
    expect(check.stderr).toBe('');
    expect(check.status).toBe(0);
    expect(check.stdout.trim()).toBe('ok');
  });
});
