/**
 * MOODEMB1 binary embedding container.
 *
 * Layout (all integers little-endian uint32):
 *   magic "MOODEMB1" | n_images, tokens_per_image, dim, grid_h, grid_w,
 *   space_code, flags | meta_len, meta utf-8 | float32 LE payload in
 *   (image, token, dim) order.
 */

import { writeFileSync, readFileSync } from 'node:fs';

export const EMB_MAGIC = 'MOODEMB1';
export const SPACE_TAGS = ['other', 'V', 'W'] as const;
export type SpaceTag = (typeof SPACE_TAGS)[number];
const FLAG_CLASS_TOKEN = 0x1;

export interface EmbeddingSet {
  /** (nImages * tokensPerImage * dim) float32 values in row-major order. */
  data: Float32Array;
  nImages: number;
  tokensPerImage: number;
  dim: number;
  gridH: number;
  gridW: number;
  spaceTag: SpaceTag;
  hasClassToken: boolean;
  sourceTag: string;
}

function escapeTag(text: string): string {
  return text.replace(/\\/g, '\\\\').replace(/\n/g, '\\n');
}

function unescapeTag(text: string): string {
  let out = '';
  for (let i = 0; i < text.length; i++) {
    if (text[i] === '\\' && i + 1 < text.length) {
      i += 1;
      out += text[i] === 'n' ? '\n' : text[i];
    } else {
      out += text[i];
    }
  }
  return out;
}

export function validateSet(set: EmbeddingSet): void {
  const expectedTokens = set.gridH * set.gridW + (set.hasClassToken ? 1 : 0);
  if (set.tokensPerImage !== expectedTokens) {
    throw new Error(
      `tokens_per_image=${set.tokensPerImage} does not match grid ` +
        `${set.gridH}x${set.gridW} (class token: ${set.hasClassToken})`,
    );
  }
  if (set.nImages < 1 || set.dim < 1) {
    throw new Error('need at least one image and a positive feature dimension');
  }
  if (set.data.length !== set.nImages * set.tokensPerImage * set.dim) {
    throw new Error('payload length does not match declared shape');
  }
  for (let i = 0; i < set.data.length; i++) {
    if (!Number.isFinite(set.data[i])) throw new Error('non-finite data');
  }
}

export function encodeEmbeddings(set: EmbeddingSet): Buffer {
  validateSet(set);
  const meta = Buffer.from(`source_tag=${escapeTag(set.sourceTag)}`, 'utf-8');
  const header = Buffer.alloc(8 + 7 * 4 + 4);
  header.write(EMB_MAGIC, 0, 'ascii');
  const fields = [
    set.nImages,
    set.tokensPerImage,
    set.dim,
    set.gridH,
    set.gridW,
    SPACE_TAGS.indexOf(set.spaceTag),
    set.hasClassToken ? FLAG_CLASS_TOKEN : 0,
  ];
  fields.forEach((value, i) => header.writeUInt32LE(value >>> 0, 8 + 4 * i));
  header.writeUInt32LE(meta.length, 8 + 28);
  const payload = Buffer.alloc(set.data.length * 4);
  for (let i = 0; i < set.data.length; i++) payload.writeFloatLE(set.data[i], i * 4);
  return Buffer.concat([header, meta, payload]);
}

export function writeEmbeddings(set: EmbeddingSet, path: string): void {
  writeFileSync(path, encodeEmbeddings(set));
}

export function decodeEmbeddings(blob: Buffer): EmbeddingSet {
  if (blob.subarray(0, 8).toString('ascii') !== EMB_MAGIC) {
    throw new Error('unrecognized format');
  }
  const u32 = (i: number) => blob.readUInt32LE(8 + 4 * i);
  const [nImages, tokensPerImage, dim, gridH, gridW, spaceCode, flags] = [
    u32(0), u32(1), u32(2), u32(3), u32(4), u32(5), u32(6),
  ];
  const metaLen = blob.readUInt32LE(36);
  const payloadStart = 40 + metaLen;
  const expected = nImages * tokensPerImage * dim * 4;
  if (blob.length < payloadStart + expected) throw new Error('truncated payload');
  if (blob.length > payloadStart + expected) throw new Error('size mismatch');
  if (spaceCode >= SPACE_TAGS.length) throw new Error(`unknown space tag code ${spaceCode}`);
  const meta = blob.subarray(40, payloadStart).toString('utf-8');
  let sourceTag = '';
  for (const line of meta.split('\n')) {
    if (line.startsWith('source_tag=')) sourceTag = unescapeTag(line.slice(11));
  }
  const data = new Float32Array(nImages * tokensPerImage * dim);
  for (let i = 0; i < data.length; i++) data[i] = blob.readFloatLE(payloadStart + i * 4);
  const set: EmbeddingSet = {
    data,
    nImages,
    tokensPerImage,
    dim,
    gridH,
    gridW,
    spaceTag: SPACE_TAGS[spaceCode],
    hasClassToken: (flags & FLAG_CLASS_TOKEN) !== 0,
    sourceTag,
  };
  validateSet(set);
  return set;
}

export function readEmbeddings(path: string): EmbeddingSet {
  return decodeEmbeddings(readFileSync(path));
}
