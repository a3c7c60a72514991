/**
 * Patch-token feature backbones.
 *
 * Two families:
 *  - "hf:<model>" wraps a pre-trained vision transformer through
 *    @huggingface/transformers (optional dependency); patch tokens come
 *    from the final hidden state in raster order, class token first.
 *  - "local:<dim>[:<seed>]" is a deterministic offline featurizer
 *    (seeded random projection of raw patch pixels) used for tests and
 *    plumbing validation when no pre-trained weights are reachable.
 */

import type { RawImage } from './png.js';

export interface PatchTokens {
  /** tokens * dim float32 values; grid tokens in raster order, class token last. */
  data: Float32Array;
  tokens: number;
  dim: number;
}

export interface Backbone {
  id: string;
  dim: number;
  /** Produce per-patch features for a grid of gridH x gridW patches. */
  extract(image: RawImage, gridH: number, gridW: number, classToken: boolean): Promise<PatchTokens>;
}

/** Deterministic 32-bit PRNG (mulberry32). */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function hashString(text: string): number {
  let h = 2166136261;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 16777619);
  }
  return h >>> 0;
}

/**
 * Offline backbone: each feature is a fixed pseudo-random projection of the
 * patch's normalized pixels. Deterministic in (dim, seed, patch geometry).
 */
export function localProjectionBackbone(dim: number, seed = 0): Backbone {
  if (dim < 1) throw new Error('backbone dimension must be positive');
  const id = `local-proj:${dim}:${seed}`;

  function projectionRow(row: number, length: number): Float32Array {
    const rng = mulberry32(hashString(id) ^ (row * 2654435761) ^ length);
    const weights = new Float32Array(length);
    const scale = 1.0 / Math.sqrt(length);
    for (let i = 0; i < length; i++) {
      weights[i] = Math.fround((rng() * 2 - 1) * scale);
    }
    return weights;
  }

  return {
    id,
    dim,
    async extract(image, gridH, gridW, classToken) {
      const { width, height, pixels } = image;
      if (width % gridW !== 0 || height % gridH !== 0) {
        throw new Error(
          `grid mismatch: ${width}x${height} image does not divide into ` +
            `${gridH}x${gridW} patches`,
        );
      }
      const pw = width / gridW;
      const ph = height / gridH;
      const patchLen = pw * ph * 3;
      const rows: Float32Array[] = [];
      for (let d = 0; d < dim; d++) rows.push(projectionRow(d, patchLen));
      const tokens = gridH * gridW + (classToken ? 1 : 0);
      const out = new Float32Array(tokens * dim);
      const meanPatch = new Float64Array(patchLen);
      const patch = new Float64Array(patchLen);
      for (let gy = 0; gy < gridH; gy++) {
        for (let gx = 0; gx < gridW; gx++) {
          let k = 0;
          for (let y = 0; y < ph; y++) {
            const rowStart = ((gy * ph + y) * width + gx * pw) * 3;
            for (let x = 0; x < pw * 3; x++) {
              patch[k] = pixels[rowStart + x] / 255.0 - 0.5;
              meanPatch[k] += patch[k];
              k++;
            }
          }
          const tokenIdx = gy * gridW + gx;
          for (let d = 0; d < dim; d++) {
            const w = rows[d];
            let acc = 0;
            for (let i = 0; i < patchLen; i++) acc += w[i] * patch[i];
            out[tokenIdx * dim + d] = Math.fround(acc);
          }
        }
      }
      if (classToken) {
        const nPatch = gridH * gridW;
        for (let i = 0; i < patchLen; i++) meanPatch[i] /= nPatch;
        const tokenIdx = nPatch;
        for (let d = 0; d < dim; d++) {
          const w = rows[d];
          let acc = 0;
          for (let i = 0; i < patchLen; i++) acc += w[i] * meanPatch[i];
          out[tokenIdx * dim + d] = Math.fround(acc);
        }
      }
      return { data: out, tokens, dim };
    },
  };
}

/**
 * Pre-trained backbone through transformers.js. The model id is passed to
 * AutoProcessor/AutoModel; the last hidden state supplies one token per
 * patch (class token, when present, is moved to the end to match the
 * container convention).
 */
export function transformersBackbone(modelId: string): Backbone {
  let loaded: Promise<{ model: any; processor: any; RawImageCls: any }> | null = null;

  async function load() {
    if (!loaded) {
      loaded = (async () => {
        let mod: any;
        try {
          // optional dependency, resolved only when a hf: backbone is used
          mod = await import(
            /* @vite-ignore */ '@huggingface' + '/transformers');
        } catch (err) {
          throw new Error(
            `backbone unavailable: @huggingface/transformers not installed (${err})`,
          );
        }
        try {
          const processor = await mod.AutoProcessor.from_pretrained(modelId);
          const model = await mod.AutoModel.from_pretrained(modelId);
          return { model, processor, RawImageCls: mod.RawImage };
        } catch (err) {
          throw new Error(`backbone unavailable: cannot load ${modelId} (${err})`);
        }
      })();
    }
    return loaded;
  }

  return {
    id: `hf:${modelId}`,
    dim: -1, // known after the first forward pass
    async extract(image, gridH, gridW, classToken) {
      const { model, processor, RawImageCls } = await load();
      const rgba = new Uint8ClampedArray(image.width * image.height * 4);
      for (let i = 0; i < image.width * image.height; i++) {
        rgba[i * 4] = image.pixels[i * 3];
        rgba[i * 4 + 1] = image.pixels[i * 3 + 1];
        rgba[i * 4 + 2] = image.pixels[i * 3 + 2];
        rgba[i * 4 + 3] = 255;
      }
      const raw = new RawImageCls(rgba, image.width, image.height, 4);
      const inputs = await processor(raw);
      const output = await model(inputs);
      const hidden = output.last_hidden_state ?? output.image_embeds_unpooled;
      if (!hidden) throw new Error(`backbone ${modelId} returned no token states`);
      const [, seq, dim] = hidden.dims;
      const values: Float32Array = hidden.data;
      const nPatch = gridH * gridW;
      const hasCls = seq === nPatch + 1;
      if (!hasCls && seq !== nPatch) {
        throw new Error(
          `grid mismatch: backbone produced ${seq} tokens for a ` +
            `${gridH}x${gridW} grid`,
        );
      }
      const tokens = nPatch + (classToken ? 1 : 0);
      const out = new Float32Array(tokens * dim);
      const patchOffset = hasCls ? 1 : 0;
      out.set(values.subarray(patchOffset * dim, (patchOffset + nPatch) * dim), 0);
      if (classToken) {
        if (!hasCls) throw new Error(`backbone ${modelId} has no class token`);
        out.set(values.subarray(0, dim), nPatch * dim);
      }
      return { data: out, tokens, dim };
    },
  };
}

/** Parse a backbone spec string: "local:<dim>[:<seed>]" or "hf:<model>". */
export function backboneFromSpec(spec: string): Backbone {
  if (spec.startsWith('local:')) {
    const parts = spec.slice(6).split(':');
    const dim = Number.parseInt(parts[0], 10);
    const seed = parts.length > 1 ? Number.parseInt(parts[1], 10) : 0;
    if (!Number.isFinite(dim)) throw new Error(`bad local backbone spec: ${spec}`);
    return localProjectionBackbone(dim, seed);
  }
  if (spec.startsWith('hf:')) {
    return transformersBackbone(spec.slice(3));
  }
  throw new Error(`unknown backbone spec: ${spec} (expected local:<dim> or hf:<model>)`);
}
