import { describe, expect, it } from 'vitest';

import { decodePng, encodePng, RawImage } from '../src/png.js';

function gradient(width: number, height: number): RawImage {
  const pixels = new Uint8Array(width * height * 3);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const i = (y * width + x) * 3;
      pixels[i] = (x * 7 + y) % 256;
      pixels[i + 1] = (y * 13) % 256;
      pixels[i + 2] = (x * y) % 256;
    }
  }
  return { width, height, pixels };
}

describe('PNG codec', () => {
  it('round-trips RGB images', () => {
    const img = gradient(48, 32);
    const back = decodePng(encodePng(img));
    expect(back.width).toBe(48);
    expect(back.height).toBe(32);
    expect(Buffer.from(back.pixels).equals(Buffer.from(img.pixels))).toBe(true);
  });

  it('rejects non-PNG data', () => {
    expect(() => decodePng(Buffer.from('not a png at all, sorry'))).toThrow(/not a PNG/);
  });

  it('rejects mismatched pixel buffers', () => {
    expect(() => encodePng({ width: 4, height: 4, pixels: new Uint8Array(5) })).toThrow();
  });
});
