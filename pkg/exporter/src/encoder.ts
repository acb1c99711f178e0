/**
 * Seeded stand-in feature extractors.
 *
 * No real vision-language model runs here: image features come from a
 * fixed gaussian random projection of the standardized pixels, and text
 * token embeddings from per-token seeded gaussians. Both are deterministic
 * functions of (input, seed, d) and unit-norm, which is all the consuming
 * toolkit's cosine classifiers assume.
 */

import { SIDE } from "./image";
import { fnv1a, gaussian, mulberry32 } from "./rng";

const PIXELS = SIDE * SIDE * 3;

export class ImageFeatureExtractor {
  private readonly projection: Float32Array; // d x PIXELS, row-major
  readonly dim: number;

  constructor(dim: number, seed: number) {
    this.dim = dim;
    const next = gaussian(mulberry32(seed ^ 0x9e3779b9));
    const scale = 1.0 / Math.sqrt(PIXELS);
    this.projection = new Float32Array(dim * PIXELS);
    for (let i = 0; i < this.projection.length; i++) {
      this.projection[i] = next() * scale;
    }
  }

  extract(pixels: Float32Array): Float32Array {
    let mean = 0;
    for (let i = 0; i < PIXELS; i++) mean += pixels[i];
    mean /= PIXELS;
    let variance = 0;
    for (let i = 0; i < PIXELS; i++) {
      const c = pixels[i] - mean;
      variance += c * c;
    }
    const invStd = 1.0 / Math.sqrt(variance / PIXELS + 1e-6);
    const feature = new Float32Array(this.dim);
    let norm = 0;
    for (let row = 0; row < this.dim; row++) {
      let acc = 0;
      const base = row * PIXELS;
      for (let i = 0; i < PIXELS; i++) {
        acc += this.projection[base + i] * (pixels[i] - mean) * invStd;
      }
      feature[row] = acc;
      norm += acc * acc;
    }
    norm = Math.sqrt(norm);
    if (norm === 0) throw new Error("degenerate image feature (zero norm)");
    for (let row = 0; row < this.dim; row++) feature[row] /= norm;
    return feature;
  }
}

export function tokenize(template: string, className: string): string[] {
  const filled = template.includes("{}")
    ? template.split("{}").join(className)
    : `${template} ${className}`;
  return filled
    .toLowerCase()
    .split(/[^a-z0-9]+/)
    .filter((t) => t.length > 0);
}

/** Unit-norm embedding for one token, keyed by fnv1a(token) xor seed. */
export function tokenEmbedding(token: string, dim: number, seed: number): Float32Array {
  const next = gaussian(mulberry32(fnv1a(token) ^ (seed >>> 0)));
  const out = new Float32Array(dim);
  let norm = 0;
  for (let i = 0; i < dim; i++) {
    out[i] = next();
    norm += out[i] * out[i];
  }
  norm = Math.sqrt(norm);
  for (let i = 0; i < dim; i++) out[i] /= norm;
  return out;
}

export function textTokenMatrix(tokens: string[], dim: number, seed: number): Float32Array {
  const out = new Float32Array(tokens.length * dim);
  tokens.forEach((token, row) => {
    out.set(tokenEmbedding(token, dim, seed), row * dim);
  });
  return out;
}
