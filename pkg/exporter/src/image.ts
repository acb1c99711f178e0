/** Image loading and the fixed preprocessing: RGB floats at 32x32. */

import * as fs from "fs";

import { DecodeError } from "./errors";
import { DecodedImage, decodePng, isPng } from "./png";
import { decodePnm, isPnm } from "./ppm";

export const SIDE = 32;

export function loadImage(path: string): DecodedImage {
  const buf = fs.readFileSync(path);
  if (isPng(buf)) return decodePng(buf);
  if (isPnm(buf)) return decodePnm(buf);
  throw new DecodeError(`${path}: unsupported image format (PNG or binary PPM/PGM expected)`);
}

/** Nearest-neighbor resize to SIDE x SIDE RGB, values in [0, 1]. */
export function toStandardPixels(image: DecodedImage): Float32Array {
  const out = new Float32Array(SIDE * SIDE * 3);
  for (let y = 0; y < SIDE; y++) {
    const srcY = Math.min(image.height - 1, Math.floor((y * image.height) / SIDE));
    for (let x = 0; x < SIDE; x++) {
      const srcX = Math.min(image.width - 1, Math.floor((x * image.width) / SIDE));
      const src = (srcY * image.width + srcX) * image.channels;
      let r: number;
      let g: number;
      let b: number;
      if (image.channels >= 3) {
        r = image.pixels[src];
        g = image.pixels[src + 1];
        b = image.pixels[src + 2];
      } else {
        r = g = b = image.pixels[src]; // grayscale (alpha ignored for 2-channel)
      }
      const dst = (y * SIDE + x) * 3;
      out[dst] = r / 255;
      out[dst + 1] = g / 255;
      out[dst + 2] = b / 255;
    }
  }
  return out;
}
