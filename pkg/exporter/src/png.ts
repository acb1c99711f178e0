/**
 * Minimal PNG decoder: 8-bit depth, grayscale / gray+alpha / RGB / RGBA,
 * no interlacing. Enough to read ordinary exported images without native
 * dependencies; zlib does the inflate.
 */

import * as zlib from "zlib";

import { DecodeError } from "./errors";

export interface DecodedImage {
  width: number;
  height: number;
  channels: number;
  pixels: Uint8Array; // row-major, interleaved channels
}

const SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

const CHANNELS: Record<number, number> = { 0: 1, 2: 3, 4: 2, 6: 4 };

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

export function isPng(buf: Buffer): boolean {
  return buf.length >= 8 && buf.subarray(0, 8).equals(SIGNATURE);
}

export function decodePng(buf: Buffer): DecodedImage {
  if (!isPng(buf)) {
    throw new DecodeError("not a PNG (bad signature)");
  }
  let offset = 8;
  let width = 0;
  let height = 0;
  let channels = 0;
  const idat: Buffer[] = [];
  let sawIhdr = false;
  while (offset + 8 <= buf.length) {
    const length = buf.readUInt32BE(offset);
    const kind = buf.toString("ascii", offset + 4, offset + 8);
    const body = buf.subarray(offset + 8, offset + 8 + length);
    offset += 12 + length; // length + type + data + crc (crc unchecked)
    if (kind === "IHDR") {
      width = body.readUInt32BE(0);
      height = body.readUInt32BE(4);
      const bitDepth = body.readUInt8(8);
      const colorType = body.readUInt8(9);
      const interlace = body.readUInt8(12);
      if (bitDepth !== 8) throw new DecodeError(`unsupported bit depth ${bitDepth}`);
      if (!(colorType in CHANNELS)) throw new DecodeError(`unsupported color type ${colorType}`);
      if (interlace !== 0) throw new DecodeError("interlaced PNG not supported");
      channels = CHANNELS[colorType];
      sawIhdr = true;
    } else if (kind === "IDAT") {
      idat.push(body);
    } else if (kind === "IEND") {
      break;
    }
  }
  if (!sawIhdr || idat.length === 0) {
    throw new DecodeError("missing IHDR or IDAT");
  }
  let raw: Buffer;
  try {
    raw = zlib.inflateSync(Buffer.concat(idat));
  } catch (err) {
    throw new DecodeError(`IDAT inflate failed: ${err}`);
  }
  const stride = width * channels;
  if (raw.length !== height * (stride + 1)) {
    throw new DecodeError(`decompressed size ${raw.length} != expected ${height * (stride + 1)}`);
  }
  const pixels = new Uint8Array(height * stride);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const line = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const row = y * stride;
    const prev = row - stride;
    for (let x = 0; x < stride; x++) {
      const left = x >= channels ? pixels[row + x - channels] : 0;
      const up = y > 0 ? pixels[prev + x] : 0;
      const upLeft = y > 0 && x >= channels ? pixels[prev + x - channels] : 0;
      let value: number;
      switch (filter) {
        case 0:
          value = line[x];
          break;
        case 1:
          value = line[x] + left;
          break;
        case 2:
          value = line[x] + up;
          break;
        case 3:
          value = line[x] + ((left + up) >> 1);
          break;
        case 4:
          value = line[x] + paeth(left, up, upLeft);
          break;
        default:
          throw new DecodeError(`unknown filter ${filter} on row ${y}`);
      }
      pixels[row + x] = value & 0xff;
    }
  }
  return { width, height, channels, pixels };
}
