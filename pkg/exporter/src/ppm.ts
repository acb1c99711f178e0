/** Binary PPM (P6) and PGM (P5) decoding, 8-bit maxval only. */

import { DecodeError } from "./errors";
import { DecodedImage } from "./png";

export function isPnm(buf: Buffer): boolean {
  return buf.length >= 2 && buf[0] === 0x50 && (buf[1] === 0x35 || buf[1] === 0x36);
}

export function decodePnm(buf: Buffer): DecodedImage {
  if (!isPnm(buf)) {
    throw new DecodeError("not a binary PPM/PGM");
  }
  const channels = buf[1] === 0x36 ? 3 : 1;
  let offset = 2;
  const fields: number[] = [];

  // Header fields are whitespace-separated integers; '#' starts a comment.
  while (fields.length < 3) {
    if (offset >= buf.length) throw new DecodeError("truncated header");
    const ch = buf[offset];
    if (ch === 0x23) {
      while (offset < buf.length && buf[offset] !== 0x0a) offset++;
      offset++;
    } else if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
      offset++;
    } else {
      let end = offset;
      while (end < buf.length && buf[end] >= 0x30 && buf[end] <= 0x39) end++;
      if (end === offset) throw new DecodeError(`unexpected byte ${ch} in header`);
      fields.push(parseInt(buf.toString("ascii", offset, end), 10));
      offset = end;
    }
  }
  offset++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new DecodeError(`unsupported maxval ${maxval}`);
  const expected = width * height * channels;
  if (buf.length - offset < expected) {
    throw new DecodeError(`payload has ${buf.length - offset} bytes, expected ${expected}`);
  }
  return {
    width,
    height,
    channels,
    pixels: new Uint8Array(buf.subarray(offset, offset + expected)),
  };
}
