/**
 * Writer for the tensor archive interchange format (little-endian):
 * magic "OVMA", version u32 = 1, tensor count u32, then per tensor
 * name_len u16 + UTF-8 name, dtype u8 (0 = float32), ndim u8,
 * ndim x u32 dims, row-major float32 payload.
 */

import * as fs from "fs";
import * as path from "path";

import { ValidationError } from "./errors";

export interface NamedTensor {
  name: string;
  dims: number[];
  data: Float32Array;
}

const MAGIC = Buffer.from("OVMA", "ascii");
const VERSION = 1;

export function encodeArchive(tensors: NamedTensor[]): Buffer {
  const seen = new Set<string>();
  const parts: Buffer[] = [];
  const header = Buffer.alloc(8);
  header.writeUInt32LE(VERSION, 0);
  header.writeUInt32LE(tensors.length, 4);
  parts.push(MAGIC, header);
  for (const tensor of tensors) {
    if (seen.has(tensor.name)) {
      throw new ValidationError(`duplicate tensor name ${tensor.name}`);
    }
    seen.add(tensor.name);
    const nameBytes = Buffer.from(tensor.name, "utf-8");
    if (nameBytes.length === 0 || nameBytes.length > 0xffff) {
      throw new ValidationError(`bad tensor name ${tensor.name}`);
    }
    const expected = tensor.dims.reduce((a, b) => a * b, 1);
    if (expected !== tensor.data.length) {
      throw new ValidationError(
        `tensor ${tensor.name}: dims ${tensor.dims} do not match length ${tensor.data.length}`,
      );
    }
    const meta = Buffer.alloc(2 + nameBytes.length + 2 + 4 * tensor.dims.length);
    let offset = 0;
    meta.writeUInt16LE(nameBytes.length, offset);
    offset += 2;
    nameBytes.copy(meta, offset);
    offset += nameBytes.length;
    meta.writeUInt8(0, offset); // dtype: float32
    offset += 1;
    meta.writeUInt8(tensor.dims.length, offset);
    offset += 1;
    for (const dim of tensor.dims) {
      meta.writeUInt32LE(dim, offset);
      offset += 4;
    }
    const payload = Buffer.alloc(4 * tensor.data.length);
    for (let i = 0; i < tensor.data.length; i++) {
      payload.writeFloatLE(tensor.data[i], 4 * i);
    }
    parts.push(meta, payload);
  }
  return Buffer.concat(parts);
}

/** Atomic write: temp file in the target directory, then rename. */
export function writeFileAtomic(target: string, payload: Buffer | string): void {
  const dir = path.dirname(path.resolve(target));
  const tmp = path.join(dir, `.tmp-${process.pid}-${Date.now()}-${path.basename(target)}`);
  fs.writeFileSync(tmp, payload);
  fs.renameSync(tmp, target);
}

export function writeArchive(target: string, tensors: NamedTensor[]): void {
  writeFileAtomic(target, encodeArchive(tensors));
}
