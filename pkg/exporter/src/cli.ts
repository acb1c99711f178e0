#!/usr/bin/env node
/**
 * modref-export: turn per-class image directories into the archive +
 * manifest the primary toolkit consumes.
 *
 *   modref-export --classes names.txt --images ./images \
 *       --template "a photo of a {}" --out ./export --dim 64 [--seed 1234]
 *
 * Exit codes: 0 success, 2 validation error, 1 I/O error.
 */

import { parseArgs } from "util";

import { ValidationError } from "./errors";
import { runExport } from "./export";

function main(): number {
  let parsed;
  try {
    parsed = parseArgs({
      options: {
        classes: { type: "string" },
        images: { type: "string" },
        template: { type: "string", default: "a photo of a {}" },
        out: { type: "string" },
        dim: { type: "string", default: "64" },
        seed: { type: "string", default: "1234" },
      },
    });
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 2;
  }
  const { values } = parsed;
  for (const required of ["classes", "images", "out"] as const) {
    if (!values[required]) {
      console.error(`error: --${required} is required`);
      return 2;
    }
  }
  const dim = Number(values.dim);
  const seed = Number(values.seed);
  if (!Number.isInteger(dim) || dim < 1) {
    console.error(`error: --dim must be a positive integer, got ${values.dim}`);
    return 2;
  }
  if (!Number.isInteger(seed) || seed < 0) {
    console.error(`error: --seed must be a non-negative integer, got ${values.seed}`);
    return 2;
  }
  try {
    const summary = runExport({
      classesFile: values.classes!,
      imagesDir: values.images!,
      template: values.template!,
      outPrefix: values.out!,
      dim,
      seed,
    });
    console.log(
      `export: ${summary.classes} classes, ${summary.images} images` +
        (summary.skipped ? ` (${summary.skipped} skipped)` : "") +
        ` -> ${summary.manifestPath}, ${summary.archivePath}`,
    );
    return 0;
  } catch (err) {
    if (err instanceof ValidationError) {
      console.error(`error: ${err.message}`);
      return 2;
    }
    if (err && typeof err === "object" && "code" in err) {
      console.error(`error: ${err}`);
      return 1;
    }
    throw err;
  }
}

process.exit(main());
