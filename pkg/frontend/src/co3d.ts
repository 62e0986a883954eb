/**
 * CO3D-style sequence conversion: images + depth PNGs + masks + camera
 * annotations in, a loadable pose-pipeline sequence out.
 *
 * Expected layout under the sequence directory:
 *   annotations.json  — {category, sequence_id, frames: [...]} where each
 *                       frame names its image/mask/depth files (relative),
 *                       a depth_scale, pinhole intrinsics, and a 4×4
 *                       row-major extrinsics matrix
 *   plus whatever relative paths the annotations reference.
 *
 * Frames with missing annotations or missing files are skipped with a
 * warning, not fatal: real capture sequences routinely have holes.
 */

import * as fs from "fs";
import * as path from "path";

import { MissingAnnotation } from "./errors";
import { ExtractionConfig, DepthInput, extractFrame, getModel } from "./extract";
import { FrameRecordJson, ManifestJson, ensureDir, writeManifest } from "./formats";
import { readDepthPng, readMaskPng, readPng } from "./image";

interface Co3dFrame {
  frame_id?: string;
  image?: string;
  mask?: string;
  depth?: string;
  depth_scale?: number;
  intrinsics?: { fx: number; fy: number; cx: number; cy: number };
  extrinsics?: number[];
}

interface Co3dAnnotations {
  category?: string;
  sequence_id?: string;
  frames?: Co3dFrame[];
}

export interface ConversionResult {
  manifestPath: string;
  converted: number;
  /** frames dropped for missing annotations/files, already warned about */
  skipped: number;
}

function requireField<T>(frame: Co3dFrame, field: keyof Co3dFrame, id: string): T {
  const v = frame[field];
  if (v === undefined || v === null) {
    throw new MissingAnnotation(`frame ${id}: missing ${String(field)}`);
  }
  return v as T;
}

function loadDepth(seqDir: string, rel: string, scale: number, width: number, height: number): DepthInput {
  const png = readDepthPng(path.join(seqDir, rel));
  let raw = png.values;
  let w = png.width;
  let h = png.height;
  if (w !== width || h !== height) {
    // depth rendered at a different resolution: nearest-resize onto the image grid
    const resized = new Uint16Array(width * height);
    for (let y = 0; y < height; y++) {
      const sy = Math.min(Math.floor(((y + 0.5) * h) / height), h - 1);
      for (let x = 0; x < width; x++) {
        const sx = Math.min(Math.floor(((x + 0.5) * w) / width), w - 1);
        resized[y * width + x] = raw[sy * w + sx];
      }
    }
    raw = resized;
    w = width;
    h = height;
  }
  const values = new Float32Array(w * h);
  const valid = new Uint8Array(w * h);
  for (let i = 0; i < values.length; i++) {
    values[i] = raw[i] * scale;
    valid[i] = raw[i] > 0 ? 1 : 0; // zero is the sensor's no-reading sentinel
  }
  return { width: w, height: h, values, valid };
}

export function convertCo3dSequence(
  seqDir: string,
  outDir: string,
  cfg: ExtractionConfig,
  warn: (message: string) => void = (m) => console.warn(m),
): ConversionResult {
  const annPath = path.join(seqDir, "annotations.json");
  if (!fs.existsSync(annPath)) {
    throw new MissingAnnotation(`no annotations.json in ${seqDir}`);
  }
  let ann: Co3dAnnotations;
  try {
    ann = JSON.parse(fs.readFileSync(annPath, "utf-8"));
  } catch (e) {
    throw new MissingAnnotation(`${annPath}: ${(e as Error).message}`);
  }
  if (!Array.isArray(ann.frames)) {
    throw new MissingAnnotation(`${annPath}: no frames array`);
  }

  ensureDir(outDir);
  const model = getModel(cfg);
  const records: FrameRecordJson[] = [];
  let skipped = 0;

  for (let i = 0; i < ann.frames.length; i++) {
    const frame = ann.frames[i];
    const id = frame.frame_id ?? `frame[${i}]`;
    try {
      const imageRel = requireField<string>(frame, "image", id);
      const maskRel = requireField<string>(frame, "mask", id);
      const depthRel = requireField<string>(frame, "depth", id);
      const scale = requireField<number>(frame, "depth_scale", id);
      const intr = requireField<Co3dFrame["intrinsics"]>(frame, "intrinsics", id)!;
      const extr = requireField<number[]>(frame, "extrinsics", id);
      if (extr.length !== 16) {
        throw new MissingAnnotation(`frame ${id}: extrinsics must be 16 values`);
      }
      for (const rel of [imageRel, maskRel, depthRel]) {
        if (!fs.existsSync(path.join(seqDir, rel))) {
          throw new MissingAnnotation(`frame ${id}: referenced file missing: ${rel}`);
        }
      }

      const img = readPng(path.join(seqDir, imageRel));
      const maskImg = readMaskPng(path.join(seqDir, maskRel));
      if (maskImg.width !== img.width || maskImg.height !== img.height) {
        throw new MissingAnnotation(`frame ${id}: mask size differs from image`);
      }
      const depth = loadDepth(seqDir, depthRel, scale, img.width, img.height);

      const out = extractFrame(
        img,
        maskImg.mask,
        cfg,
        outDir,
        id,
        depth,
        { ...intr, width: img.width, height: img.height },
        extr,
        model,
      );
      records.push(out.record);
    } catch (e) {
      if (e instanceof MissingAnnotation || (e as Error).name === "EmptyMask") {
        warn(`skipping ${id}: ${(e as Error).message}`);
        skipped += 1;
        continue;
      }
      throw e;
    }
  }

  const manifest: ManifestJson = {
    category: ann.category ?? "unlabeled",
    sequence_id: ann.sequence_id ?? path.basename(seqDir),
    canonical_alignment: null,
    frames: records,
  };
  const manifestPath = path.join(outDir, "manifest.json");
  writeManifest(manifestPath, manifest);
  return { manifestPath, converted: records.length, skipped };
}
