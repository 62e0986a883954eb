/**
 * Writers for the pose pipeline's on-disk formats.
 *
 * Byte layouts mirror the consumer exactly:
 *   .zpf — "ZPF1" | version u32 | h u32 | w u32 | dim u32 | flags u8 | pad[3]
 *          then h·w·dim float32 descriptors, h·w u8 foreground,
 *          h·w float32 saliency (flags always 0x03: mask + saliency present)
 *   .zdf — "ZDF1" | version u32 | h u32 | w u32
 *          then h·w float32 values, h·w u8 validity
 * All integers and floats little-endian. Writes are atomic (temp + rename)
 * so a crash never leaves a half file behind.
 */

import * as fs from "fs";
import * as path from "path";

const FORMAT_VERSION = 1;
const FLAG_MASK = 0x01;
const FLAG_SALIENCY = 0x02;

function atomicWrite(target: string, payload: Buffer): void {
  const tmp = `${target}.tmp-${process.pid}`;
  fs.writeFileSync(tmp, payload);
  fs.renameSync(tmp, target);
}

function floatsLE(values: Float32Array): Buffer {
  const buf = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) buf.writeFloatLE(values[i], i * 4);
  return buf;
}

export function writeFeatureFile(
  target: string,
  h: number,
  w: number,
  dim: number,
  descriptors: Float32Array,
  foreground: Uint8Array,
  saliency: Float32Array,
): void {
  if (descriptors.length !== h * w * dim) {
    throw new Error(`descriptor buffer is ${descriptors.length}, expected ${h * w * dim}`);
  }
  if (foreground.length !== h * w || saliency.length !== h * w) {
    throw new Error("foreground/saliency must be h*w");
  }
  const header = Buffer.alloc(24);
  header.write("ZPF1", 0, "ascii");
  header.writeUInt32LE(FORMAT_VERSION, 4);
  header.writeUInt32LE(h, 8);
  header.writeUInt32LE(w, 12);
  header.writeUInt32LE(dim, 16);
  header.writeUInt8(FLAG_MASK | FLAG_SALIENCY, 20);
  atomicWrite(
    target,
    Buffer.concat([header, floatsLE(descriptors), Buffer.from(foreground), floatsLE(saliency)]),
  );
}

export function writeDepthFile(
  target: string,
  h: number,
  w: number,
  values: Float32Array,
  valid: Uint8Array,
): void {
  if (values.length !== h * w || valid.length !== h * w) {
    throw new Error("depth values/validity must be h*w");
  }
  const header = Buffer.alloc(16);
  header.write("ZDF1", 0, "ascii");
  header.writeUInt32LE(FORMAT_VERSION, 4);
  header.writeUInt32LE(h, 8);
  header.writeUInt32LE(w, 12);
  atomicWrite(target, Buffer.concat([header, floatsLE(values), Buffer.from(valid)]));
}

export interface IntrinsicsJson {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface CropJson {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface FrameRecordJson {
  frame_id: string;
  feature_path: string;
  depth_path: string;
  intrinsics: IntrinsicsJson;
  /** 4×4 row-major, last row [0,0,0,1] */
  extrinsics: number[];
  crop: CropJson;
}

export interface ManifestJson {
  category: string;
  sequence_id: string;
  canonical_alignment: null;
  frames: FrameRecordJson[];
}

/** Sorted-key JSON so repeated conversions serialize identically. */
function stableJson(value: unknown, indent: string): string {
  if (value === null || typeof value !== "object") return JSON.stringify(value);
  const inner = indent + " ";
  if (Array.isArray(value)) {
    if (value.length === 0) return "[]";
    const items = value.map((v) => inner + stableJson(v, inner));
    return "[\n" + items.join(",\n") + "\n" + indent + "]";
  }
  const keys = Object.keys(value as Record<string, unknown>).sort();
  if (keys.length === 0) return "{}";
  const items = keys.map(
    (k) => `${inner}${JSON.stringify(k)}: ${stableJson((value as Record<string, unknown>)[k], inner)}`,
  );
  return "{\n" + items.join(",\n") + "\n" + indent + "}";
}

export function writeManifest(target: string, manifest: ManifestJson): void {
  atomicWrite(target, Buffer.from(stableJson(manifest, "") + "\n", "utf-8"));
}

export function identityExtrinsics(): number[] {
  return [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1];
}

export function ensureDir(dir: string): void {
  fs.mkdirSync(path.resolve(dir), { recursive: true });
}
