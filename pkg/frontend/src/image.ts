/**
 * PNG decoding plus the crop/resize preprocessing in front of the model.
 *
 * pngjs quirks worth knowing: 8-bit reads come back as RGBA byte buffers
 * regardless of source color type, and 16-bit reads (skipRescale) come
 * back as a Uint16Array that is a raw view of big-endian file bytes, so
 * values need a byte swap on little-endian hosts.
 */

import * as fs from "fs";
import { PNG } from "pngjs";

export interface RawImage {
  width: number;
  height: number;
  /** RGBA, stride 4 */
  rgba: Uint8Array;
}

export interface BBox {
  x: number;
  y: number;
  w: number;
  h: number;
}

export function readPng(path: string): RawImage {
  const png = PNG.sync.read(fs.readFileSync(path));
  return { width: png.width, height: png.height, rgba: new Uint8Array(png.data) };
}

/** Grayscale mask: any channel-0 value above 127 counts as object. */
export function readMaskPng(path: string): { width: number; height: number; mask: Uint8Array } {
  const img = readPng(path);
  const mask = new Uint8Array(img.width * img.height);
  for (let i = 0; i < mask.length; i++) mask[i] = img.rgba[i * 4] > 127 ? 1 : 0;
  return { width: img.width, height: img.height, mask };
}

const HOST_LITTLE_ENDIAN = new Uint8Array(new Uint16Array([1]).buffer)[0] === 1;

/** 16-bit grayscale depth PNG; 8-bit files are accepted and read as-is. */
export function readDepthPng(path: string): { width: number; height: number; values: Uint16Array } {
  const png = PNG.sync.read(fs.readFileSync(path), { skipRescale: true });
  const n = png.width * png.height;
  const values = new Uint16Array(n);
  const data = png.data as unknown as Uint8Array | Uint16Array;
  if (data instanceof Uint16Array) {
    for (let i = 0; i < n; i++) {
      const v = data[i * 4];
      values[i] = HOST_LITTLE_ENDIAN ? ((v & 0xff) << 8) | (v >>> 8) : v;
    }
  } else {
    for (let i = 0; i < n; i++) values[i] = data[i * 4];
  }
  return { width: png.width, height: png.height, values };
}

/** Tight bounding box of nonzero mask pixels; null when the mask is empty. */
export function maskBBox(mask: Uint8Array, width: number, height: number): BBox | null {
  let minX = width;
  let minY = height;
  let maxX = -1;
  let maxY = -1;
  for (let y = 0; y < height; y++) {
    const o = y * width;
    for (let x = 0; x < width; x++) {
      if (mask[o + x]) {
        if (x < minX) minX = x;
        if (x > maxX) maxX = x;
        if (y < minY) minY = y;
        if (y > maxY) maxY = y;
      }
    }
  }
  if (maxX < 0) return null;
  return { x: minX, y: minY, w: maxX - minX + 1, h: maxY - minY + 1 };
}

/** Expand a box by a fraction of its own extent per side, clamped to the image. */
export function padBBox(b: BBox, frac: number, width: number, height: number): BBox {
  const px = Math.round(b.w * frac);
  const py = Math.round(b.h * frac);
  const x0 = Math.max(0, b.x - px);
  const y0 = Math.max(0, b.y - py);
  const x1 = Math.min(width, b.x + b.w + px);
  const y1 = Math.min(height, b.y + b.h + py);
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
}

// standard ImageNet statistics, the ones the backbone family trains with
const MEAN = [0.485, 0.456, 0.406];
const STD = [0.229, 0.224, 0.225];

/**
 * Crop and bilinearly resize to side×side, returning normalized CHW
 * float32 ready for the patch embedding.
 */
export function cropResizeNormalize(img: RawImage, crop: BBox, side: number): Float32Array {
  const out = new Float32Array(3 * side * side);
  const sx = crop.w / side;
  const sy = crop.h / side;
  for (let oy = 0; oy < side; oy++) {
    const fy = (oy + 0.5) * sy - 0.5 + crop.y;
    const y0 = Math.max(0, Math.min(Math.floor(fy), img.height - 1));
    const y1 = Math.min(y0 + 1, img.height - 1);
    const wy = Math.min(Math.max(fy - y0, 0), 1);
    for (let ox = 0; ox < side; ox++) {
      const fx = (ox + 0.5) * sx - 0.5 + crop.x;
      const x0 = Math.max(0, Math.min(Math.floor(fx), img.width - 1));
      const x1 = Math.min(x0 + 1, img.width - 1);
      const wx = Math.min(Math.max(fx - x0, 0), 1);
      const o00 = (y0 * img.width + x0) * 4;
      const o01 = (y0 * img.width + x1) * 4;
      const o10 = (y1 * img.width + x0) * 4;
      const o11 = (y1 * img.width + x1) * 4;
      for (let c = 0; c < 3; c++) {
        const top = img.rgba[o00 + c] * (1 - wx) + img.rgba[o01 + c] * wx;
        const bot = img.rgba[o10 + c] * (1 - wx) + img.rgba[o11 + c] * wx;
        const v = (top * (1 - wy) + bot * wy) / 255.0;
        out[c * side * side + oy * side + ox] = (v - MEAN[c]) / STD[c];
      }
    }
  }
  return out;
}
