/** Shared fixture builders: deterministic synthetic PNGs and python interop. */

import { execFileSync } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { PNG } from "pngjs";

export function tmpDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), `${prefix}-`));
}

/** Write an 8-bit RGBA PNG from a per-pixel RGB function. */
export function writeRgbPng(
  target: string,
  width: number,
  height: number,
  rgb: (x: number, y: number) => [number, number, number],
): void {
  const png = new PNG({ width, height });
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const [r, g, b] = rgb(x, y);
      const o = (y * width + x) * 4;
      png.data[o] = r;
      png.data[o + 1] = g;
      png.data[o + 2] = b;
      png.data[o + 3] = 255;
    }
  }
  fs.writeFileSync(target, PNG.sync.write(png));
}

/** Write a 16-bit grayscale PNG from a per-pixel u16 function. */
export function writeGray16Png(
  target: string,
  width: number,
  height: number,
  value: (x: number, y: number) => number,
): void {
  const png = new PNG({
    width,
    height,
    colorType: 0,
    bitDepth: 16,
    inputColorType: 0,
    inputHasAlpha: false,
  });
  const buf = Buffer.alloc(width * height * 2);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      buf.writeUInt16BE(value(x, y) & 0xffff, (y * width + x) * 2);
    }
  }
  png.data = buf;
  fs.writeFileSync(
    target,
    PNG.sync.write(png, { colorType: 0, bitDepth: 16, inputColorType: 0, inputHasAlpha: false }),
  );
}

export interface SceneSpec {
  width: number;
  height: number;
  cx: number;
  cy: number;
  rx: number;
  ry: number;
  /** texture phase, varies per view */
  phase: number;
}

export function insideEllipse(s: SceneSpec, x: number, y: number): boolean {
  const dx = (x - s.cx) / s.rx;
  const dy = (y - s.cy) / s.ry;
  return dx * dx + dy * dy <= 1.0;
}

/** Textured ellipse on a dark gradient background. */
export function sceneRgb(s: SceneSpec): (x: number, y: number) => [number, number, number] {
  return (x, y) => {
    if (insideEllipse(s, x, y)) {
      const t = Math.sin(0.35 * x + s.phase) * Math.cos(0.3 * y - s.phase);
      const u = Math.sin(0.22 * (x + y) + 2.0 * s.phase);
      return [
        Math.round(150 + 90 * t),
        Math.round(120 + 80 * u),
        Math.round(100 + 60 * t * u),
      ];
    }
    return [Math.round((20 * x) / s.width), Math.round((25 * y) / s.height), 30];
  };
}

export function maskRgb(s: SceneSpec): (x: number, y: number) => [number, number, number] {
  return (x, y) => (insideEllipse(s, x, y) ? [255, 255, 255] : [0, 0, 0]);
}

/** Run a python snippet against the installed primary package; throws on nonzero exit. */
export function runPython(script: string, stdin?: string): string {
  return execFileSync("python3", ["-c", script], {
    encoding: "utf-8",
    input: stdin,
    timeout: 120_000,
  });
}

/** Row-major 4×4 for a rotation about +y by `angle`, no translation. */
export function yRotationExtrinsics(angle: number, tz = 0): number[] {
  const c = Math.cos(angle);
  const s = Math.sin(angle);
  return [c, 0, s, 0, 0, 1, 0, 0, -s, 0, c, tz, 0, 0, 0, 1];
}
