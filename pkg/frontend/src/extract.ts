/**
 * Turns an image + object mask into the pose pipeline's feature grid:
 * crop to the padded mask box, resize, run the frozen backbone, build
 * log-binned descriptors, and derive saliency/foreground from the CLS
 * attention. Output is written in the pipeline's binary formats.
 */

import * as path from "path";

import { EmptyMask } from "./errors";
import {
  BBox,
  RawImage,
  cropResizeNormalize,
  maskBBox,
  padBBox,
} from "./image";
import {
  CropJson,
  FrameRecordJson,
  IntrinsicsJson,
  identityExtrinsics,
  writeDepthFile,
  writeFeatureFile,
} from "./formats";
import { VIT_SMALL, VitModel, extractKeys, loadModel, seededModel } from "./vit";

export interface ExtractionConfig {
  variant: "vit-small";
  /** transformer block whose keys become the descriptors */
  layerIndex: number;
  facet: "key";
  /** model input resolution; must be a multiple of the patch size */
  inputSide: number;
  /** ascending Chebyshev radii of the context rings; first entry must be 0 */
  logBinRadii: number[];
  /** foreground = saliency ≥ this fraction of the per-image max */
  saliencyThreshold: number;
  /** bounding-box padding as a fraction of the box extent, per side */
  cropPadding: number;
  /** optional weights file; when absent, weights are synthesized from the seed */
  weightsPath?: string;
  weightsSeed: string;
}

export const DEFAULT_CONFIG: ExtractionConfig = {
  variant: "vit-small",
  layerIndex: 9,
  facet: "key",
  inputSide: 224,
  logBinRadii: [0, 1, 3],
  saliencyThreshold: 0.5,
  cropPadding: 0.1,
  weightsSeed: "zspose-extract-v1",
};

export function validateConfig(cfg: ExtractionConfig): void {
  if (cfg.inputSide < VIT_SMALL.patchSize || cfg.inputSide % VIT_SMALL.patchSize !== 0) {
    throw new Error(
      `inputSide ${cfg.inputSide} must be a positive multiple of patch ${VIT_SMALL.patchSize}`,
    );
  }
  if (cfg.layerIndex < 0 || cfg.layerIndex >= VIT_SMALL.depth) {
    throw new Error(`layerIndex ${cfg.layerIndex} out of range for depth ${VIT_SMALL.depth}`);
  }
  const r = cfg.logBinRadii;
  if (r.length === 0 || r[0] !== 0) {
    throw new Error("logBinRadii must start at 0 (the cell itself)");
  }
  for (let i = 1; i < r.length; i++) {
    if (r[i] <= r[i - 1]) throw new Error("logBinRadii must be strictly increasing");
  }
  if (!(cfg.saliencyThreshold > 0 && cfg.saliencyThreshold <= 1)) {
    throw new Error("saliencyThreshold must be in (0, 1]");
  }
  if (!(cfg.cropPadding >= 0)) throw new Error("cropPadding must be non-negative");
}

/** Fresh model instance for this config; no caching. */
export function buildModel(cfg: ExtractionConfig): VitModel {
  validateConfig(cfg);
  if (cfg.weightsPath !== undefined) {
    return loadModel(cfg.weightsPath, VIT_SMALL, cfg.layerIndex);
  }
  return seededModel(VIT_SMALL, cfg.weightsSeed, cfg.layerIndex);
}

const modelCache = new Map<string, VitModel>();

/** Model for this config, memoized — weight synthesis is not free. */
export function getModel(cfg: ExtractionConfig): VitModel {
  const key = `${cfg.weightsPath ?? `seed:${cfg.weightsSeed}`}#${cfg.layerIndex}`;
  let m = modelCache.get(key);
  if (m === undefined) {
    m = buildModel(cfg);
    modelCache.set(key, m);
  }
  return m;
}

/**
 * Concatenate ring-averaged context onto each cell's own descriptor.
 * Level 0 is the cell itself; level ℓ averages cells whose Chebyshev
 * distance lies in (radii[ℓ-1], radii[ℓ]]. Rings clipped away at the
 * border average over what remains; fully clipped rings contribute zeros.
 */
export function logBinDescriptors(
  keys: Float32Array,
  gridSide: number,
  dim: number,
  radii: number[],
): Float32Array {
  const levels = radii.length;
  const n = gridSide * gridSide;
  const out = new Float32Array(n * dim * levels);
  const acc = new Float64Array(dim);
  for (let r = 0; r < gridSide; r++) {
    for (let c = 0; c < gridSide; c++) {
      const cell = r * gridSide + c;
      const base = cell * dim * levels;
      out.set(keys.subarray(cell * dim, (cell + 1) * dim), base);
      for (let level = 1; level < levels; level++) {
        const lo = radii[level - 1];
        const hi = radii[level];
        acc.fill(0);
        let count = 0;
        for (let dr = -hi; dr <= hi; dr++) {
          const rr = r + dr;
          if (rr < 0 || rr >= gridSide) continue;
          for (let dc = -hi; dc <= hi; dc++) {
            const cheb = Math.max(Math.abs(dr), Math.abs(dc));
            if (cheb <= lo) continue;
            const cc = c + dc;
            if (cc < 0 || cc >= gridSide) continue;
            const o = (rr * gridSide + cc) * dim;
            for (let j = 0; j < dim; j++) acc[j] += keys[o + j];
            count++;
          }
        }
        const dst = base + level * dim;
        if (count > 0) {
          for (let j = 0; j < dim; j++) out[dst + j] = acc[j] / count;
        }
      }
    }
  }
  return out;
}

export interface FrameFeatures {
  gridSide: number;
  dim: number;
  descriptors: Float32Array;
  foreground: Uint8Array;
  saliency: Float32Array;
  crop: BBox;
}

/**
 * Run the full single-frame path up to (but not including) file writes.
 * Raises EmptyMask when the mask has no object pixels.
 */
export function extractFrameFeatures(
  img: RawImage,
  mask: Uint8Array,
  cfg: ExtractionConfig,
  model?: VitModel,
): FrameFeatures {
  validateConfig(cfg);
  if (mask.length !== img.width * img.height) {
    throw new Error(`mask is ${mask.length} pixels, image is ${img.width}x${img.height}`);
  }
  const box = maskBBox(mask, img.width, img.height);
  if (box === null) throw new EmptyMask("mask has no object pixels");
  const crop = padBBox(box, cfg.cropPadding, img.width, img.height);

  const pixels = cropResizeNormalize(img, crop, cfg.inputSide);
  const m = model ?? getModel(cfg);
  const feats = extractKeys(m, pixels, cfg.inputSide);

  const dim = m.config.embedDim * cfg.logBinRadii.length;
  const descriptors = logBinDescriptors(
    feats.keys,
    feats.gridSide,
    m.config.embedDim,
    cfg.logBinRadii,
  );

  // attention is strictly positive after softmax, so max > 0 always
  let max = 0;
  for (let i = 0; i < feats.clsAttention.length; i++) {
    if (feats.clsAttention[i] > max) max = feats.clsAttention[i];
  }
  const saliency = new Float32Array(feats.clsAttention.length);
  const foreground = new Uint8Array(saliency.length);
  for (let i = 0; i < saliency.length; i++) {
    saliency[i] = feats.clsAttention[i] / max;
    foreground[i] = saliency[i] >= cfg.saliencyThreshold ? 1 : 0;
  }

  return { gridSide: feats.gridSide, dim, descriptors, foreground, saliency, crop };
}

export interface DepthInput {
  width: number;
  height: number;
  values: Float32Array;
  valid: Uint8Array;
}

export interface FrameOutput {
  record: FrameRecordJson;
  featurePath: string;
  depthPath: string;
}

function defaultIntrinsics(img: RawImage): IntrinsicsJson {
  // plausible pinhole for unannotated images: focal = long side, centered
  const f = Math.max(img.width, img.height);
  return {
    fx: f,
    fy: f,
    cx: img.width / 2,
    cy: img.height / 2,
    width: img.width,
    height: img.height,
  };
}

/**
 * Extract one frame and write its .zpf/.zdf next to each other in outDir.
 * Without a real depth map a unit-depth placeholder is written so the
 * output is still a loadable sequence; real conversions always supply one.
 */
export function extractFrame(
  img: RawImage,
  mask: Uint8Array,
  cfg: ExtractionConfig,
  outDir: string,
  frameId: string,
  depth?: DepthInput,
  intrinsics?: IntrinsicsJson,
  extrinsics?: number[],
  model?: VitModel,
): FrameOutput {
  const feats = extractFrameFeatures(img, mask, cfg, model);
  const featureName = `${frameId}.zpf`;
  const depthName = `${frameId}.zdf`;
  const featurePath = path.join(outDir, featureName);
  const depthPath = path.join(outDir, depthName);

  writeFeatureFile(
    featurePath,
    feats.gridSide,
    feats.gridSide,
    feats.dim,
    feats.descriptors,
    feats.foreground,
    feats.saliency,
  );

  if (depth !== undefined) {
    writeDepthFile(depthPath, depth.height, depth.width, depth.values, depth.valid);
  } else {
    const n = img.width * img.height;
    writeDepthFile(
      depthPath,
      img.height,
      img.width,
      new Float32Array(n).fill(1.0),
      new Uint8Array(n).fill(1),
    );
  }

  const crop: CropJson = {
    x: feats.crop.x,
    y: feats.crop.y,
    w: feats.crop.w,
    h: feats.crop.h,
  };
  return {
    record: {
      frame_id: frameId,
      feature_path: featureName,
      depth_path: depthName,
      intrinsics: intrinsics ?? defaultIntrinsics(img),
      extrinsics: extrinsics ?? identityExtrinsics(),
      crop,
    },
    featurePath,
    depthPath,
  };
}
