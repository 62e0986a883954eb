/**
 * Vision transformer (ViT-Small, patch 8) forward pass, CPU only.
 *
 * Inference runs up to a chosen block and stops after that block's qkv
 * projection: the per-head key vectors are the dense descriptors, and the
 * CLS query row against those keys gives the saliency attention. Nothing
 * downstream of that point is ever needed, so it is not computed.
 *
 * Weights are frozen. By default they are synthesized deterministically
 * from a seed string (this sandbox has no model zoo); a weights file in
 * the documented JSON format can be supplied instead, and any problem with
 * it raises ModelLoadFailure rather than silently falling back.
 */

import * as fs from "fs";

import { ModelLoadFailure } from "./errors";
import { gaussianArray } from "./rng";
import { addBias, addInPlace, layerNorm, geluInPlace, matmulT, softmaxRows } from "./tensor";

export interface VitConfig {
  patchSize: number;
  embedDim: number;
  numHeads: number;
  depth: number;
  mlpRatio: number;
  /** grid side the stored position table is laid out for */
  basePosGrid: number;
}

export const VIT_SMALL: VitConfig = {
  patchSize: 8,
  embedDim: 384,
  numHeads: 6,
  depth: 12,
  mlpRatio: 4,
  basePosGrid: 28,
};

interface BlockWeights {
  ln1Gamma: Float32Array;
  ln1Beta: Float32Array;
  /** [3·embed × embed], rows are output dims (pre-transposed for matmulT) */
  qkvW: Float32Array;
  qkvB: Float32Array;
  /** [embed × embed], pre-transposed */
  projW: Float32Array;
  projB: Float32Array;
  ln2Gamma: Float32Array;
  ln2Beta: Float32Array;
  /** [hidden × embed], pre-transposed */
  fc1W: Float32Array;
  fc1B: Float32Array;
  /** [embed × hidden], pre-transposed */
  fc2W: Float32Array;
  fc2B: Float32Array;
}

export interface VitModel {
  config: VitConfig;
  /** [embed × 3·p·p], rows are output channels */
  patchW: Float32Array;
  patchB: Float32Array;
  clsToken: Float32Array;
  /** [(basePosGrid² + 1) × embed] */
  posEmbed: Float32Array;
  blocks: BlockWeights[];
}

const WEIGHT_STD = 0.02;

function ones(n: number): Float32Array {
  return new Float32Array(n).fill(1.0);
}

/** Deterministic stand-in weights; same seed text → same model, always. */
export function seededModel(config: VitConfig, seedText: string, upToBlock: number): VitModel {
  const d = config.embedDim;
  const p = config.patchSize;
  const hidden = d * config.mlpRatio;
  const nPos = config.basePosGrid * config.basePosGrid + 1;
  const g = (name: string, n: number) => gaussianArray(`${seedText}/${name}`, n, WEIGHT_STD);

  const blocks: BlockWeights[] = [];
  for (let b = 0; b <= upToBlock; b++) {
    blocks.push({
      ln1Gamma: ones(d),
      ln1Beta: new Float32Array(d),
      qkvW: g(`block${b}/qkv.w`, 3 * d * d),
      qkvB: g(`block${b}/qkv.b`, 3 * d),
      projW: g(`block${b}/proj.w`, d * d),
      projB: g(`block${b}/proj.b`, d),
      ln2Gamma: ones(d),
      ln2Beta: new Float32Array(d),
      fc1W: g(`block${b}/fc1.w`, hidden * d),
      fc1B: g(`block${b}/fc1.b`, hidden),
      fc2W: g(`block${b}/fc2.w`, d * hidden),
      fc2B: g(`block${b}/fc2.b`, d),
    });
  }
  return {
    config,
    patchW: g("patch.w", d * 3 * p * p),
    patchB: g("patch.b", d),
    clsToken: g("cls", d),
    posEmbed: g("pos", nPos * d),
    blocks,
  };
}

interface TensorJson {
  shape: number[];
  data: string; // base64 of little-endian float32
}

function decodeTensor(name: string, t: TensorJson, expected: number): Float32Array {
  const raw = Buffer.from(t.data, "base64");
  if (raw.length !== expected * 4) {
    throw new ModelLoadFailure(
      `tensor ${name}: expected ${expected} floats, file has ${raw.length / 4}`,
    );
  }
  const out = new Float32Array(expected);
  for (let i = 0; i < expected; i++) out[i] = raw.readFloatLE(i * 4);
  return out;
}

/**
 * Load weights from a JSON file: {"format": "zspose-vit-v1", "tensors":
 * {name: {shape, data}}} with data as base64 little-endian float32.
 */
export function loadModel(path: string, config: VitConfig, upToBlock: number): VitModel {
  let obj: { format?: string; tensors?: Record<string, TensorJson> };
  try {
    obj = JSON.parse(fs.readFileSync(path, "utf-8"));
  } catch (e) {
    throw new ModelLoadFailure(`cannot read weights ${path}: ${(e as Error).message}`);
  }
  if (obj.format !== "zspose-vit-v1" || typeof obj.tensors !== "object" || obj.tensors === null) {
    throw new ModelLoadFailure(`${path}: not a zspose-vit-v1 weights file`);
  }
  const tensors = obj.tensors;
  const take = (name: string, expected: number): Float32Array => {
    const t = tensors[name];
    if (t === undefined) throw new ModelLoadFailure(`${path}: missing tensor ${name}`);
    return decodeTensor(name, t, expected);
  };

  const d = config.embedDim;
  const p = config.patchSize;
  const hidden = d * config.mlpRatio;
  const nPos = config.basePosGrid * config.basePosGrid + 1;
  const blocks: BlockWeights[] = [];
  for (let b = 0; b <= upToBlock; b++) {
    blocks.push({
      ln1Gamma: take(`block${b}/ln1.g`, d),
      ln1Beta: take(`block${b}/ln1.b`, d),
      qkvW: take(`block${b}/qkv.w`, 3 * d * d),
      qkvB: take(`block${b}/qkv.b`, 3 * d),
      projW: take(`block${b}/proj.w`, d * d),
      projB: take(`block${b}/proj.b`, d),
      ln2Gamma: take(`block${b}/ln2.g`, d),
      ln2Beta: take(`block${b}/ln2.b`, d),
      fc1W: take(`block${b}/fc1.w`, hidden * d),
      fc1B: take(`block${b}/fc1.b`, hidden),
      fc2W: take(`block${b}/fc2.w`, d * hidden),
      fc2B: take(`block${b}/fc2.b`, d),
    });
  }
  return {
    config,
    patchW: take("patch.w", d * 3 * p * p),
    patchB: take("patch.b", d),
    clsToken: take("cls", d),
    posEmbed: take("pos", nPos * d),
    blocks,
  };
}

/**
 * Position table for an arbitrary grid side: CLS row passes through,
 * the patch part is bilinearly resampled from the stored base grid.
 */
function resizePosEmbed(model: VitModel, gridSide: number): Float32Array {
  const d = model.config.embedDim;
  const base = model.config.basePosGrid;
  if (gridSide === base) return model.posEmbed;
  const out = new Float32Array((gridSide * gridSide + 1) * d);
  out.set(model.posEmbed.subarray(0, d), 0);
  const scale = gridSide > 1 ? (base - 1) / (gridSide - 1) : 0;
  for (let r = 0; r < gridSide; r++) {
    const sr = r * scale;
    const r0 = Math.min(Math.floor(sr), base - 1);
    const r1 = Math.min(r0 + 1, base - 1);
    const fr = sr - r0;
    for (let c = 0; c < gridSide; c++) {
      const sc = c * scale;
      const c0 = Math.min(Math.floor(sc), base - 1);
      const c1 = Math.min(c0 + 1, base - 1);
      const fc = sc - c0;
      const o = (1 + r * gridSide + c) * d;
      const o00 = (1 + r0 * base + c0) * d;
      const o01 = (1 + r0 * base + c1) * d;
      const o10 = (1 + r1 * base + c0) * d;
      const o11 = (1 + r1 * base + c1) * d;
      const pos = model.posEmbed;
      for (let j = 0; j < d; j++) {
        const top = pos[o00 + j] * (1 - fc) + pos[o01 + j] * fc;
        const bot = pos[o10 + j] * (1 - fc) + pos[o11 + j] * fc;
        out[o + j] = top * (1 - fr) + bot * fr;
      }
    }
  }
  return out;
}

export interface VitFeatures {
  /** per-patch key descriptors, [gridSide² × embed] row-major */
  keys: Float32Array;
  /** mean CLS→patch attention over heads, [gridSide²] */
  clsAttention: Float32Array;
  gridSide: number;
}

function runBlock(
  x: Float32Array,
  n: number,
  w: BlockWeights,
  cfg: VitConfig,
  scratch: { y: Float32Array; qkv: Float32Array; attnOut: Float32Array; hidden: Float32Array },
): void {
  const d = cfg.embedDim;
  const heads = cfg.numHeads;
  const dh = d / heads;
  const invSqrt = 1.0 / Math.sqrt(dh);
  const { y, qkv, attnOut } = scratch;

  layerNorm(x, n, d, w.ln1Gamma, w.ln1Beta, y);
  matmulT(y, n, d, w.qkvW, 3 * d, qkv);
  addBias(qkv, n, 3 * d, w.qkvB);

  const qh = new Float32Array(n * dh);
  const kh = new Float32Array(n * dh);
  const vt = new Float32Array(dh * n);
  const scores = new Float32Array(n * n);
  const outH = new Float32Array(n * dh);
  for (let h = 0; h < heads; h++) {
    const qOff = h * dh;
    const kOff = d + h * dh;
    const vOff = 2 * d + h * dh;
    for (let i = 0; i < n; i++) {
      const src = i * 3 * d;
      for (let j = 0; j < dh; j++) {
        qh[i * dh + j] = qkv[src + qOff + j] * invSqrt;
        kh[i * dh + j] = qkv[src + kOff + j];
        vt[j * n + i] = qkv[src + vOff + j];
      }
    }
    matmulT(qh, n, dh, kh, n, scores);
    softmaxRows(scores, n, n);
    matmulT(scores, n, n, vt, dh, outH);
    for (let i = 0; i < n; i++) {
      attnOut.set(outH.subarray(i * dh, (i + 1) * dh), i * d + h * dh);
    }
  }

  matmulT(attnOut, n, d, w.projW, d, y);
  addBias(y, n, d, w.projB);
  addInPlace(x, y);

  layerNorm(x, n, d, w.ln2Gamma, w.ln2Beta, y);
  matmulT(y, n, d, w.fc1W, d * cfg.mlpRatio, scratch.hidden);
  addBias(scratch.hidden, n, d * cfg.mlpRatio, w.fc1B);
  geluInPlace(scratch.hidden);
  matmulT(scratch.hidden, n, d * cfg.mlpRatio, w.fc2W, d, y);
  addBias(y, n, d, w.fc2B);
  addInPlace(x, y);
}

/**
 * Run the transformer on a normalized CHW image and return the target
 * block's key descriptors plus CLS attention. `pixels` is float32
 * [3 × side × side]; side must be a multiple of the patch size.
 */
export function extractKeys(model: VitModel, pixels: Float32Array, side: number): VitFeatures {
  const cfg = model.config;
  const p = cfg.patchSize;
  const d = cfg.embedDim;
  if (side % p !== 0) throw new Error(`side ${side} not a multiple of patch ${p}`);
  const gridSide = side / p;
  const nPatch = gridSide * gridSide;
  const n = nPatch + 1;
  const lastBlock = model.blocks.length - 1;

  // im2col: one row per patch, channel-major within the row
  const patchLen = 3 * p * p;
  const cols = new Float32Array(nPatch * patchLen);
  for (let pr = 0; pr < gridSide; pr++) {
    for (let pc = 0; pc < gridSide; pc++) {
      const row = (pr * gridSide + pc) * patchLen;
      for (let c = 0; c < 3; c++) {
        const plane = c * side * side;
        for (let py = 0; py < p; py++) {
          const src = plane + (pr * p + py) * side + pc * p;
          const dst = row + c * p * p + py * p;
          for (let px = 0; px < p; px++) cols[dst + px] = pixels[src + px];
        }
      }
    }
  }

  const x = new Float32Array(n * d);
  matmulT(cols, nPatch, patchLen, model.patchW, d, x.subarray(d));
  addBias(x.subarray(d), nPatch, d, model.patchB);
  x.set(model.clsToken, 0);
  addInPlace(x, resizePosEmbed(model, gridSide).subarray(0, n * d));

  const scratch = {
    y: new Float32Array(n * d),
    qkv: new Float32Array(n * 3 * d),
    attnOut: new Float32Array(n * d),
    hidden: new Float32Array(n * d * cfg.mlpRatio),
  };
  for (let b = 0; b < lastBlock; b++) runBlock(x, n, model.blocks[b], cfg, scratch);

  // target block: stop after qkv — keys are the descriptors, q_cls·k the saliency
  const w = model.blocks[lastBlock];
  layerNorm(x, n, d, w.ln1Gamma, w.ln1Beta, scratch.y);
  matmulT(scratch.y, n, d, w.qkvW, 3 * d, scratch.qkv);
  addBias(scratch.qkv, n, 3 * d, w.qkvB);

  const keys = new Float32Array(nPatch * d);
  for (let i = 0; i < nPatch; i++) {
    keys.set(scratch.qkv.subarray((i + 1) * 3 * d + d, (i + 1) * 3 * d + 2 * d), i * d);
  }

  const heads = cfg.numHeads;
  const dh = d / heads;
  const invSqrt = 1.0 / Math.sqrt(dh);
  const clsAttention = new Float32Array(nPatch);
  const logits = new Float32Array(n);
  for (let h = 0; h < heads; h++) {
    for (let i = 0; i < n; i++) {
      let s = 0;
      for (let j = 0; j < dh; j++) {
        s += scratch.qkv[h * dh + j] * scratch.qkv[i * 3 * d + d + h * dh + j];
      }
      logits[i] = s * invSqrt;
    }
    softmaxRows(logits, 1, n);
    for (let i = 0; i < nPatch; i++) clsAttention[i] += logits[i + 1] / heads;
  }

  return { keys, clsAttention, gridSide };
}
