/**
 * Deterministic random number generation for weight synthesis.
 *
 * Everything here must produce the same stream on every run and platform:
 * extraction output is required to be byte-identical across repeats, and
 * the default model weights are generated rather than downloaded.
 */

/** FNV-1a, folds an arbitrary string to a 32-bit seed. */
export function hashSeed(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

export type Rng = () => number;

/** mulberry32: tiny, well-distributed, returns floats in [0, 1). */
export function mulberry32(seed: number): Rng {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Standard normal via Box-Muller; one draw per call, spare cached. */
export function gaussian(rng: Rng): () => number {
  let spare: number | null = null;
  return () => {
    if (spare !== null) {
      const v = spare;
      spare = null;
      return v;
    }
    let u = 0;
    while (u === 0) u = rng(); // log(0) guard
    const r = Math.sqrt(-2.0 * Math.log(u));
    const theta = 2.0 * Math.PI * rng();
    spare = r * Math.sin(theta);
    return r * Math.cos(theta);
  };
}

/** Float32Array of normals with the given std, seeded by name. */
export function gaussianArray(name: string, n: number, std: number): Float32Array {
  const draw = gaussian(mulberry32(hashSeed(name)));
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) out[i] = draw() * std;
  return out;
}
