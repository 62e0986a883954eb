/**
 * Minimal dense math on Float32Array, shaped for transformer inference.
 *
 * The only hot path is matmulT; it keeps both operands in row-major
 * contiguous order (B pre-transposed) so the inner loop is two sequential
 * streams, which is what V8 vectorizes best. Accumulation is float64 and
 * results are rounded through Float32Array stores, so outputs are
 * deterministic.
 */

/** out[m×n] = a[m×k] · bt[n×k]ᵀ  (bt holds B transposed, row-major). */
export function matmulT(
  a: Float32Array,
  m: number,
  k: number,
  bt: Float32Array,
  n: number,
  out: Float32Array,
): void {
  const kEnd = k - 3;
  for (let i = 0; i < m; i++) {
    const ao = i * k;
    const oo = i * n;
    for (let j = 0; j < n; j++) {
      const bo = j * k;
      let s0 = 0;
      let s1 = 0;
      let s2 = 0;
      let s3 = 0;
      let kk = 0;
      for (; kk < kEnd; kk += 4) {
        s0 += a[ao + kk] * bt[bo + kk];
        s1 += a[ao + kk + 1] * bt[bo + kk + 1];
        s2 += a[ao + kk + 2] * bt[bo + kk + 2];
        s3 += a[ao + kk + 3] * bt[bo + kk + 3];
      }
      for (; kk < k; kk++) s0 += a[ao + kk] * bt[bo + kk];
      out[oo + j] = s0 + s1 + s2 + s3;
    }
  }
}

/** Row-wise bias add in place: x[m×n] += b[n]. */
export function addBias(x: Float32Array, m: number, n: number, b: Float32Array): void {
  for (let i = 0; i < m; i++) {
    const o = i * n;
    for (let j = 0; j < n; j++) x[o + j] += b[j];
  }
}

/** y[m×d] = layernorm(x) * gamma + beta, row-wise over d. */
export function layerNorm(
  x: Float32Array,
  m: number,
  d: number,
  gamma: Float32Array,
  beta: Float32Array,
  out: Float32Array,
  eps = 1e-6,
): void {
  for (let i = 0; i < m; i++) {
    const o = i * d;
    let mean = 0;
    for (let j = 0; j < d; j++) mean += x[o + j];
    mean /= d;
    let varAcc = 0;
    for (let j = 0; j < d; j++) {
      const c = x[o + j] - mean;
      varAcc += c * c;
    }
    const inv = 1.0 / Math.sqrt(varAcc / d + eps);
    for (let j = 0; j < d; j++) {
      out[o + j] = (x[o + j] - mean) * inv * gamma[j] + beta[j];
    }
  }
}

/** GELU (tanh approximation), in place. */
export function geluInPlace(x: Float32Array): void {
  const c = Math.sqrt(2.0 / Math.PI);
  for (let i = 0; i < x.length; i++) {
    const v = x[i];
    x[i] = 0.5 * v * (1.0 + Math.tanh(c * (v + 0.044715 * v * v * v)));
  }
}

/** Numerically-stable softmax over each row of x[m×n], in place. */
export function softmaxRows(x: Float32Array, m: number, n: number): void {
  for (let i = 0; i < m; i++) {
    const o = i * n;
    let max = -Infinity;
    for (let j = 0; j < n; j++) if (x[o + j] > max) max = x[o + j];
    let sum = 0;
    for (let j = 0; j < n; j++) {
      const e = Math.exp(x[o + j] - max);
      x[o + j] = e;
      sum += e;
    }
    for (let j = 0; j < n; j++) x[o + j] /= sum;
  }
}

/** x += y elementwise. */
export function addInPlace(x: Float32Array, y: Float32Array): void {
  for (let i = 0; i < x.length; i++) x[i] += y[i];
}
