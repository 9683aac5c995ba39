/**
 * Tiny retention network: parallel (training) form with hand-written
 * gradients, plus a recurrent step used to cross-check the two forms.
 *
 * Math storage is Float64Array during training; export quantizes to f32.
 * The parallel retention interaction uses the decay-weighted
 * lower-triangular matrix D[i][j] = gamma^(i-j) for i >= j, 0 above.
 */

import { Rng } from "./rng.js";

export const RMSNORM_EPS = 1e-6;
const GELU_C = 0.7978845608028654; // sqrt(2/pi)
const GELU_A = 0.044715;

export interface ModelConfig {
  vocabSize: number;
  hiddenDim: number;
  layers: number;
  ffnMult: number;
  decays: number[];
}

export function defaultDecays(layers: number): number[] {
  return Array.from({ length: layers }, (_, l) => 1 - 2 ** -(5 + l));
}

export function defaultConfig(): ModelConfig {
  return { vocabSize: 64, hiddenDim: 8, layers: 2, ffnMult: 2, decays: defaultDecays(2) };
}

export function ffnDim(cfg: ModelConfig): number {
  return cfg.ffnMult * cfg.hiddenDim;
}

export function paramCount(cfg: ModelConfig): number {
  const { vocabSize: k, hiddenDim: d, layers } = cfg;
  const fd = ffnDim(cfg);
  return 2 * k * d + layers * (4 * d * d + 2 * d * fd) + d * k;
}

export interface LayerWeights {
  wq: Float64Array;
  wk: Float64Array;
  wv: Float64Array;
  wo: Float64Array;
  f1: Float64Array;
  f2: Float64Array;
}

export interface Weights {
  config: ModelConfig;
  eAddr: Float64Array;
  ePc: Float64Array;
  layers: LayerWeights[];
  head: Float64Array;
}

export function initWeights(cfg: ModelConfig, rng: Rng, scale = 0.02): Weights {
  const { vocabSize: k, hiddenDim: d } = cfg;
  const fd = ffnDim(cfg);
  const mat = (n: number) => {
    const a = new Float64Array(n);
    for (let i = 0; i < n; i++) a[i] = rng.gauss() * scale;
    return a;
  };
  return {
    config: cfg,
    eAddr: mat(k * d),
    ePc: mat(k * d),
    layers: Array.from({ length: cfg.layers }, () => ({
      wq: mat(d * d),
      wk: mat(d * d),
      wv: mat(d * d),
      wo: mat(d * d),
      f1: mat(d * fd),
      f2: mat(fd * d),
    })),
    head: mat(d * k),
  };
}

export function zeroLike(w: Weights): Weights {
  return {
    config: w.config,
    eAddr: new Float64Array(w.eAddr.length),
    ePc: new Float64Array(w.ePc.length),
    layers: w.layers.map((l) => ({
      wq: new Float64Array(l.wq.length),
      wk: new Float64Array(l.wk.length),
      wv: new Float64Array(l.wv.length),
      wo: new Float64Array(l.wo.length),
      f1: new Float64Array(l.f1.length),
      f2: new Float64Array(l.f2.length),
    })),
    head: new Float64Array(w.head.length),
  };
}

export function parameterTensors(w: Weights): Float64Array[] {
  const out: Float64Array[] = [w.eAddr, w.ePc];
  for (const l of w.layers) out.push(l.wq, l.wk, l.wv, l.wo, l.f1, l.f2);
  out.push(w.head);
  return out;
}

/** Round every parameter to its nearest float32 value (export precision). */
export function quantizeF32(w: Weights): Weights {
  const q = zeroLike(w);
  const src = parameterTensors(w);
  const dst = parameterTensors(q);
  for (let t = 0; t < src.length; t++) {
    for (let i = 0; i < src[t].length; i++) dst[t][i] = Math.fround(src[t][i]);
  }
  return q;
}

function gelu(x: number): number {
  const t = GELU_C * (x + GELU_A * x * x * x);
  return 0.5 * x * (1 + Math.tanh(t));
}

function geluGrad(x: number): number {
  const t = GELU_C * (x + GELU_A * x * x * x);
  const th = Math.tanh(t);
  return 0.5 * (1 + th) + 0.5 * x * (1 - th * th) * GELU_C * (1 + 3 * GELU_A * x * x);
}

/** C[T x n] = A[T x m] @ B[m x n] */
function matmul(a: Float64Array, b: Float64Array, T: number, m: number, n: number): Float64Array {
  const c = new Float64Array(T * n);
  for (let i = 0; i < T; i++) {
    const ai = i * m;
    const ci = i * n;
    for (let kk = 0; kk < m; kk++) {
      const av = a[ai + kk];
      if (av === 0) continue;
      const bk = kk * n;
      for (let j = 0; j < n; j++) c[ci + j] += av * b[bk + j];
    }
  }
  return c;
}

/** C[T x m] = A[T x n] @ B^T where B is [m x n] */
function matmulBT(a: Float64Array, b: Float64Array, T: number, n: number, m: number): Float64Array {
  const c = new Float64Array(T * m);
  for (let i = 0; i < T; i++) {
    const ai = i * n;
    const ci = i * m;
    for (let j = 0; j < m; j++) {
      const bj = j * n;
      let acc = 0;
      for (let kk = 0; kk < n; kk++) acc += a[ai + kk] * b[bj + kk];
      c[ci + j] = acc;
    }
  }
  return c;
}

/** accumulate C[m x n] += A^T @ B with A[T x m], B[T x n] */
function accumAtB(c: Float64Array, a: Float64Array, b: Float64Array, T: number, m: number, n: number): void {
  for (let t = 0; t < T; t++) {
    const at = t * m;
    const bt = t * n;
    for (let i = 0; i < m; i++) {
      const av = a[at + i];
      if (av === 0) continue;
      const ci = i * n;
      for (let j = 0; j < n; j++) c[ci + j] += av * b[bt + j];
    }
  }
}

function rmsnormRows(x: Float64Array, T: number, d: number): Float64Array {
  const y = new Float64Array(T * d);
  for (let t = 0; t < T; t++) {
    let ss = 0;
    const o = t * d;
    for (let i = 0; i < d; i++) ss += x[o + i] * x[o + i];
    const r = 1 / Math.sqrt(ss / d + RMSNORM_EPS);
    for (let i = 0; i < d; i++) y[o + i] = x[o + i] * r;
  }
  return y;
}

function rmsnormBackRows(dy: Float64Array, x: Float64Array, T: number, d: number): Float64Array {
  const dx = new Float64Array(T * d);
  for (let t = 0; t < T; t++) {
    const o = t * d;
    let ss = 0;
    for (let i = 0; i < d; i++) ss += x[o + i] * x[o + i];
    const r = Math.sqrt(ss / d + RMSNORM_EPS);
    let dot = 0;
    for (let i = 0; i < d; i++) dot += (dy[o + i] * x[o + i]) / r;
    for (let i = 0; i < d; i++) {
      dx[o + i] = (dy[o + i] - ((x[o + i] / r) * dot) / d) / r;
    }
  }
  return dx;
}

interface LayerCache {
  x0: Float64Array;
  u: Float64Array;
  q: Float64Array;
  k: Float64Array;
  v: Float64Array;
  a: Float64Array; // T x T, decay-masked interaction
  o: Float64Array;
  x1: Float64Array;
  w: Float64Array;
  g: Float64Array;
  h: Float64Array;
}

export interface ForwardCache {
  T: number;
  layers: LayerCache[];
  xFinal: Float64Array;
}

function decayPowers(gamma: number, T: number): Float64Array {
  const p = new Float64Array(T);
  p[0] = 1;
  for (let i = 1; i < T; i++) p[i] = p[i - 1] * gamma;
  return p;
}

export function forwardParallel(
  w: Weights,
  addrToks: number[] | Int32Array,
  pcToks: number[] | Int32Array,
): { logits: Float64Array; cache: ForwardCache } {
  const cfg = w.config;
  const d = cfg.hiddenDim;
  const fd = ffnDim(cfg);
  const K = cfg.vocabSize;
  const T = addrToks.length;
  let x = new Float64Array(T * d);
  for (let t = 0; t < T; t++) {
    const ea = addrToks[t] * d;
    const ep = pcToks[t] * d;
    for (let i = 0; i < d; i++) x[t * d + i] = w.eAddr[ea + i] + w.ePc[ep + i];
  }
  const layers: LayerCache[] = [];
  for (let l = 0; l < cfg.layers; l++) {
    const lw = w.layers[l];
    const gpow = decayPowers(cfg.decays[l], T);
    const x0 = x;
    const u = rmsnormRows(x0, T, d);
    const q = matmul(u, lw.wq, T, d, d);
    const k = matmul(u, lw.wk, T, d, d);
    const v = matmul(u, lw.wv, T, d, d);
    const a = new Float64Array(T * T);
    for (let i = 0; i < T; i++) {
      const qi = i * d;
      for (let j = 0; j <= i; j++) {
        const kj = j * d;
        let acc = 0;
        for (let c = 0; c < d; c++) acc += q[qi + c] * k[kj + c];
        a[i * T + j] = acc * gpow[i - j];
      }
    }
    const o = new Float64Array(T * d);
    for (let i = 0; i < T; i++) {
      for (let j = 0; j <= i; j++) {
        const av = a[i * T + j];
        if (av === 0) continue;
        const vj = j * d;
        for (let c = 0; c < d; c++) o[i * d + c] += av * v[vj + c];
      }
    }
    const r = matmul(o, lw.wo, T, d, d);
    const x1 = new Float64Array(T * d);
    for (let i = 0; i < T * d; i++) x1[i] = x0[i] + r[i];
    const wn = rmsnormRows(x1, T, d);
    const g = matmul(wn, lw.f1, T, d, fd);
    const h = new Float64Array(T * fd);
    for (let i = 0; i < T * fd; i++) h[i] = gelu(g[i]);
    const ffnOut = matmul(h, lw.f2, T, fd, d);
    const x2 = new Float64Array(T * d);
    for (let i = 0; i < T * d; i++) x2[i] = x1[i] + ffnOut[i];
    layers.push({ x0, u, q, k, v, a, o, x1, w: wn, g, h });
    x = x2;
  }
  const logits = matmul(x, w.head, T, d, K);
  return { logits, cache: { T, layers, xFinal: x } };
}

/**
 * Cross-entropy loss + full gradient accumulation into `grads`.
 * dLogits is scaled by 1/T (mean loss over the chunk).
 */
export function backward(
  w: Weights,
  addrToks: number[] | Int32Array,
  pcToks: number[] | Int32Array,
  labels: number[] | Int32Array,
  fwd: { logits: Float64Array; cache: ForwardCache },
  grads: Weights,
): number {
  const cfg = w.config;
  const d = cfg.hiddenDim;
  const fd = ffnDim(cfg);
  const K = cfg.vocabSize;
  const T = fwd.cache.T;
  const { logits } = fwd;

  let loss = 0;
  const dLogits = new Float64Array(T * K);
  for (let t = 0; t < T; t++) {
    const o = t * K;
    let mx = -Infinity;
    for (let j = 0; j < K; j++) mx = Math.max(mx, logits[o + j]);
    let z = 0;
    for (let j = 0; j < K; j++) z += Math.exp(logits[o + j] - mx);
    const logZ = Math.log(z) + mx;
    loss += logZ - logits[o + labels[t]];
    for (let j = 0; j < K; j++) {
      dLogits[o + j] = Math.exp(logits[o + j] - logZ) / T;
    }
    dLogits[o + labels[t]] -= 1 / T;
  }
  loss /= T;

  accumAtB(grads.head, fwd.cache.xFinal, dLogits, T, d, K);
  let dx = matmulBT(dLogits, w.head, T, K, d);

  for (let l = cfg.layers - 1; l >= 0; l--) {
    const lw = w.layers[l];
    const gw = grads.layers[l];
    const c = fwd.cache.layers[l];
    const gpow = decayPowers(cfg.decays[l], T);

    // FFN block: x2 = x1 + gelu(rmsnorm(x1) F1) F2
    const dH = matmulBT(dx, lw.f2, T, d, fd);
    accumAtB(gw.f2, c.h, dx, T, fd, d);
    const dG = new Float64Array(T * fd);
    for (let i = 0; i < T * fd; i++) dG[i] = dH[i] * geluGrad(c.g[i]);
    accumAtB(gw.f1, c.w, dG, T, d, fd);
    const dW = matmulBT(dG, lw.f1, T, fd, d);
    const dx1 = rmsnormBackRows(dW, c.x1, T, d);
    for (let i = 0; i < T * d; i++) dx1[i] += dx[i];

    // retention block: x1 = x0 + (A V) Wo with A = (QK^T) . D
    const dO = matmulBT(dx1, lw.wo, T, d, d);
    accumAtB(gw.wo, c.o, dx1, T, d, d);
    const dQ = new Float64Array(T * d);
    const dK = new Float64Array(T * d);
    const dV = new Float64Array(T * d);
    for (let i = 0; i < T; i++) {
      const di = i * d;
      for (let j = 0; j <= i; j++) {
        const dj = j * d;
        // dA[i,j] = dO_i . v_j ; dP = dA * D ; dV_j += A[i,j] dO_i
        let da = 0;
        const aij = c.a[i * T + j];
        for (let cc = 0; cc < d; cc++) {
          da += dO[di + cc] * c.v[dj + cc];
          dV[dj + cc] += aij * dO[di + cc];
        }
        const dp = da * gpow[i - j];
        for (let cc = 0; cc < d; cc++) {
          dQ[di + cc] += dp * c.k[dj + cc];
          dK[dj + cc] += dp * c.q[di + cc];
        }
      }
    }
    accumAtB(gw.wq, c.u, dQ, T, d, d);
    accumAtB(gw.wk, c.u, dK, T, d, d);
    accumAtB(gw.wv, c.u, dV, T, d, d);
    const dU = matmulBT(dQ, lw.wq, T, d, d);
    const dUk = matmulBT(dK, lw.wk, T, d, d);
    const dUv = matmulBT(dV, lw.wv, T, d, d);
    for (let i = 0; i < T * d; i++) dU[i] += dUk[i] + dUv[i];
    const dx0 = rmsnormBackRows(dU, c.x0, T, d);
    for (let i = 0; i < T * d; i++) dx0[i] += dx1[i];
    dx = dx0;
  }

  for (let t = 0; t < T; t++) {
    const ea = addrToks[t] * d;
    const ep = pcToks[t] * d;
    for (let i = 0; i < d; i++) {
      grads.eAddr[ea + i] += dx[t * d + i];
      grads.ePc[ep + i] += dx[t * d + i];
    }
  }
  return loss;
}

export interface RecurrentState {
  s: Float64Array[]; // per layer, d*d
}

export function zeroState(cfg: ModelConfig): RecurrentState {
  return { s: Array.from({ length: cfg.layers }, () => new Float64Array(cfg.hiddenDim ** 2)) };
}

/** One recurrent token step; numerically equivalent to the parallel form. */
export function forwardStepRecurrent(
  w: Weights,
  state: RecurrentState,
  addrTok: number,
  pcTok: number,
): Float64Array {
  const cfg = w.config;
  const d = cfg.hiddenDim;
  const fd = ffnDim(cfg);
  const K = cfg.vocabSize;
  const x = new Float64Array(d);
  for (let i = 0; i < d; i++) x[i] = w.eAddr[addrTok * d + i] + w.ePc[pcTok * d + i];
  const u = new Float64Array(d);
  const q = new Float64Array(d);
  const k = new Float64Array(d);
  const v = new Float64Array(d);
  for (let l = 0; l < cfg.layers; l++) {
    const lw = w.layers[l];
    const S = state.s[l];
    let ss = 0;
    for (let i = 0; i < d; i++) ss += x[i] * x[i];
    const r = 1 / Math.sqrt(ss / d + RMSNORM_EPS);
    for (let i = 0; i < d; i++) u[i] = x[i] * r;
    for (let j = 0; j < d; j++) {
      let aq = 0;
      let ak = 0;
      let av = 0;
      for (let i = 0; i < d; i++) {
        aq += u[i] * lw.wq[i * d + j];
        ak += u[i] * lw.wk[i * d + j];
        av += u[i] * lw.wv[i * d + j];
      }
      q[j] = aq;
      k[j] = ak;
      v[j] = av;
    }
    const g = cfg.decays[l];
    for (let i = 0; i < d; i++) {
      for (let j = 0; j < d; j++) {
        S[i * d + j] = g * S[i * d + j] + k[i] * v[j];
      }
    }
    const o = new Float64Array(d);
    for (let j = 0; j < d; j++) {
      let acc = 0;
      for (let i = 0; i < d; i++) acc += q[i] * S[i * d + j];
      o[j] = acc;
    }
    for (let j = 0; j < d; j++) {
      let acc = 0;
      for (let i = 0; i < d; i++) acc += o[i] * lw.wo[i * d + j];
      x[j] += acc;
    }
    let ss2 = 0;
    for (let i = 0; i < d; i++) ss2 += x[i] * x[i];
    const r2 = 1 / Math.sqrt(ss2 / d + RMSNORM_EPS);
    const h = new Float64Array(fd);
    for (let j = 0; j < fd; j++) {
      let acc = 0;
      for (let i = 0; i < d; i++) acc += x[i] * r2 * lw.f1[i * fd + j];
      h[j] = gelu(acc);
    }
    for (let j = 0; j < d; j++) {
      let acc = 0;
      for (let i = 0; i < fd; i++) acc += h[i] * lw.f2[i * d + j];
      x[j] += acc;
    }
  }
  const logits = new Float64Array(K);
  for (let j = 0; j < K; j++) {
    let acc = 0;
    for (let i = 0; i < d; i++) acc += x[i] * w.head[i * K + j];
    logits[j] = acc;
  }
  return logits;
}
