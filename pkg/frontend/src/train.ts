/**
 * Adam-driven teacher-forced training over chunked parallel-form forward
 * passes. Chunk phase is re-randomized every epoch so the model cannot
 * lock onto chunk-relative positions. Deterministic for a fixed seed.
 *
 * Validation replays the full token stream through the recurrent form with
 * continuous state (exactly how the online predictor consumes it) and
 * scores the positions past the chronological split.
 */

import { Dataset, FrequencyOracle, chunkSequenceAt } from "./dataset.js";
import {
  ModelConfig,
  Weights,
  backward,
  forwardParallel,
  forwardStepRecurrent,
  initWeights,
  parameterTensors,
  zeroLike,
  zeroState,
} from "./model.js";
import { Rng } from "./rng.js";

export interface TrainConfig {
  model: ModelConfig;
  epochs: number;
  learningRate: number;
  chunkLen: number;
  seed: number;
  splitFraction: number;
  logEvery?: number;
}

export interface TrainMetrics {
  epochs: number;
  chunks: number;
  finalTrainLoss: number;
  valTop1: number;
  valTop2: number;
  oracleTop1: number;
  oracleRatio: number;
  trainEvents: number;
  valEvents: number;
}

class Adam {
  private m: Float64Array[];
  private v: Float64Array[];
  private t = 0;
  constructor(
    private params: Float64Array[],
    private lr: number,
    private beta1 = 0.9,
    private beta2 = 0.999,
    private eps = 1e-8,
  ) {
    this.m = params.map((p) => new Float64Array(p.length));
    this.v = params.map((p) => new Float64Array(p.length));
  }

  step(grads: Float64Array[]): void {
    this.t++;
    const bc1 = 1 - this.beta1 ** this.t;
    const bc2 = 1 - this.beta2 ** this.t;
    for (let i = 0; i < this.params.length; i++) {
      const p = this.params[i];
      const g = grads[i];
      const m = this.m[i];
      const v = this.v[i];
      for (let j = 0; j < p.length; j++) {
        m[j] = this.beta1 * m[j] + (1 - this.beta1) * g[j];
        v[j] = this.beta2 * v[j] + (1 - this.beta2) * g[j] * g[j];
        p[j] -= (this.lr * (m[j] / bc1)) / (Math.sqrt(v[j] / bc2) + this.eps);
      }
    }
  }
}

/** Recurrent replay with carried state; scores predictions from `cut` on. */
export function replayAccuracy(
  w: Weights,
  addr: number[],
  pc: number[],
  cut: number,
): { top1: number; top2: number; scored: number } {
  const k = w.config.vocabSize;
  const state = zeroState(w.config);
  let n = 0;
  let hit1 = 0;
  let hit2 = 0;
  for (let t = 0; t + 1 < addr.length; t++) {
    const logits = forwardStepRecurrent(w, state, addr[t], pc[t]);
    if (t >= cut) {
      let best = 0;
      let second = -1;
      for (let j = 1; j < k; j++) {
        if (logits[j] > logits[best]) {
          second = best;
          best = j;
        } else if (second < 0 || logits[j] > logits[second]) {
          second = j;
        }
      }
      const label = addr[t + 1];
      if (best === label) {
        hit1++;
        hit2++;
      } else if (second === label) {
        hit2++;
      }
      n++;
    }
  }
  return { top1: n ? hit1 / n : 0, top2: n ? hit2 / n : 0, scored: n };
}

export function train(
  dataset: Dataset,
  cfg: TrainConfig,
): { weights: Weights; metrics: TrainMetrics } {
  if (cfg.model.vocabSize !== dataset.k) {
    throw new Error("model vocabulary does not match dataset K");
  }
  const rng = new Rng(cfg.seed);
  const weights = initWeights(cfg.model, rng);
  const params = parameterTensors(weights);
  const adam = new Adam(params, cfg.learningRate);

  let lastLoss = NaN;
  let chunkCount = 0;
  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    const offset = rng.int(cfg.chunkLen);
    const chunks = rng.shuffle(chunkSequenceAt(dataset.train, cfg.chunkLen, offset));
    chunkCount = chunks.length;
    let epochLoss = 0;
    for (const chunk of chunks) {
      const fwd = forwardParallel(weights, chunk.addr, chunk.pc);
      const grads = zeroLike(weights);
      const loss = backward(weights, chunk.addr, chunk.pc, chunk.labels, fwd, grads);
      if (!Number.isFinite(loss)) {
        throw new Error(`training diverged (loss ${loss}) at epoch ${epoch}`);
      }
      adam.step(parameterTensors(grads));
      epochLoss += loss;
    }
    lastLoss = epochLoss / chunks.length;
    if (cfg.logEvery && (epoch + 1) % cfg.logEvery === 0) {
      const acc = replayAccuracy(weights, dataset.fullAddr, dataset.fullPc, dataset.cut);
      console.error(
        `epoch ${epoch + 1}/${cfg.epochs} loss=${lastLoss.toFixed(4)} ` +
          `val.top1=${acc.top1.toFixed(3)}`,
      );
    }
  }

  const acc = replayAccuracy(weights, dataset.fullAddr, dataset.fullPc, dataset.cut);
  const oracle = new FrequencyOracle(dataset.k);
  oracle.fit(dataset.train);
  const oracleTop1 = oracle.accuracy(dataset.val);
  const metrics: TrainMetrics = {
    epochs: cfg.epochs,
    chunks: chunkCount,
    finalTrainLoss: lastLoss,
    valTop1: acc.top1,
    valTop2: acc.top2,
    oracleTop1,
    oracleRatio: oracleTop1 > 0 ? acc.top1 / oracleTop1 : acc.top1 > 0 ? Infinity : 1,
    trainEvents: dataset.train.addr.length,
    valEvents: dataset.val.addr.length,
  };
  return { weights, metrics };
}
