import { describe, expect, it } from "vitest";
import {
  backward,
  defaultConfig,
  defaultDecays,
  forwardParallel,
  forwardStepRecurrent,
  initWeights,
  ModelConfig,
  paramCount,
  parameterTensors,
  quantizeF32,
  zeroLike,
  zeroState,
} from "../src/model.js";
import { Rng } from "../src/rng.js";

function randomTokens(rng: Rng, k: number, n: number) {
  const addr = Array.from({ length: n }, () => rng.int(k));
  const pc = Array.from({ length: n }, () => rng.int(k));
  return { addr, pc };
}

describe("config", () => {
  it("default parameter budget is 2560", () => {
    expect(paramCount(defaultConfig())).toBe(2560);
  });

  it("decay schedule halves the gap per layer", () => {
    expect(defaultDecays(2)).toEqual([1 - 2 ** -5, 1 - 2 ** -6]);
  });
});

describe("parallel vs recurrent equivalence", () => {
  it("length-1 sequence equals a single recurrent step", () => {
    const cfg = defaultConfig();
    const w = initWeights(cfg, new Rng(1));
    const par = forwardParallel(w, [5], [9]).logits;
    const rec = forwardStepRecurrent(w, zeroState(cfg), 5, 9);
    for (let j = 0; j < cfg.vocabSize; j++) {
      expect(Math.abs(par[j] - rec[j])).toBeLessThan(1e-12);
    }
  });

  it("length-128 stream stays within 1e-4", () => {
    const cfg = defaultConfig();
    const w = initWeights(cfg, new Rng(2));
    const rng = new Rng(3);
    const { addr, pc } = randomTokens(rng, cfg.vocabSize, 128);
    const par = forwardParallel(w, addr, pc).logits;
    const state = zeroState(cfg);
    let worst = 0;
    for (let t = 0; t < addr.length; t++) {
      const rec = forwardStepRecurrent(w, state, addr[t], pc[t]);
      for (let j = 0; j < cfg.vocabSize; j++) {
        worst = Math.max(worst, Math.abs(par[t * cfg.vocabSize + j] - rec[j]));
      }
    }
    expect(worst).toBeLessThanOrEqual(1e-4);
  });

  it("gamma=0 makes each position depend only on its own token", () => {
    const cfg: ModelConfig = { ...defaultConfig(), decays: [0, 0] };
    const w = initWeights(cfg, new Rng(4));
    const a = forwardParallel(w, [7, 3, 7], [1, 2, 1]).logits;
    const k = cfg.vocabSize;
    for (let j = 0; j < k; j++) {
      expect(a[0 * k + j]).toBeCloseTo(a[2 * k + j], 12);
    }
  });
});

describe("backward", () => {
  it("matches numerical gradients on a tiny model", () => {
    const cfg: ModelConfig = {
      vocabSize: 8,
      hiddenDim: 4,
      layers: 2,
      ffnMult: 2,
      decays: defaultDecays(2),
    };
    const w = initWeights(cfg, new Rng(5), 0.3);
    const rng = new Rng(6);
    const { addr, pc } = randomTokens(rng, cfg.vocabSize, 6);
    const labels = Array.from({ length: 6 }, () => rng.int(cfg.vocabSize));

    const lossAt = () => {
      const fwd = forwardParallel(w, addr, pc);
      return backward(w, addr, pc, labels, fwd, zeroLike(w));
    };
    const grads = zeroLike(w);
    backward(w, addr, pc, labels, forwardParallel(w, addr, pc), grads);

    const params = parameterTensors(w);
    const analytic = parameterTensors(grads);
    const eps = 1e-5;
    let checked = 0;
    const probe = new Rng(7);
    for (let t = 0; t < params.length; t++) {
      for (let trial = 0; trial < 4; trial++) {
        const i = probe.int(params[t].length);
        const orig = params[t][i];
        params[t][i] = orig + eps;
        const up = lossAt();
        params[t][i] = orig - eps;
        const down = lossAt();
        params[t][i] = orig;
        const numeric = (up - down) / (2 * eps);
        expect(Math.abs(numeric - analytic[t][i])).toBeLessThan(
          1e-4 * Math.max(1, Math.abs(numeric)),
        );
        checked++;
      }
    }
    expect(checked).toBeGreaterThan(30);
  });
});

describe("quantization", () => {
  it("rounds every value to float32", () => {
    const w = initWeights(defaultConfig(), new Rng(8));
    const q = quantizeF32(w);
    for (const t of parameterTensors(q)) {
      for (let i = 0; i < t.length; i++) {
        expect(t[i]).toBe(Math.fround(t[i]));
      }
    }
  });
});
