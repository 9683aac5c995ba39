/**
 * Trainer CLI.
 *
 *   train --misslog miss.mxt --out weights.mxw1
 *         [--fixture fixture.csv] [--metrics metrics.json]
 *         [--epochs 150] [--lr 0.01] [--seed 0] [--split 0.8]
 *         [--chunk 512] [--fixture-len 256] [--name label] [--verbose]
 *
 * Exports float32 weights in the MXW1 layout consumed by the inference
 * engine, an optional fixture CSV of reference logits for cross-checking,
 * and a metrics JSON including the frequency-oracle baseline.
 */

import { parseArgs } from "node:util";
import { buildDataset, tokenize } from "./dataset.js";
import { readTrace, writeFixtureCsv, writeMetrics, writeWeights } from "./format.js";
import { defaultConfig, forwardParallel, quantizeF32 } from "./model.js";
import { train } from "./train.js";

function fail(msg: string): never {
  console.error(`error: ${msg}`);
  process.exit(1);
}

export function main(argv: string[]): number {
  if (argv[0] !== "train") {
    fail(`unknown command ${argv[0] ?? "(none)"}; expected "train"`);
  }
  const { values } = parseArgs({
    args: argv.slice(1),
    options: {
      misslog: { type: "string" },
      out: { type: "string" },
      fixture: { type: "string" },
      metrics: { type: "string" },
      epochs: { type: "string", default: "150" },
      lr: { type: "string", default: "0.01" },
      seed: { type: "string", default: "0" },
      split: { type: "string", default: "0.8" },
      chunk: { type: "string", default: "512" },
      "fixture-len": { type: "string", default: "256" },
      name: { type: "string", default: "" },
      verbose: { type: "boolean", default: false },
    },
  });
  if (!values.misslog || !values.out) fail("--misslog and --out are required");

  const log = readTrace(values.misslog);
  const model = defaultConfig();
  const dataset = buildDataset(log, model.vocabSize, Number(values.split));
  const { weights, metrics } = train(dataset, {
    model,
    epochs: Number(values.epochs),
    learningRate: Number(values.lr),
    chunkLen: Number(values.chunk),
    seed: Number(values.seed),
    splitFraction: Number(values.split),
    logEvery: values.verbose ? 10 : undefined,
  });

  const exported = quantizeF32(weights);
  writeWeights(values.out, exported);
  console.error(
    `trained on ${dataset.train.addr.length} events: ` +
      `val.top1=${metrics.valTop1.toFixed(3)} oracle.top1=${metrics.oracleTop1.toFixed(3)}`,
  );

  if (values.fixture) {
    const toks = tokenize(log, model.vocabSize);
    const n = Math.min(Number(values["fixture-len"]), toks.addr.length);
    const addr = toks.addr.slice(0, n);
    const pc = toks.pc.slice(0, n);
    const { logits } = forwardParallel(exported, addr, pc);
    writeFixtureCsv(values.fixture, addr, pc, logits, model.vocabSize);
  }
  if (values.metrics) {
    writeMetrics(values.metrics, {
      name: values.name || undefined,
      k: model.vocabSize,
      hidden_dim: model.hiddenDim,
      layers: model.layers,
      seed: Number(values.seed),
      epochs: metrics.epochs,
      learning_rate: Number(values.lr),
      chunk_len: Number(values.chunk),
      split: Number(values.split),
      train_events: metrics.trainEvents,
      val_events: metrics.valEvents,
      final_train_loss: metrics.finalTrainLoss,
      val_top1: metrics.valTop1,
      val_top2: metrics.valTop2,
      oracle_top1: metrics.oracleTop1,
      oracle_ratio: metrics.oracleRatio,
    });
  }
  return 0;
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.ts") || entry.endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
