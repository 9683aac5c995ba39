/**
 * Binary interchange with the simulator side: MXT1 miss logs in, MXW1
 * weights out, plus the fixture CSV of reference logits and a metrics JSON.
 */

import * as fs from "node:fs";
import { Weights, ModelConfig, ffnDim, paramCount } from "./model.js";

export interface MissLog {
  kind: number; // 0 full-access, 1 miss-log
  pageSizeBits: number;
  capacityFraction: number;
  vpns: bigint[];
  pcs: bigint[];
}

export function readTrace(path: string): MissLog {
  const buf = fs.readFileSync(path);
  if (buf.length < 16 || buf.toString("latin1", 0, 4) !== "MXT1") {
    throw new Error(`not an MXT1 trace: ${path}`);
  }
  const version = buf.readUInt8(4);
  if (version !== 1) throw new Error(`unsupported trace version ${version}`);
  const kind = buf.readUInt8(5);
  const pageSizeBits = buf.readUInt8(6);
  const capacityFraction = buf.readFloatLE(8);
  const body = buf.length - 16;
  if (body % 16 !== 0) throw new Error(`truncated record in ${path}`);
  const n = body / 16;
  const vpns: bigint[] = new Array(n);
  const pcs: bigint[] = new Array(n);
  for (let i = 0; i < n; i++) {
    vpns[i] = buf.readBigUInt64LE(16 + 16 * i);
    pcs[i] = buf.readBigUInt64LE(24 + 16 * i);
  }
  return { kind, pageSizeBits, capacityFraction, vpns, pcs };
}

export function writeWeights(path: string, w: Weights): void {
  fs.writeFileSync(path, weightsToBytes(w));
}

export function weightsToBytes(w: Weights): Buffer {
  const cfg = w.config;
  const total = 12 + 4 * cfg.layers + 4 * paramCount(cfg);
  const buf = Buffer.alloc(total);
  buf.write("MXW1", 0, "latin1");
  buf.writeUInt8(1, 4);
  buf.writeUInt8(cfg.layers, 5);
  buf.writeUInt16LE(cfg.vocabSize, 6);
  buf.writeUInt16LE(cfg.hiddenDim, 8);
  buf.writeUInt16LE(cfg.ffnMult, 10);
  let off = 12;
  for (const g of cfg.decays) {
    buf.writeFloatLE(g, off);
    off += 4;
  }
  const writeArr = (a: Float64Array) => {
    for (let i = 0; i < a.length; i++) {
      buf.writeFloatLE(a[i], off);
      off += 4;
    }
  };
  writeArr(w.eAddr);
  writeArr(w.ePc);
  for (const l of w.layers) {
    writeArr(l.wq);
    writeArr(l.wk);
    writeArr(l.wv);
    writeArr(l.wo);
    writeArr(l.f1);
    writeArr(l.f2);
  }
  writeArr(w.head);
  if (off !== total) throw new Error("weight serialization size mismatch");
  return buf;
}

export function readWeights(path: string): Weights {
  const buf = fs.readFileSync(path);
  if (buf.toString("latin1", 0, 4) !== "MXW1") throw new Error(`not MXW1: ${path}`);
  if (buf.readUInt8(4) !== 1) throw new Error("unsupported weights version");
  const layers = buf.readUInt8(5);
  const vocabSize = buf.readUInt16LE(6);
  const hiddenDim = buf.readUInt16LE(8);
  const ffnMult = buf.readUInt16LE(10);
  let off = 12;
  const decays: number[] = [];
  for (let l = 0; l < layers; l++) {
    decays.push(buf.readFloatLE(off));
    off += 4;
  }
  const cfg: ModelConfig = { vocabSize, hiddenDim, layers, ffnMult, decays };
  const fd = ffnDim(cfg);
  const readArr = (n: number) => {
    const a = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      a[i] = buf.readFloatLE(off);
      off += 4;
    }
    return a;
  };
  const d = hiddenDim;
  const w: Weights = {
    config: cfg,
    eAddr: readArr(vocabSize * d),
    ePc: readArr(vocabSize * d),
    layers: Array.from({ length: layers }, () => ({
      wq: readArr(d * d),
      wk: readArr(d * d),
      wv: readArr(d * d),
      wo: readArr(d * d),
      f1: readArr(d * fd),
      f2: readArr(fd * d),
    })),
    head: readArr(d * vocabSize),
  };
  if (off !== buf.length) throw new Error("trailing bytes in weights file");
  return w;
}

/** Fixture CSV: position, addr_tok, pc_tok, then one column per logit. */
export function writeFixtureCsv(
  path: string,
  addrToks: number[],
  pcToks: number[],
  logits: Float64Array,
  k: number,
): void {
  const lines: string[] = [];
  const header = ["position", "addr_tok", "pc_tok"];
  for (let j = 0; j < k; j++) header.push(`logit${j}`);
  lines.push(header.join(","));
  for (let t = 0; t < addrToks.length; t++) {
    const row = [String(t), String(addrToks[t]), String(pcToks[t])];
    for (let j = 0; j < k; j++) row.push(logits[t * k + j].toPrecision(9));
    lines.push(row.join(","));
  }
  fs.writeFileSync(path, lines.join("\n") + "\n");
}

export function writeMetrics(path: string, metrics: object): void {
  fs.writeFileSync(path, JSON.stringify(metrics, Object.keys(metrics).sort(), 2) + "\n");
}
