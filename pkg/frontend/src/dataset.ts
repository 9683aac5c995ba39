/**
 * Dataset construction from a miss log: tokenize (vpn mod K, pc mod K),
 * label each position with the NEXT address token, and split
 * chronologically (train = prefix) so no future information leaks backward.
 */

import { MissLog } from "./format.js";

export interface TokenSequence {
  addr: number[];
  pc: number[];
  /** labels[i] is the next address token after position i */
  labels: number[];
}

export interface Dataset {
  k: number;
  train: TokenSequence;
  val: TokenSequence;
  /** full tokenized stream (train + val) and the split index, for
   *  continuous-context evaluation by recurrent replay */
  fullAddr: number[];
  fullPc: number[];
  cut: number;
}

export function tokenize(log: MissLog, k: number): { addr: number[]; pc: number[] } {
  const kb = BigInt(k);
  const addr = log.vpns.map((v) => Number(v % kb));
  const pc = log.pcs.map((v) => Number(v % kb));
  return { addr, pc };
}

function toSequence(addr: number[], pc: number[]): TokenSequence {
  // one-ahead labels; the final event has no successor and is input-only
  return {
    addr: addr.slice(0, -1),
    pc: pc.slice(0, -1),
    labels: addr.slice(1),
  };
}

export function buildDataset(log: MissLog, k: number, splitFraction: number): Dataset {
  if (log.vpns.length < 2) throw new Error("miss log needs at least 2 events");
  if (!(splitFraction > 0 && splitFraction < 1)) {
    throw new Error("split fraction must be in (0, 1)");
  }
  const { addr, pc } = tokenize(log, k);
  const cut = Math.floor(addr.length * splitFraction);
  if (cut < 2 || addr.length - cut < 2) {
    throw new Error("split leaves an empty side");
  }
  return {
    k,
    train: toSequence(addr.slice(0, cut), pc.slice(0, cut)),
    val: toSequence(addr.slice(cut), pc.slice(cut)),
    fullAddr: addr,
    fullPc: pc,
    cut,
  };
}

export interface Chunk {
  addr: Int32Array;
  pc: Int32Array;
  labels: Int32Array;
}

/** Split a sequence into consecutive chunks of at most maxLen positions. */
export function chunkSequence(seq: TokenSequence, maxLen: number): Chunk[] {
  return chunkSequenceAt(seq, maxLen, 0);
}

/**
 * Chunking with a phase offset: the first chunk ends at `offset`, the rest
 * are maxLen long. Varying the offset between epochs stops the model from
 * exploiting chunk-relative positions instead of the token structure.
 */
export function chunkSequenceAt(seq: TokenSequence, maxLen: number, offset: number): Chunk[] {
  const n = seq.addr.length;
  const ends: number[] = [];
  if (offset > 0 && offset < n) ends.push(offset);
  for (let e = (offset > 0 && offset < n ? offset : 0) + maxLen; e < n; e += maxLen) {
    ends.push(e);
  }
  ends.push(n);
  const chunks: Chunk[] = [];
  let start = 0;
  for (const end of ends) {
    if (end <= start) continue;
    chunks.push({
      addr: Int32Array.from(seq.addr.slice(start, end)),
      pc: Int32Array.from(seq.pc.slice(start, end)),
      labels: Int32Array.from(seq.labels.slice(start, end)),
    });
    start = end;
  }
  return chunks;
}

/**
 * Empirical-frequency oracle: argmax of next-token counts conditioned on the
 * current (addr, pc) token pair, fit on train, scored elsewhere. Ties break
 * toward the lower ordinal.
 */
export class FrequencyOracle {
  private counts: Map<number, Int32Array> = new Map();
  private k: number;

  constructor(k: number) {
    this.k = k;
  }

  fit(seq: TokenSequence): void {
    for (let i = 0; i < seq.addr.length; i++) {
      const key = seq.addr[i] * this.k + seq.pc[i];
      let c = this.counts.get(key);
      if (!c) {
        c = new Int32Array(this.k);
        this.counts.set(key, c);
      }
      c[seq.labels[i]]++;
    }
  }

  predict(addrTok: number, pcTok: number): number {
    const c = this.counts.get(addrTok * this.k + pcTok);
    if (!c) return 0;
    let best = 0;
    for (let j = 1; j < this.k; j++) {
      if (c[j] > c[best]) best = j;
    }
    return best;
  }

  accuracy(seq: TokenSequence): number {
    if (seq.addr.length === 0) return 0;
    let hit = 0;
    for (let i = 0; i < seq.addr.length; i++) {
      if (this.predict(seq.addr[i], seq.pc[i]) === seq.labels[i]) hit++;
    }
    return hit / seq.addr.length;
  }
}
