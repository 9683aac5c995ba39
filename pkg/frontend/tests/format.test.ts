import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { describe, expect, it } from "vitest";
import { readTrace, readWeights, weightsToBytes, writeWeights } from "../src/format.js";
import { defaultConfig, initWeights, paramCount, parameterTensors, quantizeF32 } from "../src/model.js";
import { Rng } from "../src/rng.js";

function tmpFile(name: string): string {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "memix-trainer-"));
  return path.join(dir, name);
}

describe("MXT1 reader", () => {
  it("parses a hand-built buffer", () => {
    const buf = Buffer.alloc(16 + 32);
    buf.write("MXT1", 0, "latin1");
    buf.writeUInt8(1, 4); // version
    buf.writeUInt8(1, 5); // miss log
    buf.writeUInt8(12, 6);
    buf.writeFloatLE(0.3, 8);
    buf.writeBigUInt64LE(5n, 16);
    buf.writeBigUInt64LE(10n, 24);
    buf.writeBigUInt64LE(6n, 32);
    buf.writeBigUInt64LE(11n, 40);
    const file = tmpFile("t.mxt");
    fs.writeFileSync(file, buf);
    const log = readTrace(file);
    expect(log.kind).toBe(1);
    expect(log.capacityFraction).toBeCloseTo(0.3, 6);
    expect(log.vpns).toEqual([5n, 6n]);
    expect(log.pcs).toEqual([10n, 11n]);
  });

  it("rejects bad magic and truncated bodies", () => {
    const file = tmpFile("bad.mxt");
    fs.writeFileSync(file, Buffer.from("nonsense data here"));
    expect(() => readTrace(file)).toThrow(/MXT1/);
    const buf = Buffer.alloc(19);
    buf.write("MXT1", 0, "latin1");
    buf.writeUInt8(1, 4);
    fs.writeFileSync(file, buf);
    expect(() => readTrace(file)).toThrow(/truncated/);
  });
});

describe("MXW1 writer", () => {
  it("writes header + decays + exactly paramCount f32 values", () => {
    const cfg = defaultConfig();
    const w = quantizeF32(initWeights(cfg, new Rng(0)));
    const bytes = weightsToBytes(w);
    expect(bytes.length).toBe(12 + 4 * cfg.layers + 4 * paramCount(cfg));
    expect(bytes.toString("latin1", 0, 4)).toBe("MXW1");
    expect(bytes.readUInt16LE(6)).toBe(64);
    expect(bytes.readUInt16LE(8)).toBe(8);
  });

  it("round-trips bit-exactly and re-export is idempotent", () => {
    const cfg = defaultConfig();
    const w = quantizeF32(initWeights(cfg, new Rng(1)));
    const file = tmpFile("w.mxw1");
    writeWeights(file, w);
    const first = fs.readFileSync(file);
    const back = readWeights(file);
    const a = parameterTensors(w);
    const b = parameterTensors(back);
    for (let t = 0; t < a.length; t++) {
      for (let i = 0; i < a[t].length; i++) expect(b[t][i]).toBe(a[t][i]);
    }
    writeWeights(file, back);
    expect(fs.readFileSync(file).equals(first)).toBe(true);
  });
});
