// The readout must agree with the server-side error metric to the digit,
// and on a scripted latency sweep the predicted hand must read lower than
// the raw hand. Fixtures come from tools/gen_frontend_assets.py.

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { frameError, RollingMean } from "../src/readout";

interface ConformanceCase {
  displayed: number[][];
  live: number[][];
  expected_mm: number;
}

interface SweepRecord {
  state: { hand_pred: number[][]; hand_raw: number[][] };
  live: number[][];
}

const conformance = JSON.parse(
  readFileSync(new URL("../fixtures/error_conformance.json", import.meta.url), "utf-8"),
) as { cases: ConformanceCase[] };

const sweep = JSON.parse(
  readFileSync(new URL("../fixtures/sweep_states.json", import.meta.url), "utf-8"),
) as { inject_oneway_ms: number; records: SweepRecord[] };

describe("frameError conformance", () => {
  it("matches the reference metric to six decimal places on every fixture", () => {
    for (const c of conformance.cases) {
      const got = frameError(c.displayed, c.live);
      expect(got.toFixed(6)).toBe(c.expected_mm.toFixed(6));
    }
  });

  it("agrees bit for bit on the fixtures", () => {
    // Same operations in the same order: IEEE doubles should be identical,
    // not just close.
    for (const c of conformance.cases) {
      expect(frameError(c.displayed, c.live)).toBe(c.expected_mm);
    }
  });

  it("rejects mismatched clouds", () => {
    expect(() => frameError([[0, 0, 0]], [])).toThrow();
  });
});

describe("rolling readout", () => {
  it("is a trailing mean over the window", () => {
    const rm = new RollingMean(3);
    expect(rm.mean).toBeNull();
    rm.push(1);
    rm.push(2);
    expect(rm.mean).toBeCloseTo(1.5, 12);
    rm.push(3);
    rm.push(4); // evicts the 1
    expect(rm.mean).toBeCloseTo(3, 12);
    expect(rm.count).toBe(3);
  });

  it("resets cleanly", () => {
    const rm = new RollingMean(5);
    rm.push(10);
    rm.reset();
    expect(rm.mean).toBeNull();
  });
});

describe("scripted 50 ms sweep", () => {
  it("predicted readout is lower than the raw readout", () => {
    const raw = new RollingMean(50);
    const pred = new RollingMean(50);
    for (const rec of sweep.records) {
      raw.push(frameError(rec.state.hand_raw, rec.live));
      pred.push(frameError(rec.state.hand_pred, rec.live));
    }
    expect(sweep.records.length).toBeGreaterThan(49);
    expect(pred.mean!).toBeLessThan(raw.mean!);
    // The raw hand trails by roughly the injected round trip at sweep speed.
    expect(raw.mean!).toBeGreaterThan(sweep.inject_oneway_ms);
  });

  it("predicted beats raw on at least 90% of frames", () => {
    let better = 0;
    for (const rec of sweep.records) {
      const r = frameError(rec.state.hand_raw, rec.live);
      const p = frameError(rec.state.hand_pred, rec.live);
      if (p < r) better++;
    }
    expect(better / sweep.records.length).toBeGreaterThanOrEqual(0.9);
  });
});
