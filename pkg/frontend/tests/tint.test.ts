import { describe, expect, it } from "vitest";

import {
  nearModelMask,
  residualColor,
  signedResiduals,
  VoxelIndex,
} from "../src/tint.js";

// deterministic LCG so failures reproduce
function makeRng(seed: number): () => number {
  let s = seed >>> 0;
  return () => {
    s = (s * 1664525 + 1013904223) >>> 0;
    return s / 2 ** 32;
  };
}

function randomCloud(n: number, rng: () => number, span = 0.5): Float32Array {
  const pts = new Float32Array(n * 3);
  for (let i = 0; i < pts.length; i++) {
    pts[i] = (rng() - 0.5) * 2 * span;
  }
  return pts;
}

function bruteNearest(points: Float32Array, x: number, y: number, z: number,
): { index: number; dist2: number } {
  let best = -1;
  let bestD2 = Infinity;
  for (let i = 0; i < points.length / 3; i++) {
    const dx = points[i * 3] - x;
    const dy = points[i * 3 + 1] - y;
    const dz = points[i * 3 + 2] - z;
    const d2 = dx * dx + dy * dy + dz * dz;
    if (d2 < bestD2) {
      best = i;
      bestD2 = d2;
    }
  }
  return { index: best, dist2: bestD2 };
}

describe("VoxelIndex", () => {
  it("matches brute force within the cell radius", () => {
    const rng = makeRng(7);
    const cell = 0.08;
    const cloud = randomCloud(400, rng);
    const index = new VoxelIndex(cloud, cell);
    let inRange = 0;
    for (let trial = 0; trial < 200; trial++) {
      const q = [(rng() - 0.5), (rng() - 0.5), (rng() - 0.5)];
      const hit = index.nearestWithin(q[0], q[1], q[2]);
      const truth = bruteNearest(cloud, q[0], q[1], q[2]);
      if (truth.dist2 < cell * cell) {
        inRange++;
        expect(hit).not.toBeNull();
        expect(hit!.index).toBe(truth.index);
        expect(hit!.dist2).toBeCloseTo(truth.dist2, 12);
      } else if (hit !== null) {
        // allowed only when something else is inside the radius
        expect(hit.dist2).toBeLessThan(cell * cell);
      }
    }
    expect(inRange).toBeGreaterThan(50); // the comparison actually ran
  });

  it("returns null when nothing lies nearby", () => {
    const index = new VoxelIndex(new Float32Array([0, 0, 0]), 0.01);
    expect(index.nearestWithin(1, 1, 1)).toBeNull();
  });

  it("rejects a non-positive cell size", () => {
    expect(() => new VoxelIndex(new Float32Array(0), 0)).toThrow();
  });
});

describe("signedResiduals", () => {
  it("reports model z minus cloud z with the model sign convention", () => {
    const cloud = new Float32Array([0, 0, 1.0]);
    const index = new VoxelIndex(cloud, 0.05);
    const model = new Float32Array([0, 0, 1.002, 0, 0, 0.997]);
    const res = signedResiduals(model, index, cloud);
    expect(res[0]).toBeCloseTo(0.002, 6);
    expect(res[1]).toBeCloseTo(-0.003, 6);
  });

  it("yields NaN beyond the index radius", () => {
    const cloud = new Float32Array([0, 0, 1.0]);
    const index = new VoxelIndex(cloud, 0.05);
    const res = signedResiduals(new Float32Array([0.5, 0, 1.0]), index,
      cloud);
    expect(Number.isNaN(res[0])).toBe(true);
  });
});

describe("residualColor", () => {
  it("is white on the surface, red in front, blue behind", () => {
    expect(residualColor(0, 0.01)).toEqual([1, 1, 1]);
    expect(residualColor(0.01, 0.01)).toEqual([1, 0, 0]);
    expect(residualColor(-0.01, 0.01)).toEqual([0, 0, 1]);
  });

  it("saturates past the scale and greys out NaN", () => {
    expect(residualColor(5, 0.01)).toEqual([1, 0, 0]);
    expect(residualColor(NaN, 0.01)).toEqual([0.45, 0.45, 0.45]);
  });
});

describe("nearModelMask", () => {
  it("matches a brute-force distance test", () => {
    const rng = makeRng(11);
    const cloud = randomCloud(300, rng, 0.3);
    const model = randomCloud(60, rng, 0.3);
    const radius = 0.06;
    const mask = nearModelMask(cloud, model, radius);
    for (let i = 0; i < 300; i++) {
      const { dist2 } = bruteNearest(model, cloud[i * 3], cloud[i * 3 + 1],
        cloud[i * 3 + 2]);
      expect(Boolean(mask[i])).toBe(dist2 <= radius * radius);
    }
    const hits = mask.reduce((a, b) => a + b, 0);
    expect(hits).toBeGreaterThan(0);
    expect(hits).toBeLessThan(300);
  });
});
