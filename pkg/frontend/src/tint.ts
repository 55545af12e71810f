// Nearest-neighbor queries against the frame cloud, used to tint model
// points by signed depth residual and to highlight cloud points near the
// posed model. A uniform voxel hash keeps lookups cheap at cloud sizes.

export class VoxelIndex {
  private readonly cell: number;
  private readonly points: Float32Array;
  private readonly buckets = new Map<string, number[]>();

  /**
   * Index flat xyz triples. The cell size doubles as the query radius:
   * scanning the 27 cells around a query covers every point within it.
   */
  constructor(points: Float32Array, cell: number) {
    if (cell <= 0) {
      throw new Error("cell size must be positive");
    }
    this.cell = cell;
    this.points = points;
    const n = Math.floor(points.length / 3);
    for (let i = 0; i < n; i++) {
      const key = this.keyOf(points[i * 3], points[i * 3 + 1],
        points[i * 3 + 2]);
      const bucket = this.buckets.get(key);
      if (bucket) {
        bucket.push(i);
      } else {
        this.buckets.set(key, [i]);
      }
    }
  }

  get size(): number {
    return Math.floor(this.points.length / 3);
  }

  private keyOf(x: number, y: number, z: number): string {
    const c = this.cell;
    return `${Math.floor(x / c)},${Math.floor(y / c)},${Math.floor(z / c)}`;
  }

  /**
   * Index and squared distance of the nearest point within the cell
   * radius, or null when no candidate falls inside it.
   */
  nearestWithin(x: number, y: number, z: number,
  ): { index: number; dist2: number } | null {
    const c = this.cell;
    const ix = Math.floor(x / c);
    const iy = Math.floor(y / c);
    const iz = Math.floor(z / c);
    let best = -1;
    let bestD2 = c * c;
    for (let dx = -1; dx <= 1; dx++) {
      for (let dy = -1; dy <= 1; dy++) {
        for (let dz = -1; dz <= 1; dz++) {
          const bucket = this.buckets.get(`${ix + dx},${iy + dy},${iz + dz}`);
          if (!bucket) {
            continue;
          }
          for (const i of bucket) {
            const ddx = this.points[i * 3] - x;
            const ddy = this.points[i * 3 + 1] - y;
            const ddz = this.points[i * 3 + 2] - z;
            const d2 = ddx * ddx + ddy * ddy + ddz * ddz;
            if (d2 < bestD2 || (d2 === bestD2 && best !== -1 && i < best)) {
              best = i;
              bestD2 = d2;
            }
          }
        }
      }
    }
    return best === -1 ? null : { index: best, dist2: bestD2 };
  }
}

/**
 * Signed depth residual per model point: model z minus the z of its
 * nearest cloud point; NaN where nothing lies within the index radius.
 * Sign tells the annotator which way the overlay floats off the surface.
 */
export function signedResiduals(modelPoints: Float32Array,
  cloudIndex: VoxelIndex, cloud: Float32Array): Float32Array {
  const n = Math.floor(modelPoints.length / 3);
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    const x = modelPoints[i * 3];
    const y = modelPoints[i * 3 + 1];
    const z = modelPoints[i * 3 + 2];
    const hit = cloudIndex.nearestWithin(x, y, z);
    out[i] = hit === null ? NaN : z - cloud[hit.index * 3 + 2];
  }
  return out;
}

/**
 * Map a signed residual to an RGB triple in [0, 1]: blue behind the
 * cloud, red in front, white on it, grey when nothing was nearby.
 * `scale` is the residual magnitude that saturates the ramp.
 */
export function residualColor(residual: number, scale: number,
): [number, number, number] {
  if (Number.isNaN(residual)) {
    return [0.45, 0.45, 0.45];
  }
  const t = Math.max(-1, Math.min(1, residual / scale));
  if (t >= 0) {
    return [1, 1 - t, 1 - t];
  }
  return [1 + t, 1 + t, 1];
}

/**
 * Flags for cloud points lying within `radius` of any model point, the
 * segmentation tint mask. Model points are indexed, cloud points probe.
 */
export function nearModelMask(cloud: Float32Array, modelPoints: Float32Array,
  radius: number): Uint8Array {
  const index = new VoxelIndex(modelPoints, radius);
  const n = Math.floor(cloud.length / 3);
  const out = new Uint8Array(n);
  const r2 = radius * radius;
  for (let i = 0; i < n; i++) {
    const hit = index.nearestWithin(cloud[i * 3], cloud[i * 3 + 1],
      cloud[i * 3 + 2]);
    if (hit !== null && hit.dist2 <= r2) {
      out[i] = 1;
    }
  }
  return out;
}
