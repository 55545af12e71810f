// Residual timeline strip: one swatch per frame, colored from the status
// snapshot so the strip always matches what the service reported.

import type { Gates, ObjectStatusEntry } from "./types.js";

export const COLOR_UNLABELED = "#4a4a52";
export const COLOR_SEEDED = "#3f5e8f";
export const COLOR_VERIFIED = "#2f9e44";
export const COLOR_REJECTED = "#7a1e1e";
export const COLOR_FLAGGED = "#e8590c";

function lerpChannel(a: number, b: number, t: number): number {
  return Math.round(a + (b - a) * t);
}

function hex(v: number): string {
  return v.toString(16).padStart(2, "0");
}

/**
 * Color for one frame swatch. Seeded, verified, and rejected labels get
 * fixed colors, flagged frames the warning color, and everything else a
 * green-to-yellow ramp by how much of the RMSE gate the residual uses.
 */
export function frameColor(entry: ObjectStatusEntry | null,
  gates: Gates | null): string {
  if (entry === null) {
    return COLOR_UNLABELED;
  }
  if (entry.status === "seeded") {
    return COLOR_SEEDED;
  }
  if (entry.status === "verified") {
    return COLOR_VERIFIED;
  }
  if (entry.status === "rejected") {
    return COLOR_REJECTED;
  }
  if (entry.flagged) {
    return COLOR_FLAGGED;
  }
  if (gates === null) {
    return COLOR_UNLABELED;
  }
  const t = Math.max(0, Math.min(1, entry.inlier_rmse / gates.rmse_gate));
  // green #2f9e44 toward yellow #e6c229
  const r = lerpChannel(0x2f, 0xe6, t);
  const g = lerpChannel(0x9e, 0xc2, t);
  const b = lerpChannel(0x44, 0x29, t);
  return `#${hex(r)}${hex(g)}${hex(b)}`;
}
