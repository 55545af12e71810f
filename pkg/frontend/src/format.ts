// Display formatting for status values. These render service numbers
// verbatim; no metric is derived or recomputed here. Seeded labels carry
// placeholder zeros until the first refinement, shown as "-".

import type { ObjectStatusEntry } from "./types.js";

export function formatStatus(entry: ObjectStatusEntry | null): string {
  return entry?.status ?? "unlabeled";
}

export function formatRmse(entry: ObjectStatusEntry | null): string {
  if (entry === null || entry.status === "seeded") {
    return "-";
  }
  return `${(entry.inlier_rmse * 1000).toFixed(2)} mm`;
}

export function formatRatio(entry: ObjectStatusEntry | null): string {
  if (entry === null || entry.status === "seeded") {
    return "-";
  }
  return entry.inlier_ratio.toFixed(3);
}

export function formatFlag(entry: ObjectStatusEntry | null): string {
  return entry?.flagged ? "FLAGGED" : "";
}
