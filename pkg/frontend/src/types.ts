// Wire types for the annotation service. Field names mirror the JSON
// payloads exactly; nothing here is recomputed client-side.

export type Quat = [number, number, number, number]; // w, x, y, z
export type Vec3 = [number, number, number];

export interface PoseJson {
  q: Quat;
  t: Vec3;
}

export interface LabelRecord {
  status: string;
  q: Quat;
  t: Vec3;
  joints: Record<string, number>;
  // zero until the first refinement measures them
  inlier_rmse: number;
  inlier_ratio: number;
}

export interface SceneSummary {
  id: string;
  frame_count: number;
  objects: string[];
  review_progress: number;
  locked: boolean;
}

export interface ObjectStatusEntry {
  status: string;
  inlier_rmse: number;
  inlier_ratio: number;
  flagged: boolean;
}

export interface Gates {
  rmse_gate: number;
  inlier_gate: number;
}

export interface StatusResponse {
  scene: string;
  frames: { frame: number; objects: Record<string, ObjectStatusEntry> }[];
  gates: Gates;
}

export interface PackedPoints {
  count: number;
  positions: Float32Array; // xyz triplets, camera frame, meters
  colors: Uint8Array; // rgb triplets
}

export interface ProgressEvent {
  frame: number;
  status: string;
  inlier_rmse: number;
  inlier_ratio: number;
  flagged: boolean;
}

export interface DoneEvent {
  state: string;
  frames: number;
  flagged_frames: number[];
}

export interface ErrorEvent {
  category: string;
  message: string;
}

export type SseEvent =
  | { event: "progress"; data: ProgressEvent }
  | { event: "done"; data: DoneEvent }
  | { event: "error"; data: ErrorEvent };

export interface PropagateParams {
  object: string;
  from: number;
  to?: number;
  stride?: number;
}
