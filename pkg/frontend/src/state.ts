// Application state. One store, mutated through methods, observed through
// a single onChange callback. Residuals and flags live here only as copies
// of the most recent GET /status payload; nothing recomputes them locally.

import { clonePose } from "./pose.js";
import type {
  Gates,
  ObjectStatusEntry,
  PoseJson,
  StatusResponse,
} from "./types.js";

export type GizmoMode = "translate" | "rotate";

export interface OverlayToggles {
  sceneCloud: boolean;
  modelOverlay: boolean;
  segmentationTint: boolean;
  residualTimeline: boolean;
}

export interface PropagationActivity {
  running: boolean;
  lastFrame: number | null;
  framesDone: number;
}

export class AppStore {
  scene: string | null = null;
  frameCount = 0;
  objects: string[] = [];
  activeFrame = 0;
  activeObject: string | null = null;
  gizmoMode: GizmoMode = "translate";
  overlays: OverlayToggles = {
    sceneCloud: true,
    modelOverlay: true,
    segmentationTint: false,
    residualTimeline: true,
  };

  // Mirror of the last GET /status response, the only residual source.
  frameStatus = new Map<number, Record<string, ObjectStatusEntry>>();
  gates: Gates | null = null;

  lockHeld = false;
  lockDenied = false; // someone else holds it: read-only banner

  // The single piece of state the service cannot reproduce: an unsaved
  // gizmo delta. Cleared on frame or object switch, surfaced as "dirty".
  workingPose: PoseJson | null = null;
  dirty = false;

  propagation: PropagationActivity = {
    running: false,
    lastFrame: null,
    framesDone: 0,
  };

  lastError: string | null = null;

  private listeners: Array<() => void> = [];

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) {
      fn();
    }
  }

  openScene(scene: string, frameCount: number, objects: string[]): void {
    this.scene = scene;
    this.frameCount = frameCount;
    this.objects = [...objects];
    this.activeFrame = 0;
    this.activeObject = objects.length === 1 ? objects[0] : null;
    this.frameStatus.clear();
    this.gates = null;
    this.lockHeld = false;
    this.lockDenied = false;
    this.clearWorkingPose();
    this.emit();
  }

  applyStatus(status: StatusResponse): void {
    this.frameStatus.clear();
    for (const row of status.frames) {
      this.frameStatus.set(row.frame, row.objects);
    }
    this.gates = status.gates;
    this.emit();
  }

  entry(frame: number, objectId: string): ObjectStatusEntry | null {
    return this.frameStatus.get(frame)?.[objectId] ?? null;
  }

  activeEntry(): ObjectStatusEntry | null {
    if (this.activeObject === null) {
      return null;
    }
    return this.entry(this.activeFrame, this.activeObject);
  }

  /** Gizmo edits need a held lock and exactly one active object. */
  get canEdit(): boolean {
    return this.lockHeld && this.activeObject !== null;
  }

  setLockHeld(held: boolean): void {
    this.lockHeld = held;
    if (held) {
      this.lockDenied = false;
    } else {
      this.clearWorkingPose();
    }
    this.emit();
  }

  setLockDenied(): void {
    this.lockHeld = false;
    this.lockDenied = true;
    this.clearWorkingPose();
    this.emit();
  }

  setActiveFrame(frame: number): void {
    if (frame < 0 || frame >= this.frameCount || frame === this.activeFrame) {
      return;
    }
    this.activeFrame = frame;
    this.clearWorkingPose();
    this.emit();
  }

  setActiveObject(objectId: string | null): void {
    if (objectId === this.activeObject) {
      return;
    }
    this.activeObject = objectId;
    this.clearWorkingPose();
    this.emit();
  }

  setGizmoMode(mode: GizmoMode): void {
    this.gizmoMode = mode;
    this.emit();
  }

  toggleOverlay(key: keyof OverlayToggles): void {
    this.overlays[key] = !this.overlays[key];
    this.emit();
  }

  /** Record an in-progress gizmo edit. Refused when editing is not allowed. */
  setWorkingPose(pose: PoseJson): boolean {
    if (!this.canEdit) {
      return false;
    }
    this.workingPose = clonePose(pose);
    this.dirty = true;
    this.emit();
    return true;
  }

  clearWorkingPose(): void {
    this.workingPose = null;
    this.dirty = false;
  }

  /** Called after the working pose was pushed to the service. */
  commitWorkingPose(): void {
    this.clearWorkingPose();
    this.emit();
  }

  propagationStarted(): void {
    this.propagation = { running: true, lastFrame: null, framesDone: 0 };
    this.emit();
  }

  propagationProgress(frame: number): void {
    this.propagation.running = true;
    this.propagation.lastFrame = frame;
    this.propagation.framesDone += 1;
    this.emit();
  }

  propagationFinished(): void {
    this.propagation.running = false;
    this.emit();
  }

  setError(message: string | null): void {
    this.lastError = message;
    this.emit();
  }

  /** Frames whose status row says any object is flagged, ascending. */
  flaggedFrames(): number[] {
    const out: number[] = [];
    for (const [frame, objects] of this.frameStatus) {
      if (Object.values(objects).some((entry) => entry.flagged)) {
        out.push(frame);
      }
    }
    out.sort((a, b) => a - b);
    return out;
  }

  nextFlagged(): number | null {
    const flagged = this.flaggedFrames();
    for (const frame of flagged) {
      if (frame > this.activeFrame) {
        return frame;
      }
    }
    return flagged.length > 0 ? flagged[0] : null;
  }

  prevFlagged(): number | null {
    const flagged = this.flaggedFrames().reverse();
    for (const frame of flagged) {
      if (frame < this.activeFrame) {
        return frame;
      }
    }
    return flagged.length > 0 ? flagged[0] : null;
  }
}
