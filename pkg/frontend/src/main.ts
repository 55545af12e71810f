// Entry point: wires the store, the HTTP client, and the viewport to the
// DOM. All residual numbers shown anywhere come from the store's mirror
// of GET /status; edits flow through the lock-guarded endpoints.

import { ApiClient, ApiError } from "./api.js";
import { formatFlag, formatRatio, formatRmse, formatStatus } from "./format.js";
import { applyPose, clonePose } from "./pose.js";
import { AppStore } from "./state.js";
import { frameColor } from "./timeline.js";
import { nearModelMask, signedResiduals, VoxelIndex } from "./tint.js";
import type { PackedPoints, PoseJson, SceneSummary } from "./types.js";
import { Viewer } from "./viewer.js";

const CLOUD_STRIDE = 4;
const MODEL_POINT_COUNT = 2048;
const PRELOAD_SPAN = 2;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

class App {
  private readonly api = new ApiClient("");
  private readonly store = new AppStore();
  private readonly viewer: Viewer;
  private scenes: SceneSummary[] = [];
  private cloudCache = new Map<number, Promise<PackedPoints>>();
  private currentCloud: PackedPoints | null = null;
  private cloudIndex: VoxelIndex | null = null;
  private rawModelPoints: PackedPoints | null = null;
  private shownPose: PoseJson | null = null;
  private loadSeq = 0;

  constructor() {
    this.viewer = new Viewer(el("viewport"), {
      onPoseEdited: (pose) => {
        if (!this.store.setWorkingPose(pose)) {
          // edit not allowed; snap the gizmo back
          if (this.shownPose) {
            this.viewer.setPose(this.shownPose);
          }
        }
      },
      onEditCommitted: () => this.refreshTint(),
    });
    this.store.onChange(() => this.render());
    this.bindControls();
  }

  async boot(): Promise<void> {
    try {
      this.scenes = await this.api.listScenes();
    } catch (err) {
      this.reportError(err);
      return;
    }
    const select = el<HTMLSelectElement>("scene-select");
    select.innerHTML = "";
    for (const scene of this.scenes) {
      const option = document.createElement("option");
      option.value = scene.id;
      option.textContent = `${scene.id} (${scene.frame_count} frames)`;
      select.appendChild(option);
    }
    if (this.scenes.length > 0) {
      await this.openScene(this.scenes[0].id);
    }
  }

  private summary(sceneId: string): SceneSummary | null {
    return this.scenes.find((s) => s.id === sceneId) ?? null;
  }

  private async openScene(sceneId: string): Promise<void> {
    const previous = this.store.scene;
    if (previous && previous !== sceneId) {
      await this.api.releaseLock(previous).catch(() => undefined);
    }
    const summary = this.summary(sceneId);
    if (!summary) {
      return;
    }
    this.cloudCache.clear();
    this.store.openScene(sceneId, summary.frame_count, summary.objects);
    await this.refreshStatus();
    try {
      await this.api.acquireLock(sceneId);
      this.store.setLockHeld(true);
    } catch (err) {
      if (err instanceof ApiError && err.category === "lock") {
        this.store.setLockDenied();
      } else {
        this.reportError(err);
      }
    }
    if (this.store.objects.length > 0 && !this.store.activeObject) {
      this.store.setActiveObject(this.store.objects[0]);
    }
    await this.loadModelPoints();
    await this.loadFrame();
  }

  private async refreshStatus(): Promise<void> {
    const scene = this.store.scene;
    if (!scene) {
      return;
    }
    try {
      this.store.applyStatus(await this.api.status(scene));
    } catch (err) {
      this.reportError(err);
    }
  }

  private cloudFor(frame: number): Promise<PackedPoints> {
    const scene = this.store.scene;
    if (!scene) {
      return Promise.reject(new Error("no scene open"));
    }
    let pending = this.cloudCache.get(frame);
    if (!pending) {
      pending = this.api.cloud(scene, frame, CLOUD_STRIDE);
      this.cloudCache.set(frame, pending);
      if (this.cloudCache.size > 2 * PRELOAD_SPAN + 3) {
        for (const key of this.cloudCache.keys()) {
          if (Math.abs(key - this.store.activeFrame) > PRELOAD_SPAN + 1) {
            this.cloudCache.delete(key);
            break;
          }
        }
      }
    }
    return pending;
  }

  private preloadNeighbors(): void {
    for (let d = 1; d <= PRELOAD_SPAN; d++) {
      for (const frame of [this.store.activeFrame + d,
        this.store.activeFrame - d]) {
        if (frame >= 0 && frame < this.store.frameCount) {
          this.cloudFor(frame).catch(() => undefined);
        }
      }
    }
  }

  private async loadModelPoints(): Promise<void> {
    const { scene, activeObject } = this.store;
    if (!scene || !activeObject) {
      this.rawModelPoints = null;
      return;
    }
    try {
      this.rawModelPoints = await this.api.modelPoints(scene, activeObject,
        MODEL_POINT_COUNT);
    } catch (err) {
      this.rawModelPoints = null;
      this.reportError(err);
    }
  }

  private async loadFrame(): Promise<void> {
    const seq = ++this.loadSeq;
    const { scene, activeFrame, activeObject } = this.store;
    if (!scene) {
      return;
    }
    try {
      const cloud = await this.cloudFor(activeFrame);
      if (seq !== this.loadSeq) {
        return;
      }
      this.currentCloud = cloud;
      this.cloudIndex = null;
      this.viewer.setCloud(cloud);
    } catch (err) {
      this.reportError(err);
      return;
    }
    this.preloadNeighbors();
    this.shownPose = null;
    if (activeObject) {
      try {
        const label = await this.api.getLabel(scene, activeFrame,
          activeObject);
        if (seq !== this.loadSeq) {
          return;
        }
        this.shownPose = { q: label.q, t: label.t };
      } catch (err) {
        if (!(err instanceof ApiError && err.status < 500)) {
          this.reportError(err);
        }
      }
    }
    if (this.shownPose) {
      this.viewer.setPose(this.shownPose);
    }
    this.viewer.setModelVisible(this.shownPose !== null
      && this.store.overlays.modelOverlay);
    this.refreshTint();
    this.render();
  }

  /** Recolor model points by signed residual against the current cloud. */
  private refreshTint(): void {
    const gates = this.store.gates;
    if (!this.rawModelPoints || !this.currentCloud || !gates) {
      return;
    }
    const pose = this.store.workingPose ?? this.shownPose;
    if (!pose) {
      return;
    }
    if (!this.cloudIndex) {
      this.cloudIndex = new VoxelIndex(this.currentCloud.positions,
        4 * gates.rmse_gate);
    }
    const n = this.rawModelPoints.count;
    const posed = new Float32Array(n * 3);
    for (let i = 0; i < n; i++) {
      const p = applyPose(pose, [
        this.rawModelPoints.positions[i * 3],
        this.rawModelPoints.positions[i * 3 + 1],
        this.rawModelPoints.positions[i * 3 + 2],
      ]);
      posed[i * 3] = p[0];
      posed[i * 3 + 1] = p[1];
      posed[i * 3 + 2] = p[2];
    }
    const residuals = signedResiduals(posed, this.cloudIndex,
      this.currentCloud.positions);
    // geometry holds raw model coords; the group transform poses them
    const raw: PackedPoints = {
      count: n,
      positions: this.rawModelPoints.positions,
      colors: this.rawModelPoints.colors,
    };
    this.viewer.setModelPoints(raw, residuals, 2 * gates.rmse_gate);
    if (this.store.overlays.segmentationTint) {
      this.viewer.setSegmentationTint(nearModelMask(
        this.currentCloud.positions, posed, 2 * gates.rmse_gate));
    } else {
      this.viewer.setSegmentationTint(null);
    }
  }

  private reportError(err: unknown): void {
    if (err instanceof ApiError) {
      if (err.category === "lock") {
        this.store.setLockDenied();
      }
      this.store.setError(err.message);
    } else {
      this.store.setError(err instanceof Error ? err.message : String(err));
    }
  }

  private async guard(action: () => Promise<void>): Promise<void> {
    try {
      this.store.setError(null);
      await action();
    } catch (err) {
      this.reportError(err);
    }
  }

  private bindControls(): void {
    el<HTMLSelectElement>("scene-select").addEventListener("change",
      (event) => {
        const target = event.target as HTMLSelectElement;
        void this.openScene(target.value);
      });
    el<HTMLSelectElement>("object-select").addEventListener("change",
      (event) => {
        const target = event.target as HTMLSelectElement;
        this.store.setActiveObject(target.value || null);
        void this.loadModelPoints().then(() => this.loadFrame());
      });

    el("frame-prev").addEventListener("click", () => {
      this.store.setActiveFrame(this.store.activeFrame - 1);
      void this.loadFrame();
    });
    el("frame-next").addEventListener("click", () => {
      this.store.setActiveFrame(this.store.activeFrame + 1);
      void this.loadFrame();
    });
    el("flag-prev").addEventListener("click", () => {
      const frame = this.store.prevFlagged();
      if (frame !== null) {
        this.store.setActiveFrame(frame);
        void this.loadFrame();
      }
    });
    el("flag-next").addEventListener("click", () => {
      const frame = this.store.nextFlagged();
      if (frame !== null) {
        this.store.setActiveFrame(frame);
        void this.loadFrame();
      }
    });

    el("mode-translate").addEventListener("click",
      () => this.store.setGizmoMode("translate"));
    el("mode-rotate").addEventListener("click",
      () => this.store.setGizmoMode("rotate"));

    for (const [id, key] of [
      ["toggle-cloud", "sceneCloud"],
      ["toggle-model", "modelOverlay"],
      ["toggle-tint", "segmentationTint"],
      ["toggle-timeline", "residualTimeline"],
    ] as const) {
      el(id).addEventListener("click", () => {
        this.store.toggleOverlay(key);
        this.refreshTint();
      });
    }

    el("btn-lock").addEventListener("click", () => void this.guard(
      async () => {
        const scene = this.store.scene;
        if (!scene) {
          return;
        }
        if (this.store.lockHeld) {
          await this.api.releaseLock(scene);
          this.store.setLockHeld(false);
        } else {
          await this.api.acquireLock(scene);
          this.store.setLockHeld(true);
        }
      }));

    el("btn-seed").addEventListener("click", () => void this.guard(
      async () => {
        const { scene, activeFrame, activeObject, workingPose } = this.store;
        if (!scene || !activeObject || !workingPose) {
          return;
        }
        await this.api.putLabel(scene, activeFrame, activeObject,
          clonePose(workingPose));
        this.shownPose = clonePose(workingPose);
        this.store.commitWorkingPose();
        await this.refreshStatus();
      }));

    el("btn-refine").addEventListener("click", () => void this.guard(
      async () => {
        const { scene, activeFrame, activeObject } = this.store;
        if (!scene || !activeObject) {
          return;
        }
        const label = await this.api.refine(scene, activeFrame, activeObject);
        this.shownPose = { q: label.q, t: label.t };
        this.store.clearWorkingPose();
        this.viewer.setPose(this.shownPose);
        await this.refreshStatus();
        this.refreshTint();
      }));

    for (const [id, verdict] of [
      ["btn-verify", "verified"],
      ["btn-reject", "rejected"],
    ] as const) {
      el(id).addEventListener("click", () => void this.guard(async () => {
        const { scene, activeFrame, activeObject } = this.store;
        if (!scene || !activeObject) {
          return;
        }
        await this.api.review(scene, activeFrame, activeObject, verdict);
        await this.refreshStatus();
      }));
    }

    el("btn-propagate").addEventListener("click", () => void this.guard(
      async () => {
        const { scene, activeFrame, activeObject } = this.store;
        if (!scene || !activeObject) {
          return;
        }
        this.store.propagationStarted();
        try {
          await this.api.propagate(scene,
            { object: activeObject, from: activeFrame }, (event) => {
              if (event.event === "progress") {
                this.store.propagationProgress(event.data.frame);
              } else if (event.event === "error") {
                this.store.setError(event.data.message);
              }
            });
        } finally {
          this.store.propagationFinished();
        }
        await this.refreshStatus();
        await this.loadFrame();
      }));

    el("btn-cancel").addEventListener("click", () => void this.guard(
      async () => {
        const scene = this.store.scene;
        if (scene) {
          await this.api.cancelPropagation(scene);
        }
      }));

    el("btn-save").addEventListener("click", () => void this.guard(
      async () => {
        const scene = this.store.scene;
        if (!scene) {
          return;
        }
        const { written } = await this.api.save(scene);
        this.store.setError(null);
        el("save-note").textContent = `wrote ${written} labels`;
      }));

    window.addEventListener("keydown", (event) => {
      if (event.target instanceof HTMLInputElement
        || event.target instanceof HTMLSelectElement) {
        return;
      }
      if (event.key === "ArrowLeft") {
        this.store.setActiveFrame(this.store.activeFrame - 1);
        void this.loadFrame();
      } else if (event.key === "ArrowRight") {
        this.store.setActiveFrame(this.store.activeFrame + 1);
        void this.loadFrame();
      } else if (event.key === "t") {
        this.store.setGizmoMode("translate");
      } else if (event.key === "r") {
        this.store.setGizmoMode("rotate");
      }
    });

    window.addEventListener("beforeunload", () => {
      const scene = this.store.scene;
      if (scene && this.store.lockHeld) {
        const token = this.api.lockToken(scene);
        if (token) {
          // fire and forget; the lock is in-memory server state
          void fetch(`/scenes/${scene}/lock`, {
            method: "DELETE",
            headers: { "X-Lock-Token": token },
            keepalive: true,
          });
        }
      }
    });
  }

  private render(): void {
    const store = this.store;
    el("banner-readonly").style.display = store.lockDenied ? "block" : "none";
    el("banner-error").style.display = store.lastError ? "block" : "none";
    el("banner-error").textContent = store.lastError ?? "";
    el("dirty-dot").style.display = store.dirty ? "inline-block" : "none";

    el("frame-label").textContent =
      `frame ${store.activeFrame} / ${Math.max(0, store.frameCount - 1)}`;
    el<HTMLButtonElement>("btn-lock").textContent =
      store.lockHeld ? "Release lock" : "Acquire lock";

    const objectSelect = el<HTMLSelectElement>("object-select");
    if (objectSelect.options.length !== store.objects.length) {
      objectSelect.innerHTML = "";
      for (const oid of store.objects) {
        const option = document.createElement("option");
        option.value = oid;
        option.textContent = oid;
        objectSelect.appendChild(option);
      }
    }
    if (store.activeObject) {
      objectSelect.value = store.activeObject;
    }

    const entry = store.activeEntry();
    el("hud-status").textContent = formatStatus(entry);
    el("hud-rmse").textContent = formatRmse(entry);
    el("hud-ratio").textContent = formatRatio(entry);
    el("hud-flag").textContent = formatFlag(entry);

    const activity = el("propagate-note");
    if (store.propagation.running) {
      const at = store.propagation.lastFrame;
      activity.textContent = at === null
        ? "propagating..." : `propagating... frame ${at}`;
    } else {
      activity.textContent = "";
    }

    for (const [id, enabled] of [
      ["btn-seed", store.canEdit && store.dirty],
      ["btn-refine", store.canEdit],
      ["btn-verify", store.canEdit],
      ["btn-reject", store.canEdit],
      ["btn-propagate", store.canEdit && !store.propagation.running],
      ["btn-save", store.lockHeld],
    ] as const) {
      el<HTMLButtonElement>(id).disabled = !enabled;
    }

    this.viewer.setGizmoEnabled(store.canEdit);
    this.viewer.setGizmoMode(store.gizmoMode);
    this.viewer.setCloudVisible(store.overlays.sceneCloud);
    this.viewer.setModelVisible(store.overlays.modelOverlay
      && this.shownPose !== null);

    this.renderTimeline();
  }

  private renderTimeline(): void {
    const strip = el("timeline");
    const store = this.store;
    strip.style.display = store.overlays.residualTimeline ? "flex" : "none";
    while (strip.children.length > store.frameCount) {
      strip.removeChild(strip.lastChild as Node);
    }
    while (strip.children.length < store.frameCount) {
      const frame = strip.children.length;
      const swatch = document.createElement("div");
      swatch.className = "swatch";
      swatch.addEventListener("click", () => {
        this.store.setActiveFrame(frame);
        void this.loadFrame();
      });
      strip.appendChild(swatch);
    }
    for (let frame = 0; frame < store.frameCount; frame++) {
      const swatch = strip.children[frame] as HTMLElement;
      const entry = store.activeObject
        ? store.entry(frame, store.activeObject) : null;
      swatch.style.background = frameColor(entry, store.gates);
      swatch.classList.toggle("active", frame === store.activeFrame);
    }
  }
}

const app = new App();
void app.boot();
