// three.js viewport: frame cloud, posed model overlay, transform gizmo.
// Points arrive in camera coordinates (x right, y down, z forward); a
// root group rotated pi about x presents them in three's y-up world, so
// the model group's local transform is exactly the wire pose.

import * as THREE from "three";
import { OrbitControls } from "three/addons/controls/OrbitControls.js";
import { TransformControls } from "three/addons/controls/TransformControls.js";

import type { GizmoMode } from "./state.js";
import type { PackedPoints, PoseJson, Quat, Vec3 } from "./types.js";
import { residualColor } from "./tint.js";

function toThreeQuat(q: Quat): THREE.Quaternion {
  return new THREE.Quaternion(q[1], q[2], q[3], q[0]);
}

function fromThreeQuat(q: THREE.Quaternion): Quat {
  const sign = q.w < 0 ? -1 : 1;
  return [q.w * sign, q.x * sign, q.y * sign, q.z * sign];
}

function pointsGeometry(points: PackedPoints): THREE.BufferGeometry {
  const geometry = new THREE.BufferGeometry();
  geometry.setAttribute("position",
    new THREE.BufferAttribute(points.positions, 3));
  const colors = new Float32Array(points.count * 3);
  for (let i = 0; i < colors.length; i++) {
    colors[i] = points.colors[i] / 255;
  }
  geometry.setAttribute("color", new THREE.BufferAttribute(colors, 3));
  return geometry;
}

export interface ViewerCallbacks {
  /** Fired while the gizmo drags, with the model pose in camera coords. */
  onPoseEdited: (pose: PoseJson) => void;
  /** Fired once when a gizmo drag ends. */
  onEditCommitted: () => void;
}

export class Viewer {
  private readonly renderer: THREE.WebGLRenderer;
  private readonly scene = new THREE.Scene();
  private readonly camera: THREE.PerspectiveCamera;
  private readonly orbit: OrbitControls;
  private readonly gizmo: TransformControls;
  private readonly root = new THREE.Group();
  private readonly modelGroup = new THREE.Group();
  private cloudPoints: THREE.Points | null = null;
  private cloudBase: Float32Array | null = null;
  private modelPointsObj: THREE.Points | null = null;
  private tintMask: Uint8Array | null = null;

  constructor(container: HTMLElement, callbacks: ViewerCallbacks) {
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setPixelRatio(window.devicePixelRatio);
    this.scene.background = new THREE.Color(0x17171c);

    this.camera = new THREE.PerspectiveCamera(50, 1, 0.01, 100);
    this.camera.position.set(0.4, 0.4, 1.2);

    this.root.rotation.x = Math.PI;
    this.scene.add(this.root);
    this.root.add(this.modelGroup);

    this.orbit = new OrbitControls(this.camera, this.renderer.domElement);
    this.orbit.target.set(0, 0, -1);
    this.orbit.update();

    this.gizmo = new TransformControls(this.camera,
      this.renderer.domElement);
    this.gizmo.setSize(0.8);
    const helper = "getHelper" in this.gizmo
      ? (this.gizmo as { getHelper(): THREE.Object3D }).getHelper()
      : (this.gizmo as unknown as THREE.Object3D);
    this.scene.add(helper);

    this.gizmo.addEventListener("dragging-changed", (event) => {
      const dragging = Boolean((event as { value?: unknown }).value);
      this.orbit.enabled = !dragging;
      if (!dragging) {
        callbacks.onEditCommitted();
      }
    });
    this.gizmo.addEventListener("objectChange", () => {
      callbacks.onPoseEdited(this.currentPose());
    });

    container.appendChild(this.renderer.domElement);
    const resize = () => {
      const w = container.clientWidth || 1;
      const h = container.clientHeight || 1;
      this.renderer.setSize(w, h);
      this.camera.aspect = w / h;
      this.camera.updateProjectionMatrix();
    };
    resize();
    window.addEventListener("resize", resize);

    this.renderer.setAnimationLoop(() => {
      this.renderer.render(this.scene, this.camera);
    });
  }

  setCloud(points: PackedPoints): void {
    if (this.cloudPoints) {
      this.root.remove(this.cloudPoints);
      this.cloudPoints.geometry.dispose();
      (this.cloudPoints.material as THREE.Material).dispose();
    }
    this.cloudBase = new Float32Array(points.count * 3);
    for (let i = 0; i < this.cloudBase.length; i++) {
      this.cloudBase[i] = points.colors[i] / 255;
    }
    const geometry = pointsGeometry(points);
    const material = new THREE.PointsMaterial({
      size: 0.004,
      vertexColors: true,
    });
    this.cloudPoints = new THREE.Points(geometry, material);
    this.root.add(this.cloudPoints);
    this.tintMask = null;
  }

  /**
   * Replace the model overlay. Residuals, when given, recolor each point
   * through the signed blue-white-red ramp; scale saturates the ramp.
   */
  setModelPoints(points: PackedPoints, residuals: Float32Array | null,
    scale: number): void {
    if (this.modelPointsObj) {
      this.modelGroup.remove(this.modelPointsObj);
      this.modelPointsObj.geometry.dispose();
      (this.modelPointsObj.material as THREE.Material).dispose();
    }
    const geometry = pointsGeometry(points);
    if (residuals) {
      const colors = geometry.getAttribute("color") as THREE.BufferAttribute;
      for (let i = 0; i < points.count; i++) {
        const [r, g, b] = residualColor(residuals[i], scale);
        colors.setXYZ(i, r, g, b);
      }
      colors.needsUpdate = true;
    }
    const material = new THREE.PointsMaterial({
      size: 0.006,
      vertexColors: true,
    });
    this.modelPointsObj = new THREE.Points(geometry, material);
    this.modelGroup.add(this.modelPointsObj);
  }

  /** Tint masked cloud points toward the highlight color. */
  setSegmentationTint(mask: Uint8Array | null): void {
    this.tintMask = mask;
    if (!this.cloudPoints || !this.cloudBase) {
      return;
    }
    const colors = this.cloudPoints.geometry
      .getAttribute("color") as THREE.BufferAttribute;
    const n = colors.count;
    for (let i = 0; i < n; i++) {
      let r = this.cloudBase[i * 3];
      let g = this.cloudBase[i * 3 + 1];
      let b = this.cloudBase[i * 3 + 2];
      if (mask && mask[i]) {
        r = 0.35 * r + 0.65 * 0.95;
        g = 0.35 * g + 0.65 * 0.55;
        b = 0.35 * b + 0.65 * 0.15;
      }
      colors.setXYZ(i, r, g, b);
    }
    colors.needsUpdate = true;
  }

  get segmentationMask(): Uint8Array | null {
    return this.tintMask;
  }

  setPose(pose: PoseJson): void {
    this.modelGroup.quaternion.copy(toThreeQuat(pose.q));
    this.modelGroup.position.set(pose.t[0], pose.t[1], pose.t[2]);
  }

  currentPose(): PoseJson {
    const p = this.modelGroup.position;
    return {
      q: fromThreeQuat(this.modelGroup.quaternion),
      t: [p.x, p.y, p.z] as Vec3,
    };
  }

  setGizmoEnabled(enabled: boolean): void {
    if (enabled) {
      this.gizmo.attach(this.modelGroup);
    } else {
      this.gizmo.detach();
    }
    this.gizmo.enabled = enabled;
  }

  setGizmoMode(mode: GizmoMode): void {
    this.gizmo.setMode(mode);
  }

  setCloudVisible(visible: boolean): void {
    if (this.cloudPoints) {
      this.cloudPoints.visible = visible;
    }
  }

  setModelVisible(visible: boolean): void {
    this.modelGroup.visible = visible;
  }
}
