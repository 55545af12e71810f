// Quaternion and pose helpers for the gizmo. Quaternions are (w, x, y, z)
// as on the wire; poses map model points into the camera frame.

import type { PoseJson, Quat, Vec3 } from "./types.js";

export const Q_IDENTITY: Quat = [1, 0, 0, 0];

export function qNormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  if (n === 0) {
    throw new Error("cannot normalize a zero quaternion");
  }
  const s = (q[0] < 0 ? -1 : 1) / n; // canonical w >= 0, one encoding per rotation
  return [q[0] * s, q[1] * s, q[2] * s, q[3] * s];
}

export function qMultiply(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function qConjugate(q: Quat): Quat {
  return [q[0], -q[1], -q[2], -q[3]];
}

export function qFromAxisAngle(axis: Vec3, angle: number): Quat {
  const n = Math.hypot(axis[0], axis[1], axis[2]);
  if (n === 0) {
    throw new Error("axis must be non-zero");
  }
  const s = Math.sin(angle / 2) / n;
  return qNormalize([Math.cos(angle / 2), axis[0] * s, axis[1] * s,
    axis[2] * s]);
}

export function qRotate(q: Quat, v: Vec3): Vec3 {
  const [w, x, y, z] = q;
  // q * (0, v) * q^-1 expanded
  const tx = 2 * (y * v[2] - z * v[1]);
  const ty = 2 * (z * v[0] - x * v[2]);
  const tz = 2 * (x * v[1] - y * v[0]);
  return [
    v[0] + w * tx + y * tz - z * ty,
    v[1] + w * ty + z * tx - x * tz,
    v[2] + w * tz + x * ty - y * tx,
  ];
}

export function applyPose(pose: PoseJson, v: Vec3): Vec3 {
  const r = qRotate(pose.q, v);
  return [r[0] + pose.t[0], r[1] + pose.t[1], r[2] + pose.t[2]];
}

/** a after b: the pose that applies b first, then a. */
export function composePoses(a: PoseJson, b: PoseJson): PoseJson {
  const t = qRotate(a.q, b.t);
  return {
    q: qNormalize(qMultiply(a.q, b.q)),
    t: [t[0] + a.t[0], t[1] + a.t[1], t[2] + a.t[2]],
  };
}

export function translatePose(pose: PoseJson, offset: Vec3): PoseJson {
  return {
    q: [...pose.q] as Quat,
    t: [pose.t[0] + offset[0], pose.t[1] + offset[1], pose.t[2] + offset[2]],
  };
}

export function translationDistance(a: PoseJson, b: PoseJson): number {
  return Math.hypot(a.t[0] - b.t[0], a.t[1] - b.t[1], a.t[2] - b.t[2]);
}

export function rotationAngleBetween(a: Quat, b: Quat): number {
  const qa = qNormalize(a);
  const qb = qNormalize(b);
  const dot = Math.abs(qa[0] * qb[0] + qa[1] * qb[1] + qa[2] * qb[2]
    + qa[3] * qb[3]);
  return 2 * Math.acos(Math.min(1, dot));
}

export function clonePose(pose: PoseJson): PoseJson {
  return { q: [...pose.q] as Quat, t: [...pose.t] as Vec3 };
}
