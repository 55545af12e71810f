"""Core pinhole-camera and SE(3) types shared by every pipeline stage.

Conventions: camera x right, y down, z forward; pixel centers sit at integer
coordinates; raw depth value 0 marks a missing measurement. All values are
immutable after construction and all operations are pure functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

_ORTHO_TOL = 1e-9


def _frozen(a, dtype=np.float64):
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p -> rotation @ p + translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rotation)
        t = _frozen(self.translation)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InputError(f"pose shapes {r.shape}, {t.shape} invalid")
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise InputError("pose contains non-finite values")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > _ORTHO_TOL:
            raise InputError(f"rotation not orthonormal (max deviation {err:.3e})")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise InputError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N,3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def quaternion(self) -> np.ndarray:
        """Unit quaternion (w,x,y,z), w >= 0."""
        return rotation_to_quaternion(self.rotation)

    def to_json_dict(self) -> dict:
        return {"q": self.quaternion().tolist(), "t": self.translation.tolist()}

    @staticmethod
    def from_json_dict(d: dict) -> "Pose":
        try:
            q = np.asarray(d["q"], dtype=np.float64)
            t = np.asarray(d["t"], dtype=np.float64)
        except (KeyError, TypeError) as e:
            raise InputError(f"pose entry missing q/t: {e}") from e
        return Pose(quaternion_to_rotation(q), t)


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying b first, then a."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    """3x3 rotation to unit quaternion (w,x,y,z), Shepperd's method."""
    m = np.asarray(r, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise InputError("quaternion must have 4 components (w,x,y,z)")
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise InputError("quaternion has zero norm")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n < 1e-12:
        raise InputError("rotation axis has zero norm")
    x, y, z = a / n
    k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters plus the raw-depth-to-meters scale."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InputError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError("principal point outside the image")
        if self.depth_scale <= 0:
            raise InputError("depth_scale must be positive")

    def to_json_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "depth_scale": self.depth_scale}

    @staticmethod
    def from_json_dict(d: dict) -> "CameraIntrinsics":
        try:
            return CameraIntrinsics(
                fx=float(d["fx"]), fy=float(d["fy"]),
                cx=float(d["cx"]), cy=float(d["cy"]),
                width=int(d["width"]), height=int(d["height"]),
                depth_scale=float(d["depth_scale"]))
        except KeyError as e:
            raise InputError(f"intrinsics file missing key {e}") from e

    @staticmethod
    def load(path) -> "CameraIntrinsics":
        with open(path) as f:
            return CameraIntrinsics.from_json_dict(json.load(f))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, sort_keys=True, indent=2)
            f.write("\n")


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points with optional unit-interval RGB and source pixel index."""

    points: np.ndarray
    colors: np.ndarray | None = None
    pixel_index: np.ndarray | None = None

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InputError(f"points must be (N,3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InputError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            c = _frozen(self.colors)
            if c.shape != pts.shape:
                raise InputError("colors length does not match points")
            object.__setattr__(self, "colors", c)
        if self.pixel_index is not None:
            pi = _frozen(self.pixel_index, dtype=np.int64)
            if pi.shape != (pts.shape[0],):
                raise InputError("pixel_index length does not match points")
            object.__setattr__(self, "pixel_index", pi)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class DepthFrame:
    """Raw 16-bit depth image tied to its intrinsics; 0 means missing."""

    raw: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        raw = np.ascontiguousarray(np.asarray(self.raw, dtype=np.uint16))
        raw.flags.writeable = False
        if raw.shape != (self.intrinsics.height, self.intrinsics.width):
            raise InputError(
                f"depth shape {raw.shape} does not match intrinsics "
                f"{(self.intrinsics.height, self.intrinsics.width)}")
        object.__setattr__(self, "raw", raw)

    def meters(self) -> np.ndarray:
        """Depth in meters as float64; missing pixels stay 0."""
        return self.raw.astype(np.float64) * self.intrinsics.depth_scale


def backproject(depth: DepthFrame, color: np.ndarray | None = None,
                stride: int = 1) -> PointCloud:
    """Lift valid depth pixels into a camera-frame point cloud.

    color, when given, must be an (H,W,3) uint8 image of identical size;
    stride subsamples the pixel grid in both directions.
    """
    if stride < 1:
        raise InputError("stride must be a positive integer")
    intr = depth.intrinsics
    if color is not None:
        color = np.asarray(color)
        if color.shape[:2] != depth.raw.shape:
            raise InputError("color image dimensions do not match depth")
    raw = depth.raw[::stride, ::stride]
    vs, us = np.nonzero(raw)
    z = raw[vs, us].astype(np.float64) * intr.depth_scale
    u = us.astype(np.float64) * stride
    v = vs.astype(np.float64) * stride
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    pts = np.column_stack([x, y, z])
    pixel_index = (vs * stride) * intr.width + us * stride
    colors = None
    if color is not None:
        colors = color[vs * stride, us * stride].astype(np.float64) / 255.0
    return PointCloud(points=pts, colors=colors, pixel_index=pixel_index)


def project(points: np.ndarray, intrinsics: CameraIntrinsics):
    """Project (N,3) camera-frame points to pixels.

    Returns (pixels (N,2), depths (N,), valid (N,) bool); points with z <= 0
    are flagged invalid and get NaN pixel coordinates.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    valid = z > 0
    safe_z = np.where(valid, z, 1.0)
    u = intrinsics.fx * pts[:, 0] / safe_z + intrinsics.cx
    v = intrinsics.fy * pts[:, 1] / safe_z + intrinsics.cy
    pix = np.column_stack([u, v])
    pix[~valid] = np.nan
    return pix, z.copy(), valid


def transform(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Apply a rigid transform to every point; colors and pixel_index carry over."""
    return PointCloud(points=pose.apply(cloud.points), colors=cloud.colors,
                      pixel_index=cloud.pixel_index)
