"""Software z-buffer rasterizer for segmentation and synthetic depth.

Scanline-free per-triangle fill: pixel centers (integer coordinates) are
tested against screen-space edge functions with the top-left rule, and depth
is interpolated perspective-correctly (1/z linear in screen space), so a
covered pixel's backprojected point lies exactly on its triangle's plane.
No back-face culling: thin meshes may be single-sided.
"""

from __future__ import annotations

import numpy as np

from .geometry import CameraIntrinsics, Pose

_Z_NEAR = 1e-6


def _clip_near(tri_cam):
    """Clip one camera-space triangle against z >= _Z_NEAR.

    Returns a list of triangles (possibly empty, one, or two).
    """
    inside = tri_cam[:, 2] >= _Z_NEAR
    if inside.all():
        return [tri_cam]
    if not inside.any():
        return []
    poly = []
    for i in range(3):
        a, b = tri_cam[i], tri_cam[(i + 1) % 3]
        ain, bin_ = inside[i], inside[(i + 1) % 3]
        if ain:
            poly.append(a)
        if ain != bin_:
            t = (_Z_NEAR - a[2]) / (b[2] - a[2])
            poly.append(a + t * (b - a))
    if len(poly) < 3:
        return []
    poly = np.asarray(poly)
    return [poly[[0, k, k + 1]] for k in range(1, len(poly) - 1)]


class RenderBuffers:
    """Shared z-buffer plus per-pixel object id (0 = background)."""

    def __init__(self, intrinsics: CameraIntrinsics):
        self.intrinsics = intrinsics
        self.depth = np.full((intrinsics.height, intrinsics.width), np.inf)
        self.mask = np.zeros((intrinsics.height, intrinsics.width), dtype=np.uint8)
        self.face = np.full((intrinsics.height, intrinsics.width), -1, dtype=np.int64)

    def finished_depth(self) -> np.ndarray:
        """Depth in meters with background pixels set to 0."""
        out = np.where(np.isinf(self.depth), 0.0, self.depth)
        return out

    def draw_mesh(self, vertices, triangles, pose: Pose, object_id: int):
        """Rasterize a posed mesh into the shared buffers."""
        if not 1 <= object_id <= 255:
            raise ValueError("object_id must fit an 8-bit mask (1..255)")
        cam = pose.apply(vertices)
        for ti, tri in enumerate(triangles):
            for tv in _clip_near(cam[tri]):
                self._fill(tv, object_id, ti)

    def _fill(self, tv, object_id, face_index):
        intr = self.intrinsics
        z = tv[:, 2]
        u = intr.fx * tv[:, 0] / z + intr.cx
        v = intr.fy * tv[:, 1] / z + intr.cy
        x0 = max(0, int(np.ceil(u.min())))
        x1 = min(intr.width - 1, int(np.floor(u.max())))
        y0 = max(0, int(np.ceil(v.min())))
        y1 = min(intr.height - 1, int(np.floor(v.max())))
        if x0 > x1 or y0 > y1:
            return
        # signed doubled area; orient positive so edge tests read w >= / > 0
        area2 = (u[1] - u[0]) * (v[2] - v[0]) - (v[1] - v[0]) * (u[2] - u[0])
        if area2 == 0.0:
            return
        order = (0, 1, 2) if area2 > 0 else (0, 2, 1)
        ux, vx = u[list(order)], v[list(order)]
        area2 = abs(area2)
        px, py = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.float64),
                             np.arange(y0, y1 + 1, dtype=np.float64))
        cover = np.ones(px.shape, dtype=bool)
        w = []
        for k in range(3):
            ax, ay = ux[(k + 1) % 3], vx[(k + 1) % 3]
            bx, by = ux[(k + 2) % 3], vx[(k + 2) % 3]
            wk = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
            dx, dy = bx - ax, by - ay
            top_left = (dy == 0 and dx > 0) or dy < 0
            cover &= (wk > 0) | ((wk == 0) if top_left else False)
            w.append(wk)
        if not cover.any():
            return
        zo = np.asarray([z[i] for i in order])
        inv_z = (w[0] * (1.0 / zo[0]) + w[1] * (1.0 / zo[1]) + w[2] * (1.0 / zo[2])) / area2
        with np.errstate(divide="ignore"):
            depth = 1.0 / inv_z
        ys, xs = np.nonzero(cover)
        d = depth[ys, xs]
        gy, gx = ys + y0, xs + x0
        nearer = d < self.depth[gy, gx]
        gy, gx, d = gy[nearer], gx[nearer], d[nearer]
        self.depth[gy, gx] = d
        self.mask[gy, gx] = object_id
        self.face[gy, gx] = face_index


def render_objects(intrinsics: CameraIntrinsics, instances):
    """Render [(object_id, vertices, triangles, pose), ...] with one z-buffer.

    Returns (mask uint8, depth float64 meters with 0 background, buffers).
    """
    buffers = RenderBuffers(intrinsics)
    for object_id, vertices, triangles, pose in instances:
        buffers.draw_mesh(vertices, triangles, pose, object_id)
    return buffers.mask, buffers.finished_depth(), buffers
