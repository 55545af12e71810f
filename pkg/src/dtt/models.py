"""Object models: triangle meshes with sampled surfaces and optional joints.

Surface samples are drawn once per model by area-weighted uniform triangle
sampling with a fixed seed, so every run of the toolkit sees identical sample
sets. The diameter is the maximum pairwise distance over those samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import rotation_about_axis
from .ply import read_ply, write_ply

SURFACE_SAMPLE_COUNT = 4096
_SAMPLE_SEED = 61408  # fixed: surface samples must be identical across runs


@dataclass(frozen=True)
class Part:
    """A jointed vertex subset rotating about axis through pivot."""

    name: str
    vertex_indices: np.ndarray
    axis: np.ndarray
    pivot: np.ndarray
    angle_range: tuple

    def __post_init__(self):
        object.__setattr__(self, "vertex_indices",
                           np.asarray(self.vertex_indices, dtype=np.int64))
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=np.float64))
        object.__setattr__(self, "pivot", np.asarray(self.pivot, dtype=np.float64))
        lo, hi = self.angle_range
        if not lo <= hi:
            raise InputError(f"part {self.name!r} has empty angle range")
        object.__setattr__(self, "angle_range", (float(lo), float(hi)))


class ObjectModel:
    """Triangle mesh plus a precomputed uniform surface sampling.

    parts, when present, describe articulation; joint angles default to 0
    (the rest configuration) everywhere they are not specified.
    """

    def __init__(self, model_id, vertices, triangles, parts=None,
                 vertex_colors=None, sample_count=SURFACE_SAMPLE_COUNT):
        self.id = str(model_id)
        self.vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise InputError("triangle index out of range")
        if self.triangles.size and self.triangles.min() < 0:
            raise InputError("negative triangle index")
        self.vertex_colors = None
        if vertex_colors is not None:
            self.vertex_colors = np.asarray(vertex_colors, dtype=np.float64).reshape(-1, 3)
            if self.vertex_colors.shape[0] != self.vertices.shape[0]:
                raise InputError("vertex_colors length does not match vertices")
        self.parts = tuple(parts) if parts else ()
        seen = set()
        for p in self.parts:
            s = set(p.vertex_indices.tolist())
            if s & seen:
                raise InputError("part vertex subsets overlap")
            if s and max(s) >= len(self.vertices):
                raise InputError(f"part {p.name!r} references missing vertices")
            seen |= s
        self._triangle_part = self._assign_triangle_parts()
        self.surface_samples, self._sample_part = self._sample_surface(sample_count)
        self.diameter = _max_pairwise_distance(self.surface_samples)
        if not self.diameter > 0:
            raise InputError("degenerate model: zero diameter")

    def _assign_triangle_parts(self):
        """Part index per triangle (-1 = base); a triangle belongs to a part
        only when all three vertices do."""
        out = np.full(len(self.triangles), -1, dtype=np.int64)
        for pi, part in enumerate(self.parts):
            members = np.zeros(len(self.vertices), dtype=bool)
            members[part.vertex_indices] = True
            out[members[self.triangles].all(axis=1)] = pi
        return out

    def _sample_surface(self, count):
        tri = self.vertices[self.triangles]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        total = areas.sum()
        if total <= 0:
            raise InputError("model has zero surface area")
        rng = np.random.default_rng(_SAMPLE_SEED)
        tidx = rng.choice(len(areas), size=count, p=areas / total)
        r1 = np.sqrt(rng.random(count))
        r2 = rng.random(count)
        a, b, c = tri[tidx, 0], tri[tidx, 1], tri[tidx, 2]
        pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
        return pts, self._triangle_part[tidx]

    def joint_angles(self, joints=None) -> dict:
        """Full per-part angle map with defaults filled in and ranges checked."""
        joints = dict(joints or {})
        known = {p.name for p in self.parts}
        for name in joints:
            if name not in known:
                raise InputError(f"unknown joint {name!r} for model {self.id!r}")
        out = {}
        for p in self.parts:
            angle = float(joints.get(p.name, 0.0))
            lo, hi = p.angle_range
            if not lo <= angle <= hi:
                raise InputError(
                    f"joint {p.name!r} angle {angle} outside range [{lo}, {hi}]")
            out[p.name] = angle
        return out

    def _articulate(self, points, point_part, joints):
        angles = self.joint_angles(joints)
        out = np.array(points, dtype=np.float64)
        for pi, part in enumerate(self.parts):
            angle = angles[part.name]
            if angle == 0.0:
                continue
            rot = rotation_about_axis(part.axis, angle)
            sel = point_part == pi
            out[sel] = (out[sel] - part.pivot) @ rot.T + part.pivot
        return out

    def posed_vertices(self, joints=None) -> np.ndarray:
        vert_part = np.full(len(self.vertices), -1, dtype=np.int64)
        for pi, part in enumerate(self.parts):
            vert_part[part.vertex_indices] = pi
        return self._articulate(self.vertices, vert_part, joints)

    def posed_surface_samples(self, joints=None) -> np.ndarray:
        return self._articulate(self.surface_samples, self._sample_part, joints)

    def save(self, directory):
        """Write <id>.ply (binary) and, when articulated, <id>.parts.json."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_ply(directory / f"{self.id}.ply", self.vertices, self.triangles,
                  colors=self.vertex_colors)
        if self.parts:
            payload = {"parts": [{
                "name": p.name,
                "vertices": p.vertex_indices.tolist(),
                "axis": p.axis.tolist(),
                "pivot": p.pivot.tolist(),
                "range": list(p.angle_range),
            } for p in self.parts]}
            with open(directory / f"{self.id}.parts.json", "w") as f:
                json.dump(payload, f, sort_keys=True, indent=2)
                f.write("\n")

    @staticmethod
    def load(ply_path, model_id=None) -> "ObjectModel":
        ply_path = Path(ply_path)
        mesh = read_ply(ply_path)
        if mesh["faces"] is None or len(mesh["faces"]) == 0:
            raise InputError(f"{ply_path} has no triangle faces")
        parts = []
        sidecar = ply_path.parent / (ply_path.stem + ".parts.json")
        if sidecar.exists():
            with open(sidecar) as f:
                for entry in json.load(f)["parts"]:
                    parts.append(Part(entry["name"], entry["vertices"],
                                      entry["axis"], entry["pivot"],
                                      tuple(entry["range"])))
        return ObjectModel(model_id or ply_path.stem, mesh["vertices"],
                           mesh["faces"], parts=parts,
                           vertex_colors=mesh["colors"])


def _max_pairwise_distance(points, chunk=512):
    best = 0.0
    for i in range(0, len(points), chunk):
        block = points[i:i + chunk]
        d2 = ((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


# ---------------------------------------------------------------------------
# Procedural meshes used by the synthetic generator and the test suite.

def make_box(size, center=(0, 0, 0)):
    """Axis-aligned box; returns (vertices (8,3), triangles (12,3))."""
    sx, sy, sz = np.asarray(size, dtype=np.float64) / 2.0
    cx, cy, cz = center
    verts = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    verts += np.array([cx, cy, cz])
    tris = np.array([
        [0, 1, 3], [0, 3, 2],  # x-
        [4, 6, 7], [4, 7, 5],  # x+
        [0, 4, 5], [0, 5, 1],  # y-
        [2, 3, 7], [2, 7, 6],  # y+
        [0, 2, 6], [0, 6, 4],  # z-
        [1, 5, 7], [1, 7, 3],  # z+
    ], dtype=np.int64)
    return verts, tris


def make_cylinder(radius, length, axis="x", center=(0, 0, 0), segments=16):
    """Closed cylinder whose symmetry axis is a coordinate axis."""
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    ring = np.column_stack([np.cos(ang), np.sin(ang)]) * radius
    half = length / 2.0
    lo = np.column_stack([np.full(segments, -half), ring[:, 0], ring[:, 1]])
    hi = np.column_stack([np.full(segments, half), ring[:, 0], ring[:, 1]])
    caps = np.array([[-half, 0, 0], [half, 0, 0]])
    verts = np.vstack([lo, hi, caps])
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [[i, j, segments + i], [j, segments + j, segments + i]]
        tris += [[2 * segments, j, i], [2 * segments + 1, segments + i, segments + j]]
    verts_axis = {"x": verts, "y": verts[:, [1, 0, 2]] * [1, 1, 1],
                  "z": verts[:, [1, 2, 0]]}[axis]
    return verts_axis + np.asarray(center, dtype=np.float64), np.array(tris, dtype=np.int64)


def make_uv_sphere(radius, center=(0, 0, 0), rings=24, segments=32):
    verts = [(0, 0, radius), (0, 0, -radius)]
    for r in range(1, rings):
        phi = np.pi * r / rings
        for s in range(segments):
            theta = 2 * np.pi * s / segments
            verts.append((radius * np.sin(phi) * np.cos(theta),
                          radius * np.sin(phi) * np.sin(theta),
                          radius * np.cos(phi)))
    verts = np.asarray(verts, dtype=np.float64) + np.asarray(center, dtype=np.float64)

    def vid(r, s):
        return 2 + (r - 1) * segments + (s % segments)

    tris = []
    for s in range(segments):
        tris.append([0, vid(1, s), vid(1, s + 1)])
        tris.append([1, vid(rings - 1, s + 1), vid(rings - 1, s)])
    for r in range(1, rings - 1):
        for s in range(segments):
            a, b = vid(r, s), vid(r, s + 1)
            c, d = vid(r + 1, s), vid(r + 1, s + 1)
            tris += [[a, c, d], [a, d, b]]
    return verts, np.array(tris, dtype=np.int64)


def _merge(pieces):
    """pieces: list of (verts, tris, rgb) -> merged vertices/triangles/colors."""
    verts, tris, cols = [], [], []
    offset = 0
    for v, t, rgb in pieces:
        verts.append(v)
        tris.append(t + offset)
        cols.append(np.tile(np.asarray(rgb, dtype=np.float64), (len(v), 1)))
        offset += len(v)
    return np.vstack(verts), np.vstack(tris), np.vstack(cols)


def make_demo_rover(model_id="leo_rover") -> ObjectModel:
    """Desk-scale articulated rover: boxy body, four wheels, tilting mast.

    Roughly 0.45 x 0.40 x 0.45 m with the mast up; the mast is a joint
    rotating about the y axis at its base, range +/-0.8 rad.
    """
    body = make_box((0.42, 0.28, 0.14), center=(0, 0, 0.11))
    wheels = []
    for dx in (-0.15, 0.15):
        for dy in (-0.17, 0.17):
            wheels.append(make_cylinder(0.062, 0.05, axis="y",
                                        center=(dx, dy, 0.062), segments=14))
    mast_pole = make_box((0.03, 0.03, 0.22), center=(-0.12, 0.0, 0.29))
    mast_head = make_box((0.10, 0.06, 0.05), center=(-0.12, 0.0, 0.425))
    pieces = [(body[0], body[1], (0.55, 0.55, 0.58))]
    pieces += [(v, t, (0.18, 0.18, 0.18)) for v, t in wheels]
    n_before_mast = sum(len(v) for v, _, _ in pieces)
    pieces.append((mast_pole[0], mast_pole[1], (0.75, 0.72, 0.70)))
    pieces.append((mast_head[0], mast_head[1], (0.25, 0.30, 0.60)))
    verts, tris, cols = _merge(pieces)
    mast_vertices = np.arange(n_before_mast, len(verts))
    mast = Part("mast", mast_vertices, axis=(0, 1, 0), pivot=(-0.12, 0.0, 0.18),
                angle_range=(-0.8, 0.8))
    return ObjectModel(model_id, verts, tris, parts=[mast], vertex_colors=cols)


def make_sphere_model(model_id="sphere", radius=1.0) -> ObjectModel:
    verts, tris = make_uv_sphere(radius)
    return ObjectModel(model_id, verts, tris)


def make_corner_target(model_id="corner_target", size=0.22) -> ObjectModel:
    """Three mutually perpendicular open sheets meeting at a corner.

    Zero-thickness geometry whose inner faces all stay depth-visible from
    the front, so point-to-point registration sees no hidden-surface
    correspondences, and the three orthogonal planes pin all six degrees of
    freedom. Built facing the camera: at identity pose the inner corner
    diagonal points along -z. The reference target for registration tests.
    """
    a = float(size)
    base = np.array([
        [0, 0, 0], [0, a, 0], [0, a, a], [0, 0, a],   # sheet in x=0
        [0, 0, 0], [a, 0, 0], [a, 0, a], [0, 0, a],   # sheet in y=0
        [0, 0, 0], [a, 0, 0], [a, a, 0], [0, a, 0],   # sheet in z=0
    ], dtype=np.float64)
    tris = np.array([
        [0, 1, 2], [0, 2, 3],
        [4, 5, 6], [4, 6, 7],
        [8, 9, 10], [8, 10, 11],
    ], dtype=np.int64)
    cols = np.array(
        [[0.80, 0.30, 0.22]] * 4 + [[0.25, 0.60, 0.30]] * 4
        + [[0.25, 0.40, 0.75]] * 4)
    # face the inner diagonal (1,1,1)/sqrt(3) toward the camera (-z), then
    # center on the centroid
    u = np.full(3, 1.0 / np.sqrt(3.0))
    v = np.array([0.0, 0.0, -1.0])
    axis = np.cross(u, v)
    axis /= np.linalg.norm(axis)
    rot = rotation_about_axis(axis, float(np.arccos(np.dot(u, v))))
    verts = base @ rot.T
    verts -= verts.mean(axis=0)
    return ObjectModel(model_id, verts, tris, vertex_colors=cols)
