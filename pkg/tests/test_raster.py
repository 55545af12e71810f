import numpy as np
import pytest

from dtt.geometry import Pose
from dtt.models import make_uv_sphere
from dtt.raster import RenderBuffers, render_objects
from tests.conftest import small_intrinsics


def point_triangle_distance(p, a, b, c):
    """Exact distance from a point to a triangle via clamped projection."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return np.linalg.norm(ap)
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return np.linalg.norm(bp)
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        return np.linalg.norm(ap - ab * (d1 / (d1 - d3)))
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return np.linalg.norm(cp)
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        return np.linalg.norm(ap - ac * (d2 / (d2 - d6)))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return np.linalg.norm(p - (b + w * (c - b)))
    n = np.cross(ab, ac)
    return abs(ap @ n) / np.linalg.norm(n)


def square_instance(object_id, half, z, shift=(0.0, 0.0)):
    """Camera-facing square of given half-size at depth z."""
    sx, sy = shift
    verts = np.array([[-half + sx, -half + sy, z], [half + sx, -half + sy, z],
                      [half + sx, half + sy, z], [-half + sx, half + sy, z]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    return (object_id, verts, tris, Pose.identity())


class TestCoverage:
    def test_full_frame_square(self):
        intr = small_intrinsics()
        # a square big enough to cover the whole image at z = 1
        mask, depth, _ = render_objects(intr, [square_instance(1, 2.0, 1.0)])
        assert (mask == 1).all()
        assert np.allclose(depth, 1.0, atol=1e-12)

    def test_shared_edge_covered_exactly_once(self):
        # the two triangles of a quad share a diagonal: the top-left rule
        # must paint every interior pixel exactly once with a single depth
        intr = small_intrinsics()
        buffers = RenderBuffers(intr)
        verts = np.array([[-0.3, -0.3, 1.0], [0.3, -0.3, 1.0],
                          [0.3, 0.3, 1.0], [-0.3, 0.3, 1.0]])
        buffers.draw_mesh(verts, np.array([[0, 1, 2], [0, 2, 3]]),
                          Pose.identity(), 1)
        inside = buffers.mask == 1
        assert inside.sum() > 100
        assert np.allclose(buffers.depth[inside], 1.0, atol=1e-12)
        # faces partition the covered pixels
        assert set(np.unique(buffers.face[inside])) == {0, 1}

    def test_offscreen_triangle_ignored(self):
        intr = small_intrinsics()
        mask, _, _ = render_objects(
            intr, [square_instance(1, 0.1, 1.0, shift=(10.0, 0.0))])
        assert not mask.any()

    def test_behind_camera_clipped(self):
        intr = small_intrinsics()
        mask, _, _ = render_objects(intr, [square_instance(1, 0.5, -1.0)])
        assert not mask.any()

    def test_object_id_range_checked(self):
        intr = small_intrinsics()
        buffers = RenderBuffers(intr)
        verts = np.array([[0.0, 0, 1], [0.1, 0, 1], [0, 0.1, 1]])
        with pytest.raises(ValueError):
            buffers.draw_mesh(verts, np.array([[0, 1, 2]]), Pose.identity(), 0)


class TestZBuffer:
    def test_nearer_object_wins_overlap(self):
        intr = small_intrinsics()
        near = square_instance(1, 0.15, 0.8)
        far = square_instance(2, 0.40, 1.6)
        for order in ([near, far], [far, near]):
            mask, depth, _ = render_objects(intr, order)
            h, w = mask.shape
            assert mask[h // 2, w // 2] == 1
            assert depth[h // 2, w // 2] == pytest.approx(0.8, abs=1e-12)
            assert 2 in np.unique(mask)

    def test_perspective_correct_depth_on_tilted_plane(self):
        # plane z = 1 + 0.5x: interpolated depth must satisfy the plane
        # equation at each pixel center, not a screen-space lerp
        intr = small_intrinsics()
        verts = np.array([[-0.8, -0.8, 1 - 0.4], [0.8, -0.8, 1 + 0.4],
                          [0.8, 0.8, 1 + 0.4], [-0.8, 0.8, 1 - 0.4]])
        tris = np.array([[0, 1, 2], [0, 2, 3]])
        mask, depth, _ = render_objects(intr, [(1, verts, tris, Pose.identity())])
        vs, us = np.nonzero(mask)
        z = depth[vs, us]
        x = (us - intr.cx) * z / intr.fx
        assert np.allclose(z, 1 + 0.5 * x, atol=1e-9)


class TestReprojection:
    def test_every_pixel_reprojects_onto_its_face(self):
        intr = small_intrinsics()
        verts, tris = make_uv_sphere(0.25)
        pose = Pose(np.eye(3), np.array([0.05, -0.03, 1.1]))
        mask, depth, buffers = render_objects(intr, [(1, verts, tris, pose)])
        cam = pose.apply(verts)
        vs, us = np.nonzero(mask)
        z = depth[vs, us]
        pts = np.column_stack([(us - intr.cx) * z / intr.fx,
                               (vs - intr.cy) * z / intr.fy, z])
        worst = 0.0
        for p, face in zip(pts, buffers.face[vs, us]):
            a, b, c = cam[tris[face]]
            worst = max(worst, point_triangle_distance(p, a, b, c))
        assert worst < 1e-9

    def test_sphere_centroid_matches_projection(self):
        intr = small_intrinsics()
        verts, tris = make_uv_sphere(0.25)
        center = np.array([0.1, -0.05, 2.0])
        pose = Pose(np.eye(3), center)
        mask, _, _ = render_objects(intr, [(1, verts, tris, pose)])
        vs, us = np.nonzero(mask)
        cu = us.mean()
        cv = vs.mean()
        eu = intr.fx * center[0] / center[2] + intr.cx
        ev = intr.fy * center[1] / center[2] + intr.cy
        assert abs(cu - eu) <= 1.0
        assert abs(cv - ev) <= 1.0
