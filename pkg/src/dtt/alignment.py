"""Rigid alignment: closed-form correspondence solve and trimmed ICP.

kabsch_align is the SVD least-squares solution with reflection correction;
icp alternates exact nearest-neighbor correspondence, distance gating,
trimming, and kabsch_align until the inlier RMSE settles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError, InputError, RegistrationError
from .geometry import PointCloud, Pose, compose


@dataclass(frozen=True)
class Correspondences:
    """Matched 3D point pairs, source[i] <-> target[i], in meters."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.source, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.target, dtype=np.float64).reshape(-1, 3)
        if len(s) != len(t):
            raise InputError("source/target correspondence counts differ")
        if len(s) < 3:
            raise InputError("need at least 3 correspondences")
        object.__setattr__(self, "source", s)
        object.__setattr__(self, "target", t)


def kabsch_align(corr: Correspondences) -> Pose:
    """Least-squares rigid transform mapping corr.source onto corr.target.

    det(R) = +1 is enforced: a mirrored optimum is folded back to the best
    proper rotation. Degenerate (collinear/coincident) sources are rejected.
    """
    src, dst = corr.source, corr.target
    centroid_s = src.mean(axis=0)
    centroid_t = dst.mean(axis=0)
    a = src - centroid_s
    b = dst - centroid_t
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[1] <= 1e-12 * max(1.0, sv[0]):
        raise DegenerateGeometryError("source correspondences are collinear or coincident")
    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = centroid_t - r @ centroid_s
    return Pose(r, t)


class KdTree:
    """Exact nearest-neighbor index over an (N,3) point set.

    Batch queries go straight to the underlying scipy index; the single-query
    nearest() additionally resolves exact distance ties to the lowest index so
    repeated runs are deterministic even on symmetric inputs.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise InputError("cannot index an empty point set")
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self):
        return len(self.points)

    def query(self, queries):
        """Batch nearest neighbors: returns (distances, indices)."""
        d, i = self._tree.query(np.asarray(queries, dtype=np.float64))
        return d, i

    def nearest(self, query):
        """Single nearest neighbor as (index, distance); ties -> lowest index."""
        q = np.asarray(query, dtype=np.float64).reshape(3)
        d0, i0 = self._tree.query(q)
        ties = self._tree.query_ball_point(q, r=d0)
        if len(ties) > 1:
            cand = np.asarray(sorted(ties))
            dists = np.linalg.norm(self.points[cand] - q, axis=1)
            dmin = dists.min()
            i0 = int(cand[dists == dmin].min())
            d0 = float(dmin)
        return int(i0), float(d0)


def build_kdtree(points) -> KdTree:
    return KdTree(points)


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    convergence_tol: float = 1e-6       # meters, change in inlier RMSE
    trim_fraction: float = 0.1          # worst fraction dropped each iteration
    max_correspondence_distance: float = 0.05  # meters

    def __post_init__(self):
        if not 0 <= self.trim_fraction < 0.5:
            raise InputError("trim_fraction must lie in [0, 0.5)")
        if self.max_iterations < 1:
            raise InputError("max_iterations must be >= 1")


@dataclass(frozen=True)
class IcpResult:
    pose: Pose
    inlier_rmse: float
    inlier_ratio: float
    iterations: int
    converged: bool
    # (rmse_before_align, rmse_after_align, kept) per iteration, on the kept set
    history: tuple = field(default=(), repr=False)


def _cloud_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    arr = np.asarray(cloud, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputError("cloud must be a PointCloud or an (N, 3) array")
    return arr


def icp(source, target, initial: Pose,
        config: IcpConfig | None = None) -> IcpResult:
    """Trimmed point-to-point ICP; the result pose maps source into target.

    Source and target may be PointClouds or plain (N, 3) arrays. Each
    iteration matches every transformed source point to its nearest target
    point, drops matches beyond max_correspondence_distance, trims the worst
    trim_fraction of the rest, and re-solves with kabsch_align. Raises
    RegistrationError (carrying the last pose) when no usable correspondences
    remain.
    """
    config = config or IcpConfig()
    src = _cloud_points(source)
    dst = _cloud_points(target)
    if len(src) == 0 or len(dst) == 0:
        raise InputError("icp requires non-empty source and target clouds")
    tree = KdTree(dst)
    pose = initial
    prev_rmse = None
    history = []
    iterations = 0
    converged = False
    for iterations in range(1, config.max_iterations + 1):
        moved = pose.apply(src)
        dists, idx = tree.query(moved)
        in_range = dists <= config.max_correspondence_distance
        matched = int(in_range.sum())
        if matched < 3:
            raise RegistrationError(
                f"only {matched} correspondences within "
                f"{config.max_correspondence_distance} m", last_pose=pose)
        keep = max(3, int(np.ceil(matched * (1.0 - config.trim_fraction))))
        order = np.argsort(dists[in_range], kind="stable")[:keep]
        sel = np.nonzero(in_range)[0][order]
        pairs_src = moved[sel]
        pairs_dst = dst[idx[sel]]
        rmse_before = float(np.sqrt(np.mean(np.sum((pairs_src - pairs_dst) ** 2, axis=1))))
        try:
            delta = kabsch_align(Correspondences(pairs_src, pairs_dst))
        except DegenerateGeometryError as e:
            raise RegistrationError(f"degenerate correspondence set: {e}",
                                    last_pose=pose) from e
        pose = compose(delta, pose)
        aligned = delta.apply(pairs_src)
        rmse = float(np.sqrt(np.mean(np.sum((aligned - pairs_dst) ** 2, axis=1))))
        history.append((rmse_before, rmse, keep))
        inlier_ratio = matched / len(src)
        if rmse <= config.convergence_tol or (
                prev_rmse is not None and abs(prev_rmse - rmse) < config.convergence_tol):
            converged = True
            break
        prev_rmse = rmse
    return IcpResult(pose=pose, inlier_rmse=rmse, inlier_ratio=inlier_ratio,
                     iterations=iterations, converged=converged,
                     history=tuple(history))
