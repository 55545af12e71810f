"""Label refinement, temporal propagation, segmentation, and bbox export."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .alignment import IcpConfig, icp
from .errors import InputError, PreconditionError, RegistrationError
from .geometry import PointCloud, Pose
from .models import ObjectModel
from .raster import render_objects
from .scene import FrameLabel, Scene, SceneLabelSet

# Scene cloud is cropped to a ball of crop_scale * model diameter around the
# predicted model centroid before registration.
CROP_SCALE = 1.2


def crop_to_ball(cloud: PointCloud, center, radius) -> PointCloud:
    center = np.asarray(center, dtype=np.float64).reshape(3)
    d2 = np.sum((cloud.points - center) ** 2, axis=1)
    keep = d2 <= radius * radius
    return PointCloud(
        points=cloud.points[keep],
        colors=None if cloud.colors is None else cloud.colors[keep],
        pixel_index=None if cloud.pixel_index is None else cloud.pixel_index[keep],
    )


def refine_pose(model: ObjectModel, cloud: PointCloud, initial: Pose,
                joints=None, config: IcpConfig | None = None):
    """Register a posed model against a scene cloud near the initial guess."""
    samples = model.posed_surface_samples(joints)
    centroid = initial.apply(samples.mean(axis=0).reshape(1, 3))[0]
    radius = CROP_SCALE * model.diameter
    local = crop_to_ball(cloud, centroid, radius)
    if len(local) < 3:
        raise RegistrationError(
            f"only {len(local)} scene points within {radius:.3f} m of the guess",
            last_pose=initial)
    return icp(samples, local.points, initial, config=config)


def refine_frame(labels: SceneLabelSet, frame: int, object_id: str,
                 initial: Pose | None = None, joints=None, stride=1,
                 config: IcpConfig | None = None) -> FrameLabel:
    """Refine one object's label in one frame; failure records a rejection."""
    scene = labels.scene
    model = scene.model(object_id)
    prior = labels.get(frame, object_id)
    if prior is not None and prior.status == "verified":
        raise PreconditionError(
            f"frame {frame} label for {object_id!r} is verified; re-seed it first")
    if initial is None:
        if prior is None:
            raise PreconditionError(
                f"frame {frame} has no label for {object_id!r} and no initial pose")
        initial = prior.pose
    if joints is None and prior is not None:
        joints = prior.joints
    joints = model.joint_angles(joints)
    cloud = scene.cloud(frame, stride=stride, with_color=False)
    try:
        result = refine_pose(model, cloud, initial, joints=joints, config=config)
    except RegistrationError as err:
        rejected = FrameLabel(object_id=object_id, pose=err.last_pose or initial,
                              status="rejected", joints=joints, note=str(err))
        return labels.put(frame, rejected)
    label = FrameLabel(object_id=object_id, pose=result.pose, status="refined",
                       inlier_rmse=result.inlier_rmse,
                       inlier_ratio=result.inlier_ratio, joints=joints)
    return labels.put(frame, label)


@dataclass
class PropagationStep:
    frame: int
    status: str            # propagated | rejected | skipped (already verified)
    flagged: bool
    inlier_rmse: float
    inlier_ratio: float
    label: FrameLabel


@dataclass
class PropagationReport:
    object_id: str
    from_frame: int
    steps: list[PropagationStep] = field(default_factory=list)

    @property
    def flagged_frames(self):
        return [s.frame for s in self.steps if s.flagged]

    @property
    def labels(self):
        """Resulting labels in frame order."""
        return [s.label for s in self.steps]


def propagate(labels: SceneLabelSet, object_id: str, from_frame: int,
              to_frame: int | None = None, stride=1,
              config: IcpConfig | None = None,
              progress=None, should_stop=None) -> PropagationReport:
    """Chain refinement forward from a trusted frame.

    Each frame is initialized from the last pose that passed the review
    gates; frames that fail a gate are flagged but the chain continues.
    Verified labels are kept as-is and reused as fresh seeds.
    """
    scene = labels.scene
    seed = labels.get(from_frame, object_id)
    if seed is None:
        raise PreconditionError(
            f"frame {from_frame} has no label for {object_id!r}")
    if seed.status not in ("refined", "verified"):
        raise PreconditionError(
            f"propagation must start from a refined or verified label, "
            f"found {seed.status!r} at frame {from_frame}")
    last = scene.frame_count - 1 if to_frame is None else to_frame
    scene._check_frame(last)
    if last <= from_frame:
        raise InputError(f"to_frame {last} must be after from_frame {from_frame}")

    report = PropagationReport(object_id=object_id, from_frame=from_frame)
    carry = seed  # last label that passed the gates
    for frame in range(from_frame + 1, last + 1):
        if should_stop is not None and should_stop():
            break
        existing = labels.get(frame, object_id)
        if existing is not None and existing.status == "verified":
            step = PropagationStep(frame, "skipped", False,
                                   existing.inlier_rmse, existing.inlier_ratio,
                                   existing)
            carry = existing
        else:
            label = _propagate_one(labels, frame, object_id, carry, stride, config)
            flag = label.status != "propagated" or labels.flagged(label)
            step = PropagationStep(frame, label.status, flag,
                                   label.inlier_rmse, label.inlier_ratio, label)
            if not flag:
                carry = label
        report.steps.append(step)
        if progress is not None:
            progress(step)
    return report


def _propagate_one(labels: SceneLabelSet, frame, object_id, carry, stride, config):
    scene = labels.scene
    model = scene.model(object_id)
    joints = model.joint_angles(carry.joints)
    cloud = scene.cloud(frame, stride=stride, with_color=False)
    try:
        result = refine_pose(model, cloud, carry.pose, joints=joints, config=config)
    except RegistrationError as err:
        rejected = FrameLabel(object_id=object_id, pose=err.last_pose or carry.pose,
                              status="rejected", joints=joints, note=str(err))
        return labels.put(frame, rejected)
    label = FrameLabel(object_id=object_id, pose=result.pose, status="propagated",
                       inlier_rmse=result.inlier_rmse,
                       inlier_ratio=result.inlier_ratio, joints=joints)
    return labels.put(frame, label)


# -- segmentation + boxes ---------------------------------------------------

def frame_instances(scene: Scene, entries: dict[str, FrameLabel]):
    """Rasterizer instances for all non-rejected labels of one frame."""
    out = []
    for oid in sorted(entries):
        label = entries[oid]
        if label.status == "rejected":
            continue
        model = scene.model(oid)
        verts = model.posed_vertices(label.joints)
        out.append((scene.object_index(oid), verts, model.triangles, label.pose))
    return out


OCCLUSION_MARGIN = 0.020


def render_segmentation(scene: Scene, frame: int,
                        entries: dict[str, FrameLabel] | None = None,
                        occlusion_aware: bool = False):
    """Z-buffered object-id mask for one frame; returns (mask, depth).

    With occlusion_aware, pixels whose measured depth is more than 20 mm
    nearer than the rendered surface are reset to background.
    """
    if entries is None:
        entries = scene.load_frame_labels(frame)
    mask, depth, _ = render_objects(scene.intrinsics, frame_instances(scene, entries))
    if occlusion_aware:
        measured = scene.load_depth(frame).meters()
        occluded = (mask > 0) & (measured > 0) & (measured < depth - OCCLUSION_MARGIN)
        mask = mask.copy()
        mask[occluded] = 0
    return mask, depth


def mask_bboxes(mask: np.ndarray) -> dict[int, tuple[int, int, int, int]]:
    """Tight pixel bounds per object id: {id: (u_min, v_min, u_max, v_max)}."""
    out = {}
    for oid in np.unique(mask):
        if oid == 0:
            continue
        vs, us = np.nonzero(mask == oid)
        out[int(oid)] = (int(us.min()), int(vs.min()), int(us.max()), int(vs.max()))
    return out


def bbox_lines(mask: np.ndarray, width: int, height: int) -> list[str]:
    """Normalized center-size detection rows, class index = object index - 1."""
    lines = []
    for oid, (u0, v0, u1, v1) in sorted(mask_bboxes(mask).items()):
        cx = (u0 + u1 + 1) / 2.0 / width
        cy = (v0 + v1 + 1) / 2.0 / height
        w = (u1 - u0 + 1) / width
        h = (v1 - v0 + 1) / height
        lines.append(f"{oid - 1} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}")
    return lines


def export_bboxes(scene: Scene, out_dir, frames=None, write_masks=False) -> int:
    """Write one detection text file per frame; returns frames exported."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if frames is None:
        frames = scene.frame_indices()
    intr = scene.intrinsics
    count = 0
    for frame in frames:
        entries = scene.load_frame_labels(frame)
        mask = scene.load_seg(frame)
        if mask is None or write_masks:
            mask, _ = render_segmentation(scene, frame, entries)
            if write_masks:
                scene.write_seg(frame, mask)
        lines = bbox_lines(mask, intr.width, intr.height)
        path = out_dir / f"{frame:06d}.txt"
        path.write_text("".join(line + "\n" for line in lines))
        count += 1
    return count
