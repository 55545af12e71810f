"""Synthetic scene generation: posed renders of a model on a dark background.

Every emitted label is exact by construction; depth noise is applied to the
depth images only. All randomness for frame k is drawn from a stream keyed by
(seed, k), so generation order or parallelism never changes the output.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError
from .geometry import CameraIntrinsics, Pose, rotation_about_axis
from .models import ObjectModel, make_demo_rover
from .raster import render_objects
from .scene import FrameLabel, Scene, create_scene, frame_name, _atomic_write_bytes, _png_bytes

MODES = ("independent", "trajectory")


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0,
                            width=640, height=480, depth_scale=0.001)


def _range2(value, name) -> tuple[float, float]:
    lo, hi = (float(value[0]), float(value[1]))
    if not lo <= hi:
        raise InputError(f"{name} range must satisfy lo <= hi, got ({lo}, {hi})")
    return (lo, hi)


@dataclass(frozen=True)
class SynthConfig:
    """Sampler and noise settings for one generated sequence."""

    model: object = "demo-rover"            # ObjectModel, .ply path, or "demo-rover"
    frame_count: int = 1
    seed: int = 0
    mode: str = "independent"
    distances: tuple = (0.5, 1.0, 2.0)      # sampled as a discrete set, meters
    yaw_range: tuple = (-math.pi, math.pi)
    pitch_range: tuple = (-0.5, 0.5)
    roll_range: tuple = (-0.5, 0.5)
    jitter_px: float = 30.0                 # uniform image-plane offset of the origin
    joint_ranges: dict | None = None        # per part; None = model's declared ranges
    background: tuple = (8, 8, 8)           # uint8 RGB
    background_noise: float = 2.0 / 255.0   # per-pixel Gaussian, [0,1] units
    depth_sigma: float = 0.003              # meters, additive on valid depth
    dropout: float = 0.02                   # fraction of valid depth zeroed
    rot_step: float = 0.025                 # trajectory mode, max radians per frame
    trans_step: float = 0.008               # trajectory mode, max meters per frame
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)

    def __post_init__(self):
        if self.frame_count < 1:
            raise InputError("frame_count must be >= 1")
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if len(self.distances) == 0 or any(d <= 0 for d in self.distances):
            raise InputError("distances must be a non-empty set of positive meters")
        object.__setattr__(self, "distances", tuple(float(d) for d in self.distances))
        for name in ("yaw_range", "pitch_range", "roll_range"):
            object.__setattr__(self, name, _range2(getattr(self, name), name))
        if self.jitter_px < 0 or self.depth_sigma < 0 or self.background_noise < 0:
            raise InputError("noise magnitudes must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise InputError("dropout must be in [0, 1)")

    def to_json_dict(self) -> dict:
        d = {
            "model": self.model if isinstance(self.model, str) else self.model.id,
            "frame_count": self.frame_count,
            "seed": self.seed,
            "mode": self.mode,
            "distances": list(self.distances),
            "yaw_range": list(self.yaw_range),
            "pitch_range": list(self.pitch_range),
            "roll_range": list(self.roll_range),
            "jitter_px": self.jitter_px,
            "background": list(self.background),
            "background_noise": self.background_noise,
            "depth_sigma": self.depth_sigma,
            "dropout": self.dropout,
            "rot_step": self.rot_step,
            "trans_step": self.trans_step,
            "intrinsics": self.intrinsics.to_json_dict(),
        }
        if self.joint_ranges is not None:
            d["joint_ranges"] = {k: list(v) for k, v in self.joint_ranges.items()}
        return d

    @staticmethod
    def from_json_dict(d: dict) -> "SynthConfig":
        kwargs = dict(d)
        if "intrinsics" in kwargs:
            kwargs["intrinsics"] = CameraIntrinsics.from_json_dict(kwargs["intrinsics"])
        for key in ("distances", "yaw_range", "pitch_range", "roll_range", "background"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("joint_ranges") is not None:
            kwargs["joint_ranges"] = {k: tuple(v) for k, v in kwargs["joint_ranges"].items()}
        return SynthConfig(**kwargs)

    @staticmethod
    def load(path) -> "SynthConfig":
        with open(path) as f:
            return SynthConfig.from_json_dict(json.load(f))


def resolve_model(ref) -> ObjectModel:
    if isinstance(ref, ObjectModel):
        return ref
    if ref == "demo-rover":
        return make_demo_rover()
    path = Path(ref)
    if not path.exists():
        raise InputError(f"model reference {ref!r} is not a file or a known name")
    return ObjectModel.load(path)


def sample_articulation(model: ObjectModel, joints) -> np.ndarray:
    """Vertices with each part rotated about its joint; base vertices fixed."""
    return model.posed_vertices(joints)


def _euler_rotation(yaw, pitch, roll) -> np.ndarray:
    ry = rotation_about_axis((0.0, 1.0, 0.0), yaw)
    rx = rotation_about_axis((1.0, 0.0, 0.0), pitch)
    rz = rotation_about_axis((0.0, 0.0, 1.0), roll)
    return ry @ rx @ rz


def _sample_pose(config: SynthConfig, rng) -> Pose:
    d = float(rng.choice(np.asarray(config.distances)))
    yaw = rng.uniform(*config.yaw_range)
    pitch = rng.uniform(*config.pitch_range)
    roll = rng.uniform(*config.roll_range)
    ju, jv = rng.uniform(-config.jitter_px, config.jitter_px, size=2)
    intr = config.intrinsics
    t = np.array([ju * d / intr.fx, jv * d / intr.fy, d])
    return Pose(rotation=_euler_rotation(yaw, pitch, roll), translation=t)


def _sample_joints(config: SynthConfig, model: ObjectModel, rng) -> dict:
    out = {}
    for part in model.parts:
        lo, hi = part.angle_range
        if config.joint_ranges is not None:
            lo, hi = config.joint_ranges.get(part.name, (lo, hi))
        out[part.name] = float(rng.uniform(lo, hi))
    return out


def _random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.array([0.0, 0.0, 1.0])


def _frame_rng(seed: int, frame: int, lane: int):
    # lane 0 = pose/joint sampling, lane 1 = image noise
    return np.random.default_rng((int(seed), int(frame), int(lane)))


def _sample_sequence(config: SynthConfig, model: ObjectModel):
    """Per-frame (pose, joints). Trajectory deltas come from each frame's own
    stream so the chain is reproducible frame-by-frame."""
    poses, joints = [], []
    if config.mode == "independent":
        for k in range(config.frame_count):
            rng = _frame_rng(config.seed, k, 0)
            poses.append(_sample_pose(config, rng))
            joints.append(_sample_joints(config, model, rng))
        return poses, joints
    rng0 = _frame_rng(config.seed, 0, 0)
    pose = _sample_pose(config, rng0)
    fixed_joints = _sample_joints(config, model, rng0)
    poses.append(pose)
    joints.append(fixed_joints)
    for k in range(1, config.frame_count):
        rng = _frame_rng(config.seed, k, 0)
        angle = rng.uniform(0.0, config.rot_step)
        axis = _random_unit(rng)
        step = rng.uniform(0.0, config.trans_step) * _random_unit(rng)
        # tumble in place: orientation and position step independently so
        # per-frame motion is bounded by rot_step and trans_step exactly
        pose = Pose(rotation=rotation_about_axis(axis, angle) @ pose.rotation,
                    translation=pose.translation + step)
        poses.append(pose)
        joints.append(fixed_joints)
    return poses, joints


def _face_colors(model: ObjectModel) -> np.ndarray:
    if model.vertex_colors is None:
        return np.full((len(model.triangles), 3), 0.6)
    return model.vertex_colors[model.triangles].mean(axis=1)


def _render_frame(config: SynthConfig, model: ObjectModel, pose: Pose,
                  joints: dict, rng):
    intr = config.intrinsics
    verts = model.posed_vertices(joints)
    mask, depth, buffers = render_objects(intr, [(1, verts, model.triangles, pose)])

    # color: flat shading per face against a noisy near-black background
    bg = np.asarray(config.background, dtype=np.float64) / 255.0
    color = np.empty((intr.height, intr.width, 3))
    color[:] = bg
    color += rng.normal(0.0, config.background_noise, size=color.shape)
    hit = mask > 0
    shades = _face_colors(model)
    color[hit] = shades[buffers.face[hit]]
    color8 = np.clip(np.round(color * 255.0), 0, 255).astype(np.uint8)

    z = depth.astype(np.float64)
    valid = hit & (z > 0)
    if config.depth_sigma > 0:
        noise = rng.normal(0.0, config.depth_sigma, size=z.shape)
        z = np.where(valid, z + noise, z)
    if config.dropout > 0:
        drop = rng.random(size=z.shape) < config.dropout
        valid = valid & ~drop
    raw = np.zeros(z.shape, dtype=np.uint16)
    units = np.round(z[valid] / intr.depth_scale)
    raw[valid] = np.clip(units, 0, 65535).astype(np.uint16)
    return color8, raw, mask


def _save_png(path: Path, array: np.ndarray):
    _atomic_write_bytes(path, _png_bytes(Image.fromarray(array)))


def generate(config: SynthConfig, out, threads: int = 1) -> Scene:
    """Emit a fully labeled synthetic scene directory.

    Frames are independent given the sampled sequence, so any thread count
    produces identical bytes.
    """
    model = resolve_model(config.model)
    scene = create_scene(out, [model.id], config.frame_count, config.intrinsics)
    model.save(scene.path / "models")
    poses, joints = _sample_sequence(config, model)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(
                lambda k: write_frame(scene, config, model, k, poses[k], joints[k]),
                range(config.frame_count)))
    else:
        for k in range(config.frame_count):
            write_frame(scene, config, model, k, poses[k], joints[k])
    return Scene(scene.path)


def write_frame(scene: Scene, config: SynthConfig, model: ObjectModel,
                frame: int, pose: Pose, joints: dict):
    """Render and write one frame plus its exact label; parallel-safe."""
    rng = _frame_rng(config.seed, frame, 1)
    color, raw, mask = _render_frame(config, model, pose, joints, rng)
    name = frame_name(frame)
    _save_png(scene.path / "frames" / f"{name}.color.png", color)
    _save_png(scene.path / "frames" / f"{name}.depth.png", raw)
    _save_png(scene.path / "labels" / f"{name}.seg.png", mask)
    label = FrameLabel(object_id=model.id, pose=pose, status="verified",
                       inlier_rmse=0.0, inlier_ratio=1.0, joints=joints)
    payload = {model.id: label.to_json_dict()}
    _atomic_write_bytes(scene.path / "labels" / f"{name}.pose.json",
                        (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode())
