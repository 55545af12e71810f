"""Scene directory access and the label review state machine.

Layout (all frame indices zero-padded to 6 digits):

    scene/meta.json                  object list, frame count, extrinsics ref
    scene/camera_intrinsics.json
    scene/extrinsics.json            {"mocap_to_camera": {"q", "t"}}
    scene/frames/NNNNNN.color.png    8-bit RGB
    scene/frames/NNNNNN.depth.png    16-bit single channel, raw units
    scene/labels/NNNNNN.pose.json    per-object label records
    scene/labels/NNNNNN.seg.png      8-bit object-id mask
    scene/models/<id>.ply            (+ optional <id>.parts.json)

All label writes are write-temp-then-rename; batch saves go through a journal
so a crash mid-save recovers to exactly the pre- or post-save state.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError, PreconditionError, TransitionError
from .geometry import CameraIntrinsics, DepthFrame, Pose, backproject
from .models import ObjectModel

STATUSES = ("seeded", "refined", "propagated", "verified", "rejected")

# Mechanical transitions (old -> allowed new). "None" is an unlabeled frame.
# Review verdicts additionally require the current status to be refined or
# propagated; propagation never overwrites a verified label.
_ALLOWED = {
    None: {"seeded", "refined", "propagated", "rejected"},
    "seeded": {"seeded", "refined", "propagated", "rejected"},
    "refined": {"seeded", "refined", "propagated", "verified", "rejected"},
    "propagated": {"seeded", "refined", "propagated", "verified", "rejected"},
    "verified": {"seeded"},
    "rejected": {"seeded", "propagated"},
}

DEFAULT_RMSE_GATE = 0.010
DEFAULT_INLIER_GATE = 0.6


def check_transition(old: str | None, new: str):
    if new not in STATUSES:
        raise TransitionError(old, new)
    if new not in _ALLOWED.get(old, set()):
        raise TransitionError(old, new)


@dataclass(frozen=True)
class FrameLabel:
    """One object's pose label in one frame."""

    object_id: str
    pose: Pose
    status: str
    inlier_rmse: float = 0.0
    inlier_ratio: float = 0.0
    joints: dict = field(default_factory=dict)
    note: str = ""  # transient diagnostics, not serialized

    def __post_init__(self):
        if self.status not in STATUSES:
            raise InputError(f"unknown label status {self.status!r}")
        object.__setattr__(self, "joints",
                           {str(k): float(v) for k, v in dict(self.joints).items()})

    def to_json_dict(self) -> dict:
        return {
            "inlier_ratio": float(self.inlier_ratio),
            "inlier_rmse": float(self.inlier_rmse),
            "joints": dict(sorted(self.joints.items())),
            "q": self.pose.quaternion().tolist(),
            "status": self.status,
            "t": self.pose.translation.tolist(),
        }

    @staticmethod
    def from_json_dict(object_id: str, d: dict) -> "FrameLabel":
        return FrameLabel(
            object_id=object_id,
            pose=Pose.from_json_dict(d),
            status=d.get("status", "seeded"),
            inlier_rmse=float(d.get("inlier_rmse", 0.0)),
            inlier_ratio=float(d.get("inlier_ratio", 0.0)),
            joints=d.get("joints", {}),
        )


def _atomic_write_bytes(path: Path, payload: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(payload)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")


def frame_name(index: int) -> str:
    return f"{index:06d}"


class Scene:
    """A scene directory handle; models and intrinsics are loaded lazily."""

    def __init__(self, path):
        self.path = Path(path)
        meta_path = self.path / "meta.json"
        if not meta_path.exists():
            raise InputError(f"{self.path} is not a scene (missing meta.json)")
        with open(meta_path) as f:
            self.meta = json.load(f)
        self.objects = list(self.meta["objects"])
        self.frame_count = int(self.meta["frame_count"])
        self.intrinsics = CameraIntrinsics.load(self.path / "camera_intrinsics.json")
        self._models: dict[str, ObjectModel] = {}
        recover_pending_save(self.path)

    @property
    def id(self) -> str:
        return self.path.name

    def object_index(self, object_id: str) -> int:
        """1-based mask value for an object; 0 stays background."""
        try:
            return self.objects.index(object_id) + 1
        except ValueError:
            raise InputError(f"object {object_id!r} not registered in scene") from None

    def model(self, object_id: str) -> ObjectModel:
        if object_id not in self._models:
            ply = self.path / "models" / f"{object_id}.ply"
            if not ply.exists():
                raise InputError(f"model file missing: {ply}")
            self._models[object_id] = ObjectModel.load(ply, model_id=object_id)
        return self._models[object_id]

    # -- frame data -------------------------------------------------------

    def frame_indices(self):
        return range(self.frame_count)

    def _check_frame(self, index: int):
        if not 0 <= index < self.frame_count:
            raise InputError(f"frame {index} outside [0, {self.frame_count})")

    def color_path(self, index):
        return self.path / "frames" / f"{frame_name(index)}.color.png"

    def depth_path(self, index):
        return self.path / "frames" / f"{frame_name(index)}.depth.png"

    def label_path(self, index):
        return self.path / "labels" / f"{frame_name(index)}.pose.json"

    def seg_path(self, index):
        return self.path / "labels" / f"{frame_name(index)}.seg.png"

    def load_color(self, index) -> np.ndarray:
        self._check_frame(index)
        return np.asarray(Image.open(self.color_path(index)).convert("RGB"))

    def load_depth(self, index) -> DepthFrame:
        self._check_frame(index)
        raw = np.asarray(Image.open(self.depth_path(index)), dtype=np.uint16)
        return DepthFrame(raw=raw, intrinsics=self.intrinsics)

    def cloud(self, index, stride=1, with_color=True):
        color = self.load_color(index) if with_color and self.color_path(index).exists() else None
        return backproject(self.load_depth(index), color=color, stride=stride)

    def load_seg(self, index) -> np.ndarray | None:
        p = self.seg_path(index)
        if not p.exists():
            return None
        return np.asarray(Image.open(p), dtype=np.uint8)

    def write_seg(self, index, mask: np.ndarray):
        self._check_frame(index)
        p = self.seg_path(index)
        p.parent.mkdir(parents=True, exist_ok=True)
        buf = _png_bytes(Image.fromarray(mask.astype(np.uint8)))
        _atomic_write_bytes(p, buf)

    def load_frame_labels(self, index) -> dict[str, FrameLabel]:
        p = self.label_path(index)
        if not p.exists():
            return {}
        with open(p) as f:
            data = json.load(f)
        return {oid: FrameLabel.from_json_dict(oid, d) for oid, d in data.items()}

    def mocap_to_camera(self) -> Pose | None:
        ref = self.meta.get("extrinsics")
        if not ref:
            return None
        p = self.path / ref
        if not p.exists():
            return None
        with open(p) as f:
            return Pose.from_json_dict(json.load(f)["mocap_to_camera"])


def _png_bytes(img: Image.Image) -> bytes:
    import io
    bio = io.BytesIO()
    img.save(bio, format="PNG")
    return bio.getvalue()


def create_scene(path, objects, frame_count, intrinsics: CameraIntrinsics,
                 extrinsics: Pose | None = None) -> Scene:
    """Initialize an empty scene directory skeleton."""
    path = Path(path)
    for sub in ("frames", "labels", "models"):
        (path / sub).mkdir(parents=True, exist_ok=True)
    intrinsics.save(path / "camera_intrinsics.json")
    extr = (extrinsics or Pose.identity()).to_json_dict()
    _atomic_write_bytes(path / "extrinsics.json",
                        _json_bytes({"mocap_to_camera": extr}))
    meta = {"objects": list(objects), "frame_count": int(frame_count),
            "extrinsics": "extrinsics.json"}
    _atomic_write_bytes(path / "meta.json", _json_bytes(meta))
    return Scene(path)


class SceneLabelSet:
    """In-memory label store for one scene with dirty tracking.

    Status transitions are validated on every put; flags are derived from the
    review gates, never stored.
    """

    def __init__(self, scene: Scene, rmse_gate=DEFAULT_RMSE_GATE,
                 inlier_gate=DEFAULT_INLIER_GATE):
        self.scene = scene
        self.rmse_gate = float(rmse_gate)
        self.inlier_gate = float(inlier_gate)
        self.labels: dict[int, dict[str, FrameLabel]] = {}
        self.dirty: set[int] = set()
        for idx in scene.frame_indices():
            loaded = scene.load_frame_labels(idx)
            if loaded:
                self.labels[idx] = loaded

    def get(self, frame: int, object_id: str) -> FrameLabel | None:
        return self.labels.get(frame, {}).get(object_id)

    def put(self, frame: int, label: FrameLabel, validate=True) -> FrameLabel:
        self.scene._check_frame(frame)
        if label.object_id not in self.scene.objects:
            raise InputError(f"object {label.object_id!r} not registered in scene")
        old = self.get(frame, label.object_id)
        if validate:
            check_transition(old.status if old else None, label.status)
        self.labels.setdefault(frame, {})[label.object_id] = label
        self.dirty.add(frame)
        return label

    def review(self, frame: int, object_id: str, verdict: str) -> FrameLabel:
        label = self.get(frame, object_id)
        if label is None:
            raise PreconditionError(f"frame {frame} has no label for {object_id!r}")
        if label.status not in ("refined", "propagated"):
            raise TransitionError(label.status, verdict)
        if verdict not in ("verified", "rejected"):
            raise InputError(f"verdict must be verified or rejected, got {verdict!r}")
        return self.put(frame, replace(label, status=verdict))

    def flagged(self, label: FrameLabel) -> bool:
        """Review gate: residual too high or overlap too low."""
        return label.inlier_rmse > self.rmse_gate or label.inlier_ratio < self.inlier_gate

    def frame_payload(self, frame: int) -> bytes:
        entries = self.labels.get(frame, {})
        return _json_bytes({oid: lab.to_json_dict()
                            for oid, lab in sorted(entries.items())})

    def save(self) -> int:
        """Flush dirty frames via the crash-safe journal; returns frames written."""
        if not self.dirty:
            return 0
        frames = sorted(self.dirty)
        entries = {frame_name(i): self.frame_payload(i).decode("utf-8") for i in frames}
        commit_labels(self.scene.path, entries)
        self.dirty.clear()
        return len(frames)


# -- crash-safe batch label writes ----------------------------------------

_JOURNAL = "labels/.save-journal.json"


def commit_labels(scene_path, entries: dict[str, str]):
    """Write {frame_name: pose-json-text} atomically as one batch.

    The journal rename is the commit point: a crash before it leaves the
    pre-save state, a crash after it is rolled forward by
    recover_pending_save on the next scene open.
    """
    scene_path = Path(scene_path)
    (scene_path / "labels").mkdir(parents=True, exist_ok=True)
    journal = scene_path / _JOURNAL
    _atomic_write_bytes(journal, _json_bytes({"entries": entries}))
    _apply_journal(scene_path, entries)
    os.unlink(journal)


def _apply_journal(scene_path: Path, entries: dict[str, str]):
    for name, text in sorted(entries.items()):
        _atomic_write_bytes(scene_path / "labels" / f"{name}.pose.json",
                            text.encode("utf-8"))


def recover_pending_save(scene_path) -> bool:
    """Roll forward an interrupted batch save; returns True if one existed."""
    scene_path = Path(scene_path)
    journal = scene_path / _JOURNAL
    labels_dir = scene_path / "labels"
    if labels_dir.exists():
        for stray in labels_dir.glob("*.tmp"):
            stray.unlink()
    if not journal.exists():
        return False
    with open(journal) as f:
        entries = json.load(f)["entries"]
    _apply_journal(scene_path, entries)
    os.unlink(journal)
    return True
