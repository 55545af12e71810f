"""Pose evaluation: ADD, ADD-S, threshold accuracy curves, AUC, scene reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError
from .geometry import Pose
from .scene import Scene

DEFAULT_MAX_THRESHOLD = 0.10


def _check_points(model_points) -> np.ndarray:
    pts = np.asarray(model_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise InputError("model points must be a non-empty (S, 3) array")
    return pts


def add_metric(model_points, gt: Pose, pred: Pose) -> float:
    """Mean distance between matched points under the two poses."""
    pts = _check_points(model_points)
    return float(np.mean(np.linalg.norm(pred.apply(pts) - gt.apply(pts), axis=1)))


def add_s_metric(model_points, gt: Pose, pred: Pose) -> float:
    """Mean distance from each ground-truth point to the nearest predicted point."""
    pts = _check_points(model_points)
    tree = cKDTree(pred.apply(pts))
    dists, _ = tree.query(gt.apply(pts), k=1)
    return float(np.mean(dists))


def auc(errors, max_threshold: float = DEFAULT_MAX_THRESHOLD) -> float:
    """Exact area under accuracy(tau) = fraction(error < tau), scaled to [0, 100].

    Each error contributes the length of the interval (e, max_threshold] where
    it counts as correct, so the integral is sum(max(0, T - e)) / (n * T).
    """
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise InputError("auc needs at least one error value")
    if max_threshold <= 0:
        raise InputError("max_threshold must be positive")
    area = np.sum(np.maximum(0.0, max_threshold - e))
    return float(100.0 * area / (e.size * max_threshold))


def accuracy_curve(errors, max_threshold: float = DEFAULT_MAX_THRESHOLD):
    """Step-function samples [(tau, accuracy)] at 0, each error breakpoint, and T.

    Accuracy uses strict inequality, so the value at a breakpoint excludes the
    errors sitting exactly on it; the curve is non-decreasing by construction.
    """
    e = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if e.size == 0:
        raise InputError("accuracy_curve needs at least one error value")
    taus = [0.0]
    taus.extend(float(v) for v in np.unique(e) if 0.0 < v < max_threshold)
    taus.append(float(max_threshold))
    n = e.size
    return [(tau, float(np.count_nonzero(e < tau)) / n) for tau in taus]


@dataclass(frozen=True)
class EvalRecord:
    frame: int
    object_id: str
    add: float
    add_s: float

    def __post_init__(self):
        if self.add_s > self.add + 1e-12:
            raise InputError(
                f"add_s {self.add_s} exceeds add {self.add} for frame "
                f"{self.frame} object {self.object_id!r}")

    def to_json_dict(self):
        return {"frame": self.frame, "object": self.object_id,
                "add": self.add, "add_s": self.add_s}


@dataclass
class EvalReport:
    records: list[EvalRecord]
    max_threshold: float = DEFAULT_MAX_THRESHOLD
    skipped: list[dict] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return len(self.records) == 0

    def errors(self, kind: str) -> np.ndarray:
        return np.array([getattr(r, kind) for r in self.records], dtype=np.float64)

    @property
    def auc_add(self):
        return None if self.empty else auc(self.errors("add"), self.max_threshold)

    @property
    def auc_add_s(self):
        return None if self.empty else auc(self.errors("add_s"), self.max_threshold)

    @property
    def curve(self):
        """ADD-S accuracy curve, the headline reporting metric."""
        return None if self.empty else accuracy_curve(self.errors("add_s"),
                                                      self.max_threshold)

    def to_json_dict(self) -> dict:
        return {
            "auc_add": self.auc_add,
            "auc_add_s": self.auc_add_s,
            "curve": self.curve,
            "empty": self.empty,
            "max_threshold": self.max_threshold,
            "records": [r.to_json_dict() for r in self.records],
            "skipped": self.skipped,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True,
                                         indent=2) + "\n")

    def save_curve_csv(self, path):
        lines = ["tau,accuracy"]
        for tau, acc in (self.curve or []):
            lines.append(f"{tau:.9g},{acc:.9g}")
        Path(path).write_text("".join(line + "\n" for line in lines))


def load_predictions(source) -> list[dict]:
    if isinstance(source, (str, Path)):
        with open(source) as f:
            source = json.load(f)
    if not isinstance(source, list):
        raise InputError("predictions must be a JSON list")
    return source


def evaluate_scene(scene: Scene, predictions,
                   max_threshold: float = DEFAULT_MAX_THRESHOLD) -> EvalReport:
    """Score predictions against the scene's verified labels.

    Predictions naming unknown frames/objects or frames whose label is not
    verified are listed under skipped rather than failing the run.
    """
    preds = load_predictions(predictions)
    records = []
    skipped = []
    label_cache: dict[int, dict] = {}
    sample_cache: dict[tuple, np.ndarray] = {}
    for i, entry in enumerate(preds):
        try:
            frame = int(entry["frame"])
            object_id = str(entry["object"])
            pred_pose = Pose.from_json_dict(entry)
        except (KeyError, ValueError, TypeError, InputError) as err:
            skipped.append({"index": i, "reason": f"malformed entry: {err}"})
            continue
        if not 0 <= frame < scene.frame_count:
            skipped.append({"frame": frame, "object": object_id,
                            "reason": "unknown frame"})
            continue
        if object_id not in scene.objects:
            skipped.append({"frame": frame, "object": object_id,
                            "reason": "unknown object"})
            continue
        if frame not in label_cache:
            label_cache[frame] = scene.load_frame_labels(frame)
        label = label_cache[frame].get(object_id)
        if label is None:
            skipped.append({"frame": frame, "object": object_id,
                            "reason": "no label"})
            continue
        if label.status != "verified":
            skipped.append({"frame": frame, "object": object_id,
                            "reason": f"label status {label.status}, not verified"})
            continue
        key = (object_id, tuple(sorted(label.joints.items())))
        if key not in sample_cache:
            sample_cache[key] = scene.model(object_id).posed_surface_samples(label.joints)
        pts = sample_cache[key]
        records.append(EvalRecord(
            frame=frame, object_id=object_id,
            add=add_metric(pts, label.pose, pred_pose),
            add_s=add_s_metric(pts, label.pose, pred_pose)))
    return EvalReport(records=records, max_threshold=max_threshold, skipped=skipped)
