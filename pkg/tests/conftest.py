"""Shared fixtures and the acceptance-criteria reporter.

Module tests use small 320x240 scenes for speed; the acceptance suite runs
the full-size defaults with the frozen trajectory constants below.
"""

import shutil

import numpy as np
import pytest

from dtt.geometry import CameraIntrinsics
from dtt.models import make_corner_target, make_demo_rover
from dtt.scene import Scene, SceneLabelSet
from dtt.synth import SynthConfig, generate

# frozen smooth-trajectory constants: per-frame deltas stay within 1.15 deg
# and 8 mm, the corner target pins all six degrees of freedom
SMOOTH_KW = dict(
    mode="trajectory", distances=(1.0,), yaw_range=(0.0, 0.0),
    pitch_range=(0.0, 0.0), roll_range=(0.0, 0.0), jitter_px=0.0,
    rot_step=0.02, trans_step=0.008,
)
SMOOTH_SEED = 21


def small_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=300.0, fy=300.0, cx=160.0, cy=120.0,
                            width=320, height=240, depth_scale=0.001)


@pytest.fixture(scope="session")
def corner_target():
    return make_corner_target()


@pytest.fixture(scope="session")
def rover():
    return make_demo_rover()


@pytest.fixture(scope="session")
def scene30_dir(tmp_path_factory, corner_target):
    """Full-size 30-frame smooth corner-target sequence, generated once."""
    out = tmp_path_factory.mktemp("scene30") / "corner_smooth"
    cfg = SynthConfig(model=corner_target, frame_count=30, seed=SMOOTH_SEED,
                      **SMOOTH_KW)
    generate(cfg, out)
    return out


@pytest.fixture(scope="session")
def small_scene_dir(tmp_path_factory, corner_target):
    """Small 6-frame smooth corner-target scene shared by read-only tests."""
    out = tmp_path_factory.mktemp("scene6") / "corner_small"
    cfg = SynthConfig(model=corner_target, frame_count=6, seed=SMOOTH_SEED,
                      intrinsics=small_intrinsics(), **SMOOTH_KW)
    generate(cfg, out)
    return out


def copy_scene(src, dst):
    """Private mutable copy of a generated scene directory."""
    shutil.copytree(src, dst)
    return dst


def harvest_gt(scene_dir):
    """Ground-truth pose per frame, keyed (frame, object_id)."""
    scene = Scene(scene_dir)
    out = {}
    for f in scene.frame_indices():
        for oid, label in scene.load_frame_labels(f).items():
            out[(f, oid)] = label.pose
    return out


def strip_labels(scene_dir, keep=(0,)):
    """Delete pose files for every frame not in keep."""
    scene = Scene(scene_dir)
    for f in scene.frame_indices():
        if f not in keep:
            p = scene.label_path(f)
            if p.exists():
                p.unlink()


def open_labels(scene_dir) -> SceneLabelSet:
    return SceneLabelSet(Scene(scene_dir))


def rotation_angle(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Geodesic angle between two rotations, radians.

    Uses ||a - b||_F = 2*sqrt(2)*sin(theta/2), which stays accurate for
    tiny angles where the arccos-of-trace form bottoms out near sqrt(eps).
    """
    s = np.linalg.norm(r_a - r_b) / (2.0 * np.sqrt(2.0))
    return float(2.0 * np.arcsin(np.clip(s, 0.0, 1.0)))


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_acceptance(criterion: str, ok: bool, detail: str = ""):
    ACCEPTANCE_RESULTS.append((criterion, bool(ok), detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for criterion, ok, detail in ACCEPTANCE_RESULTS:
        line = f"[acceptance] {criterion}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
