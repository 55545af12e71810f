"""Ground-truth production and evaluation for 6DoF object-pose RGB-D data.

Pipeline pieces: mocap-to-camera calibration, depth backprojection, trimmed
ICP label refinement and propagation, z-buffer segmentation rendering, box
export, synthetic scene generation, ADD/ADD-S evaluation, differentiable
depth-robustification kernels, and an HTTP annotation service.
"""

from .alignment import (Correspondences, IcpConfig, IcpResult, KdTree,
                        build_kdtree, icp, kabsch_align)
from .errors import (DegenerateGeometryError, InputError, LockError,
                     PreconditionError, RegistrationError, ToolkitError,
                     TransitionError)
from .geometry import (CameraIntrinsics, DepthFrame, PointCloud, Pose,
                       backproject, compose, inverse, project,
                       quaternion_to_rotation, rotation_about_axis,
                       rotation_to_quaternion, transform)
from .kernels import (chamfer_loss, fft_real, gff_backward, gff_forward,
                      identity_gains, ifft_real)
from .labeling import (export_bboxes, propagate, refine_frame, refine_pose,
                       render_segmentation)
from .metrics import (EvalRecord, EvalReport, accuracy_curve, add_metric,
                      add_s_metric, auc, evaluate_scene)
from .models import (ObjectModel, Part, make_corner_target, make_demo_rover,
                     make_sphere_model)
from .scene import (FrameLabel, Scene, SceneLabelSet, check_transition,
                    create_scene)
from .synth import SynthConfig, generate, sample_articulation

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "Correspondences", "DegenerateGeometryError",
    "DepthFrame", "EvalRecord", "EvalReport", "FrameLabel", "IcpConfig",
    "IcpResult", "InputError", "KdTree", "LockError", "ObjectModel", "Part",
    "PointCloud", "Pose", "PreconditionError", "RegistrationError", "Scene",
    "SceneLabelSet", "SynthConfig", "ToolkitError", "TransitionError",
    "accuracy_curve", "add_metric", "add_s_metric", "auc", "backproject",
    "build_kdtree", "chamfer_loss", "check_transition", "compose",
    "create_scene", "evaluate_scene", "export_bboxes", "fft_real", "generate",
    "gff_backward", "gff_forward", "icp", "identity_gains", "ifft_real",
    "inverse", "kabsch_align", "make_corner_target", "make_demo_rover",
    "make_sphere_model",
    "project", "propagate", "quaternion_to_rotation", "refine_frame",
    "refine_pose", "render_segmentation", "rotation_about_axis",
    "rotation_to_quaternion", "sample_articulation", "transform",
]
