"""Command-line entry point: one tool, one scene directory format.

Exit codes:
    0  success
    2  usage error (bad flags)
    3  invalid input data
    4  missing file / I/O failure
    5  degenerate geometry
    6  registration failure
    7  precondition not met
    8  invalid label status transition
    9  scene lock conflict

Failures print a single machine-readable JSON line to stderr:
{"error": {"category": ..., "message": ...}}.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .alignment import Correspondences, kabsch_align
from .errors import InputError, ToolkitError
from .geometry import Pose
from .labeling import export_bboxes, propagate, refine_frame, render_segmentation
from .metrics import evaluate_scene
from .ply import write_ply
from .scene import Scene, SceneLabelSet
from .synth import SynthConfig, generate

EXIT_CODES = {
    "input": 3,
    "io": 4,
    "degenerate": 5,
    "registration": 6,
    "precondition": 7,
    "state": 8,
    "lock": 9,
}


def _fail(category: str, message: str) -> int:
    line = json.dumps({"error": {"category": category, "message": message}},
                      sort_keys=True)
    print(line, file=sys.stderr)
    return EXIT_CODES.get(category, 1)


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as err:
        raise InputError(f"{path}: {err}") from err


def cmd_calibrate(args) -> int:
    pairs = _load_json(args.pairs)
    if not isinstance(pairs, list) or not pairs:
        raise InputError("pairs file must be a non-empty JSON list")
    mocap = np.array([p["mocap"] for p in pairs], dtype=np.float64)
    camera = np.array([p["camera"] for p in pairs], dtype=np.float64)
    pose = kabsch_align(Correspondences(source=mocap, target=camera))
    residual = float(np.sqrt(np.mean(
        np.sum((pose.apply(mocap) - camera) ** 2, axis=1))))
    payload = {"mocap_to_camera": pose.to_json_dict(),
               "residual_rms": residual, "pairs": len(pairs)}
    Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print(f"residual_rms {residual:.12g}")
    return 0


def cmd_backproject(args) -> int:
    scene = Scene(args.scene)
    cloud = scene.cloud(args.frame, stride=args.stride)
    colors = cloud.colors
    write_ply(args.out, cloud.points, colors=colors, binary=not args.ascii)
    print(f"wrote {len(cloud)} points to {args.out}")
    return 0


def cmd_refine(args) -> int:
    scene = Scene(args.scene)
    labels = SceneLabelSet(scene)
    initial = None
    if args.init:
        initial = Pose.from_json_dict(_load_json(args.init))
    label = refine_frame(labels, args.frame, args.object, initial=initial,
                         stride=args.stride)
    labels.save()
    print(f"frame {args.frame} {args.object} status={label.status} "
          f"rmse={label.inlier_rmse:.6f} ratio={label.inlier_ratio:.3f}")
    return 0


def cmd_propagate(args) -> int:
    scene = Scene(args.scene)
    labels = SceneLabelSet(scene)
    report = propagate(labels, args.object, args.from_frame, args.to_frame,
                       stride=args.stride)
    labels.save()
    for step in report.steps:
        flag = " FLAGGED" if step.flagged else ""
        print(f"frame {step.frame} {step.status} rmse={step.inlier_rmse:.6f} "
              f"ratio={step.inlier_ratio:.3f}{flag}")
    print(f"propagated {len(report.steps)} frames, "
          f"{len(report.flagged_frames)} flagged")
    return 0


def _frame_list(scene: Scene, frames_arg):
    if frames_arg is None:
        return list(scene.frame_indices())
    return [int(tok) for tok in frames_arg.split(",")]


def _run_frames(fn, frames, threads):
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fn, frames))
    else:
        for frame in frames:
            fn(frame)


def cmd_segment(args) -> int:
    scene = Scene(args.scene)
    frames = _frame_list(scene, args.frames)

    def render_one(frame):
        mask, _ = render_segmentation(scene, frame,
                                      occlusion_aware=args.occlusion_aware)
        scene.write_seg(frame, mask)

    _run_frames(render_one, frames, args.threads)
    print(f"segmented {len(frames)} frames")
    return 0


def cmd_bbox_export(args) -> int:
    scene = Scene(args.scene)
    frames = _frame_list(scene, args.frames)
    count = export_bboxes(scene, args.out, frames=frames)
    print(f"exported boxes for {count} frames to {args.out}")
    return 0


def cmd_synth(args) -> int:
    config = SynthConfig.load(args.config) if args.config else SynthConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.frames is not None:
        overrides["frame_count"] = args.frames
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.model is not None:
        overrides["model"] = args.model
    if overrides:
        merged = config.to_json_dict()
        merged.update(overrides)
        config = SynthConfig.from_json_dict(merged)
    scene = generate(config, args.out, threads=args.threads)
    print(f"generated {scene.frame_count} frames in {scene.path}")
    return 0


def cmd_eval(args) -> int:
    scene = Scene(args.scene)
    report = evaluate_scene(scene, args.pred, max_threshold=args.max_threshold)
    if args.out:
        report.save(args.out)
    if args.curve_csv:
        report.save_curve_csv(args.curve_csv)
    if report.empty:
        print("no records (empty predictions)")
    else:
        print(f"records {len(report.records)} auc_add {report.auc_add:.4f} "
              f"auc_add_s {report.auc_add_s:.4f}")
    if report.skipped:
        print(f"skipped {len(report.skipped)} predictions")
    return 0


def cmd_annotate(args) -> int:
    from .service import discover_scenes, serve
    scene_dirs = discover_scenes(args.scene)
    if not scene_dirs:
        raise InputError(f"no scenes found under {args.scene}")
    serve(scene_dirs, host=args.host, port=args.port, ui_dir=args.ui_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtt",
        description="Ground-truth production and evaluation for 6DoF "
                    "object-pose RGB-D datasets.",
        epilog="Exit codes:" + __doc__.split("Exit codes:")[1],
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads; output is identical for any value")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit the mocap-to-camera transform "
                                         "from 3D marker pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("backproject", help="export a depth frame as a point cloud")
    p.add_argument("--scene", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--ascii", action="store_true")
    p.set_defaults(func=cmd_backproject)

    p = sub.add_parser("refine", help="ICP-refine one object label in one frame")
    p.add_argument("--scene", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--init", help="pose JSON file overriding the stored label")
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("propagate", help="chain refinement across frames")
    p.add_argument("--scene", required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--from", dest="from_frame", type=int, required=True)
    p.add_argument("--to", dest="to_frame", type=int, default=None)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("segment", help="render object-id masks from labels")
    p.add_argument("--scene", required=True)
    p.add_argument("--frames", help="comma-separated frame list, default all")
    p.add_argument("--occlusion-aware", action="store_true")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("bbox-export", help="export normalized 2D boxes per frame")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", help="comma-separated frame list, default all")
    p.set_defaults(func=cmd_bbox_export)

    p = sub.add_parser("synth", help="generate a labeled synthetic scene")
    p.add_argument("--config", help="SynthConfig JSON; defaults when omitted")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--mode", choices=["independent", "trajectory"], default=None)
    p.add_argument("--model", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score pose predictions against verified labels")
    p.add_argument("--scene", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--max-threshold", type=float, default=0.10)
    p.add_argument("--out")
    p.add_argument("--curve-csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("annotate", help="serve the annotation HTTP API")
    p.add_argument("--scene", help="scene directory or root of scenes")
    p.add_argument("--port", type=int, default=8484)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", default=None)
    p.set_defaults(func=cmd_annotate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper())
    if args.command == "annotate" and args.scene is None:
        import os
        args.scene = os.environ.get("DTT_DATA_ROOT")
        if args.scene is None:
            return _fail("input", "annotate needs --scene or DTT_DATA_ROOT")
    try:
        return args.func(args)
    except ToolkitError as err:
        return _fail(err.category, str(err))
    except FileNotFoundError as err:
        return _fail("io", str(err))
    except OSError as err:
        return _fail("io", str(err))


if __name__ == "__main__":
    sys.exit(main())
