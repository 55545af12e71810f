"""HTTP annotation and review service.

Exposes scenes, point clouds, label mutation, refinement, propagation with
live progress, review verdicts, and atomic saves. Every mutation goes through
the labeling state machine and requires the scene lock token; the service
keeps no second copy of label state.
"""

from __future__ import annotations

import json
import queue
import secrets
import struct
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse

from .errors import InputError, LockError, PreconditionError, ToolkitError
from .geometry import Pose
from .labeling import propagate, refine_frame
from .scene import FrameLabel, Scene, SceneLabelSet

LOCK_HEADER = "X-Lock-Token"

_STATUS_CODES = {
    "input": 400,
    "io": 404,
    "lock": 409,
    "state": 422,
    "precondition": 409,
    "registration": 422,
    "degenerate": 422,
}


class PropagationJob:
    """One background propagation per scene; progress drains through a queue."""

    def __init__(self, params: dict):
        self.params = params
        self.events: queue.Queue = queue.Queue()
        self.state = "running"
        self.cancel_requested = False
        self.thread: threading.Thread | None = None

    def snapshot(self) -> dict:
        return {"params": self.params, "state": self.state}


class SceneSession:
    """Lock, label set, and job bookkeeping for one open scene."""

    def __init__(self, path):
        self.scene = Scene(path)
        self.labels = SceneLabelSet(self.scene)
        self.lock_token: str | None = None
        self.mutex = threading.Lock()
        self.job: PropagationJob | None = None

    def acquire_lock(self) -> str:
        with self.mutex:
            if self.lock_token is not None:
                raise LockError(f"scene {self.scene.id!r} is locked by another session")
            self.lock_token = secrets.token_hex(16)
            return self.lock_token

    def release_lock(self, token: str | None):
        with self.mutex:
            self.check_lock(token)
            self.lock_token = None

    def check_lock(self, token: str | None):
        if self.lock_token is None or token != self.lock_token:
            raise LockError(f"mutation requires the lock token for scene "
                            f"{self.scene.id!r}")

    def progress(self) -> float:
        total = 0
        verified = 0
        for entries in self.labels.labels.values():
            for label in entries.values():
                total += 1
                verified += label.status == "verified"
        return verified / total if total else 0.0

    def summary(self) -> dict:
        return {
            "id": self.scene.id,
            "frame_count": self.scene.frame_count,
            "objects": list(self.scene.objects),
            "review_progress": self.progress(),
            "locked": self.lock_token is not None,
        }


def _error_response(err: ToolkitError) -> JSONResponse:
    code = _STATUS_CODES.get(err.category, 400)
    return JSONResponse(status_code=code, content={
        "error": {"category": err.category, "message": str(err)}})


def discover_scenes(root) -> list[Path]:
    root = Path(root)
    if (root / "meta.json").exists():
        return [root]
    return sorted(p.parent for p in root.glob("*/meta.json"))


def create_app(scene_dirs, ui_dir=None) -> FastAPI:
    app = FastAPI(title="dtt annotation service")
    sessions: dict[str, SceneSession] = {}
    for path in scene_dirs:
        session = SceneSession(path)
        sessions[session.scene.id] = session
    app.state.sessions = sessions

    @app.exception_handler(ToolkitError)
    async def _toolkit_error(request: Request, err: ToolkitError):
        return _error_response(err)

    def get_session(scene_id: str) -> SceneSession:
        if scene_id not in sessions:
            raise InputError(f"unknown scene {scene_id!r}")
        return sessions[scene_id]

    @app.get("/scenes")
    def list_scenes():
        return [sessions[sid].summary() for sid in sorted(sessions)]

    @app.post("/scenes/{scene_id}/lock")
    def acquire_lock(scene_id: str):
        token = get_session(scene_id).acquire_lock()
        return {"token": token}

    @app.delete("/scenes/{scene_id}/lock")
    def release_lock(scene_id: str, request: Request):
        get_session(scene_id).release_lock(request.headers.get(LOCK_HEADER))
        return Response(status_code=204)

    @app.get("/scenes/{scene_id}/frames/{frame}/cloud")
    def frame_cloud(scene_id: str, frame: int, stride: int = Query(default=1, ge=1)):
        session = get_session(scene_id)
        cloud = session.scene.cloud(frame, stride=stride)
        return Response(content=pack_cloud(cloud), media_type="application/octet-stream")

    @app.get("/scenes/{scene_id}/models/{object_id}/points")
    def model_points(scene_id: str, object_id: str,
                     count: int = Query(default=1024, ge=1),
                     joints: str | None = None):
        session = get_session(scene_id)
        model = session.scene.model(object_id)
        angles = json.loads(joints) if joints else {}
        pts = model.posed_surface_samples(angles)
        if count < len(pts):
            step = len(pts) / count
            pts = pts[(np.arange(count) * step).astype(int)]
        return Response(content=pack_points(pts), media_type="application/octet-stream")

    @app.get("/scenes/{scene_id}/frames/{frame}/labels/{object_id}")
    def get_label(scene_id: str, frame: int, object_id: str):
        session = get_session(scene_id)
        session.scene._check_frame(frame)
        label = session.labels.get(frame, object_id)
        if label is None:
            raise InputError(f"frame {frame} has no label for {object_id!r}")
        return label.to_json_dict()

    @app.put("/scenes/{scene_id}/frames/{frame}/labels/{object_id}")
    def put_label(scene_id: str, frame: int, object_id: str,
                  body: dict, request: Request):
        session = get_session(scene_id)
        session.check_lock(request.headers.get(LOCK_HEADER))
        label = FrameLabel(object_id=object_id, pose=Pose.from_json_dict(body),
                           status="seeded", joints=body.get("joints", {}))
        return session.labels.put(frame, label).to_json_dict()

    @app.post("/scenes/{scene_id}/frames/{frame}/refine/{object_id}")
    def refine(scene_id: str, frame: int, object_id: str, request: Request,
               stride: int = Query(default=1, ge=1)):
        session = get_session(scene_id)
        session.check_lock(request.headers.get(LOCK_HEADER))
        label = refine_frame(session.labels, frame, object_id, stride=stride)
        return label.to_json_dict()

    @app.post("/scenes/{scene_id}/frames/{frame}/review")
    def review(scene_id: str, frame: int, body: dict, request: Request):
        session = get_session(scene_id)
        session.check_lock(request.headers.get(LOCK_HEADER))
        label = session.labels.review(frame, str(body.get("object")),
                                      str(body.get("verdict")))
        return label.to_json_dict()

    @app.post("/scenes/{scene_id}/propagate")
    def start_propagation(scene_id: str, body: dict, request: Request):
        session = get_session(scene_id)
        session.check_lock(request.headers.get(LOCK_HEADER))
        with session.mutex:
            if session.job is not None and session.job.state == "running":
                raise PreconditionError("a propagation job is already running")
            job = PropagationJob({
                "object": str(body["object"]),
                "from": int(body["from"]),
                "to": int(body["to"]) if body.get("to") is not None else None,
                "stride": int(body.get("stride", 1)),
            })
            session.job = job
        job.thread = threading.Thread(target=_run_propagation,
                                      args=(session, job), daemon=True)
        job.thread.start()
        return StreamingResponse(_sse_stream(job), media_type="text/event-stream")

    @app.get("/scenes/{scene_id}/propagate/status")
    def propagation_status(scene_id: str):
        job = get_session(scene_id).job
        return job.snapshot() if job else {"state": "idle"}

    @app.post("/scenes/{scene_id}/propagate/cancel")
    def cancel_propagation(scene_id: str, request: Request):
        session = get_session(scene_id)
        session.check_lock(request.headers.get(LOCK_HEADER))
        job = session.job
        if job is None or job.state != "running":
            return {"state": job.state if job else "idle"}
        job.cancel_requested = True
        job.thread.join(timeout=60)
        return {"state": job.state}

    @app.post("/scenes/{scene_id}/save")
    def save(scene_id: str, request: Request):
        session = get_session(scene_id)
        session.check_lock(request.headers.get(LOCK_HEADER))
        written = session.labels.save()
        return {"written": written}

    @app.get("/scenes/{scene_id}/status")
    def status(scene_id: str):
        session = get_session(scene_id)
        frames = []
        for idx in session.scene.frame_indices():
            objects = {}
            for oid, label in sorted(session.labels.labels.get(idx, {}).items()):
                objects[oid] = {
                    "status": label.status,
                    "inlier_rmse": label.inlier_rmse,
                    "inlier_ratio": label.inlier_ratio,
                    "flagged": bool(label.status in ("refined", "propagated")
                                    and session.labels.flagged(label)),
                }
            frames.append({"frame": idx, "objects": objects})
        return {"scene": session.scene.id, "frames": frames,
                "gates": {"rmse_gate": session.labels.rmse_gate,
                          "inlier_gate": session.labels.inlier_gate}}

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def _run_propagation(session: SceneSession, job: PropagationJob):
    params = job.params
    try:
        report = propagate(
            session.labels, params["object"], params["from"], params["to"],
            stride=params["stride"],
            progress=lambda step: job.events.put(("progress", {
                "frame": step.frame,
                "status": step.status,
                "inlier_rmse": step.inlier_rmse,
                "inlier_ratio": step.inlier_ratio,
                "flagged": step.flagged,
            })),
            should_stop=lambda: job.cancel_requested)
        job.state = "cancelled" if job.cancel_requested else "done"
        job.events.put(("done", {
            "state": job.state,
            "frames": len(report.steps),
            "flagged_frames": report.flagged_frames,
        }))
    except Exception as err:
        job.state = "failed"
        category = err.category if isinstance(err, ToolkitError) else "internal"
        job.events.put(("error", {"category": category, "message": str(err)}))
    finally:
        job.events.put(None)


def _sse_stream(job: PropagationJob):
    while True:
        item = job.events.get()
        if item is None:
            return
        event, payload = item
        yield f"event: {event}\ndata: {json.dumps(payload, sort_keys=True)}\n\n"


def pack_points(points: np.ndarray, colors=None) -> bytes:
    """count:uint32, xyz:float32 triplets, rgb:uint8 triplets (little-endian)."""
    pts = np.asarray(points, dtype="<f4")
    if colors is None:
        rgb = np.full((len(pts), 3), 180, dtype=np.uint8)
    else:
        rgb = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
    return struct.pack("<I", len(pts)) + pts.tobytes() + rgb.tobytes()


def pack_cloud(cloud) -> bytes:
    return pack_points(cloud.points, cloud.colors)


def serve(scene_dirs, host="127.0.0.1", port=8484, ui_dir=None):
    import uvicorn
    app = create_app(scene_dirs, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
