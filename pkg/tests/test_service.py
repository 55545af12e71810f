import json
import struct

import numpy as np
import pytest
from fastapi.testclient import TestClient

from dtt.scene import Scene
from dtt.service import LOCK_HEADER, create_app, discover_scenes, pack_points
from tests.conftest import copy_scene, harvest_gt, strip_labels


@pytest.fixture
def service_scene(tmp_path, small_scene_dir):
    return copy_scene(small_scene_dir, tmp_path / "svc")


@pytest.fixture
def client(service_scene):
    with TestClient(create_app([service_scene])) as c:
        yield c


def lock(client, scene_id="svc"):
    r = client.post(f"/scenes/{scene_id}/lock")
    assert r.status_code == 200
    return {LOCK_HEADER: r.json()["token"]}


def parse_sse(text):
    events = []
    for block in text.strip().split("\n\n"):
        lines = block.splitlines()
        name = lines[0].removeprefix("event: ")
        data = json.loads(lines[1].removeprefix("data: "))
        events.append((name, data))
    return events


class TestDiscovery:
    def test_single_scene_dir(self, service_scene):
        assert discover_scenes(service_scene) == [service_scene]

    def test_parent_dir(self, service_scene):
        assert discover_scenes(service_scene.parent) == [service_scene]

    def test_empty_dir(self, tmp_path):
        assert discover_scenes(tmp_path) == []


class TestScenesAndLock:
    def test_list_scenes(self, client):
        (scene,) = client.get("/scenes").json()
        assert scene["id"] == "svc"
        assert scene["frame_count"] == 6
        assert scene["objects"] == ["corner_target"]
        assert scene["locked"] is False
        assert scene["review_progress"] == 1.0

    def test_unknown_scene_rejected(self, client):
        r = client.get("/scenes/nope/frames/0/labels/x")
        assert r.status_code == 400
        assert r.json()["error"]["category"] == "input"

    def test_lock_exclusive(self, client):
        first = client.post("/scenes/svc/lock")
        assert first.status_code == 200
        second = client.post("/scenes/svc/lock")
        assert second.status_code == 409
        assert second.json()["error"]["category"] == "lock"

    def test_release_requires_token(self, client):
        headers = lock(client)
        bad = client.delete("/scenes/svc/lock",
                            headers={LOCK_HEADER: "wrong"})
        assert bad.status_code == 409
        ok = client.delete("/scenes/svc/lock", headers=headers)
        assert ok.status_code == 204
        assert client.post("/scenes/svc/lock").status_code == 200

    def test_mutation_requires_lock(self, client):
        r = client.post("/scenes/svc/frames/0/refine/corner_target")
        assert r.status_code == 409

    def test_locked_flag_in_listing(self, client):
        lock(client)
        (scene,) = client.get("/scenes").json()
        assert scene["locked"] is True


class TestData:
    def test_cloud_binary_layout(self, client, service_scene):
        r = client.get("/scenes/svc/frames/0/cloud?stride=2")
        assert r.status_code == 200
        buf = r.content
        (count,) = struct.unpack_from("<I", buf, 0)
        assert len(buf) == 4 + count * 12 + count * 3
        xyz = np.frombuffer(buf, dtype="<f4", count=count * 3, offset=4)
        expected = Scene(service_scene).cloud(0, stride=2)
        assert count == len(expected)
        assert np.allclose(xyz.reshape(-1, 3), expected.points, atol=1e-6)

    def test_model_points_subsampled(self, client):
        r = client.get("/scenes/svc/models/corner_target/points?count=100")
        (count,) = struct.unpack_from("<I", r.content, 0)
        assert count == 100

    def test_pack_points_default_color(self):
        buf = pack_points(np.zeros((2, 3)))
        rgb = np.frombuffer(buf, dtype=np.uint8, offset=4 + 24)
        assert (rgb == 180).all()

    def test_get_label(self, client):
        r = client.get("/scenes/svc/frames/0/labels/corner_target")
        assert r.status_code == 200
        body = r.json()
        assert body["status"] == "verified"
        assert len(body["q"]) == 4
        assert len(body["t"]) == 3

    def test_get_missing_label_rejected(self, client, service_scene):
        r = client.get("/scenes/svc/frames/0/labels/ghost")
        assert r.status_code == 400


class TestLabelFlow:
    def test_put_forces_seeded(self, client):
        headers = lock(client)
        r = client.get("/scenes/svc/frames/0/labels/corner_target")
        body = {"q": r.json()["q"], "t": r.json()["t"]}
        put = client.put("/scenes/svc/frames/0/labels/corner_target",
                         json=body, headers=headers)
        assert put.status_code == 200
        assert put.json()["status"] == "seeded"

    def test_refine_review_save(self, client, service_scene):
        headers = lock(client)
        r = client.get("/scenes/svc/frames/0/labels/corner_target").json()
        client.put("/scenes/svc/frames/0/labels/corner_target",
                   json={"q": r["q"], "t": r["t"]}, headers=headers)
        refined = client.post("/scenes/svc/frames/0/refine/corner_target",
                              headers=headers)
        assert refined.status_code == 200
        assert refined.json()["status"] == "refined"
        assert refined.json()["inlier_rmse"] < 0.01
        review = client.post("/scenes/svc/frames/0/review",
                             json={"object": "corner_target",
                                   "verdict": "verified"}, headers=headers)
        assert review.json()["status"] == "verified"
        saved = client.post("/scenes/svc/save", headers=headers)
        assert saved.json()["written"] == 1
        on_disk = Scene(service_scene).load_frame_labels(0)["corner_target"]
        assert on_disk.status == "verified"

    def test_refine_verified_maps_409(self, client):
        headers = lock(client)
        r = client.post("/scenes/svc/frames/0/refine/corner_target",
                        headers=headers)
        assert r.status_code == 409
        assert r.json()["error"]["category"] == "precondition"

    def test_review_seeded_maps_422(self, client):
        headers = lock(client)
        r = client.get("/scenes/svc/frames/0/labels/corner_target").json()
        client.put("/scenes/svc/frames/0/labels/corner_target",
                   json={"q": r["q"], "t": r["t"]}, headers=headers)
        rev = client.post("/scenes/svc/frames/0/review",
                          json={"object": "corner_target",
                                "verdict": "verified"}, headers=headers)
        assert rev.status_code == 422
        assert rev.json()["error"]["category"] == "state"

    def test_status_endpoint(self, client):
        body = client.get("/scenes/svc/status").json()
        assert body["scene"] == "svc"
        assert len(body["frames"]) == 6
        entry = body["frames"][0]["objects"]["corner_target"]
        assert entry["status"] == "verified"
        assert entry["flagged"] is False
        assert body["gates"] == {"rmse_gate": 0.010, "inlier_gate": 0.6}


class TestPropagation:
    def test_sse_stream_and_persistence(self, tmp_path, small_scene_dir):
        work = copy_scene(small_scene_dir, tmp_path / "p")
        strip_labels(work, keep=(0,))
        with TestClient(create_app([work])) as client:
            headers = lock(client, "p")
            with client.stream("POST", "/scenes/p/propagate",
                               json={"object": "corner_target", "from": 0},
                               headers=headers) as r:
                assert r.status_code == 200
                events = parse_sse(r.read().decode())
            names = [n for n, _ in events]
            assert names[:-1] == ["progress"] * 5
            assert names[-1] == "done"
            frames = [d["frame"] for n, d in events if n == "progress"]
            assert frames == [1, 2, 3, 4, 5]
            done = events[-1][1]
            assert done["state"] == "done"
            assert done["flagged_frames"] == []
            status = client.get("/scenes/p/propagate/status").json()
            assert status["state"] == "done"
            saved = client.post("/scenes/p/save", headers=headers)
            assert saved.json()["written"] == 5
        scene = Scene(work)
        assert scene.load_frame_labels(3)["corner_target"].status == "propagated"

    def test_propagation_error_streams_error_event(self, tmp_path,
                                                   small_scene_dir):
        work = copy_scene(small_scene_dir, tmp_path / "err")
        strip_labels(work, keep=())
        with TestClient(create_app([work])) as client:
            headers = lock(client, "err")
            with client.stream("POST", "/scenes/err/propagate",
                               json={"object": "corner_target", "from": 0},
                               headers=headers) as r:
                events = parse_sse(r.read().decode())
            assert events[-1][0] == "error"
            assert events[-1][1]["category"] == "precondition"
            status = client.get("/scenes/err/propagate/status").json()
            assert status["state"] == "failed"

    def test_idle_status(self, client):
        assert client.get("/scenes/svc/propagate/status").json() == {
            "state": "idle"}

    def test_cancel_noop_when_idle(self, client):
        headers = lock(client)
        r = client.post("/scenes/svc/propagate/cancel", headers=headers)
        assert r.json()["state"] == "idle"
