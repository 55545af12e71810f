"""End-to-end checks of the toolkit's headline guarantees.

Each test exercises a complete workflow through the public API and records
a PASS/FAIL line for the terminal summary. Module tests cover fine-grained
behavior; the tolerances here are the ones the package promises.
"""

import subprocess
import sys
import threading
import time
from hashlib import sha256
from pathlib import Path

import httpx
import numpy as np

from dtt.alignment import Correspondences, IcpConfig, icp, kabsch_align
from dtt.geometry import Pose, compose, rotation_about_axis
from dtt.kernels import chamfer_loss, fft_real, gff_backward, gff_forward, \
    ifft_real
from dtt.labeling import frame_instances, propagate
from dtt.metrics import add_metric, add_s_metric, auc, evaluate_scene
from dtt.models import ObjectModel, make_uv_sphere
from dtt.raster import render_objects
from dtt.scene import Scene
from dtt.service import LOCK_HEADER
from dtt.synth import SynthConfig, generate, write_frame
from tests.conftest import SMOOTH_KW, SMOOTH_SEED, copy_scene, harvest_gt, \
    open_labels, record_acceptance, rotation_angle, small_intrinsics, \
    strip_labels
from tests.test_raster import point_triangle_distance, square_instance
from tests.test_synth import tree_digest


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def tri_distances(p, a, b, c):
    """Distance from p[i] to triangle (a[i], b[i], c[i]), vectorized."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    n = np.cross(ab, ac)
    nn = np.einsum("ij,ij->i", n, n)
    off = np.einsum("ij,ij->i", ap, n) / np.where(nn == 0, 1.0, nn)
    closest = p - n * off[:, None]

    def seg(origin, direction, t_num, t_den):
        t = np.clip(t_num / np.where(t_den == 0, 1.0, t_den), 0.0, 1.0)
        return origin + direction * t[:, None]

    # regions are applied nearest-feature last so vertices win at boundaries
    m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    closest[m] = seg(b, c - b, d4 - d3, (d4 - d3) + (d5 - d6))[m]
    m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    closest[m] = seg(a, ac, d2, d2 - d6)[m]
    m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    closest[m] = seg(a, ab, d1, d1 - d3)[m]
    m = (d6 >= 0) & (d5 <= d6)
    closest[m] = c[m]
    m = (d3 >= 0) & (d4 <= d3)
    closest[m] = b[m]
    m = (d1 <= 0) & (d2 <= 0)
    closest[m] = a[m]
    return np.linalg.norm(p - closest, axis=1)


def dir_state(root):
    root = Path(root)
    return {str(p.relative_to(root)): sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_calibration():
    start = time.perf_counter()
    rng = np.random.default_rng(4021)
    gt = Pose(rotation_about_axis(unit(rng.normal(size=3)), 1.1),
              np.array([0.4, -0.2, 1.5]))
    markers = rng.uniform(-0.5, 0.5, size=(10, 3))
    est = kabsch_align(Correspondences(markers, gt.apply(markers)))
    rot_err = rotation_angle(est.rotation, gt.rotation)
    trans_err = np.linalg.norm(est.translation - gt.translation)

    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        pose = Pose(rotation_about_axis(unit(r.normal(size=3)),
                                        r.uniform(-np.pi, np.pi)),
                    r.uniform(-1.0, 1.0, size=3))
        pts = r.uniform(-0.5, 0.5, size=(8, 3))
        noisy = pose.apply(pts) + r.normal(size=(8, 3)) * 0.005
        fit = kabsch_align(Correspondences(pts, noisy))
        worst = max(worst, np.linalg.norm(fit.translation - pose.translation))
    elapsed = time.perf_counter() - start

    ok = rot_err < 1e-9 and trans_err < 1e-9 and worst < 0.010 and elapsed < 1.0
    detail = (f"rot {rot_err:.1e} rad, trans {trans_err:.1e} m, "
              f"worst noisy trans {worst * 1000:.2f} mm over 100 trials, "
              f"{elapsed:.2f} s")
    record_acceptance("calibration: noiseless exact, robust under 5 mm noise",
                      ok, detail)
    assert ok, detail


def test_icp_recovery(rover):
    dense = ObjectModel(rover.id, rover.vertices, rover.triangles,
                        parts=rover.parts, sample_count=5000)
    rng = np.random.default_rng(777)
    gt = Pose(rotation_about_axis(unit([0.3, 1.0, 0.2]), 0.5),
              np.array([0.05, -0.08, 1.1]))
    cloud = gt.apply(dense.surface_samples)
    initial = Pose(
        rotation_about_axis(unit(rng.normal(size=3)), np.deg2rad(8.0))
        @ gt.rotation,
        gt.translation + unit(rng.normal(size=3)) * 0.03)

    start = time.perf_counter()
    clean = icp(dense.surface_samples, cloud, initial)
    t_clean = time.perf_counter() - start
    err_clean = add_metric(dense.surface_samples, gt, clean.pose)

    outlier_count = round(len(cloud) * 0.3 / 0.7)
    junk = gt.translation + rng.uniform(-0.4, 0.4, size=(outlier_count, 3))
    start = time.perf_counter()
    noisy = icp(dense.surface_samples, np.vstack([cloud, junk]), initial,
                IcpConfig(trim_fraction=0.2))
    t_noisy = time.perf_counter() - start
    err_noisy = add_metric(dense.surface_samples, gt, noisy.pose)

    ok = (err_clean <= 0.002 and clean.iterations <= 50
          and err_noisy <= 0.005 and t_clean < 5.0 and t_noisy < 5.0)
    detail = (f"clean ADD {err_clean * 1000:.3f} mm in {clean.iterations} "
              f"iters ({t_clean:.2f} s); 30% outliers ADD "
              f"{err_noisy * 1000:.3f} mm ({t_noisy:.2f} s)")
    record_acceptance("icp: 5k-point recovery, clean and 30% outliers",
                      ok, detail)
    assert ok, detail


def test_propagation(tmp_path, scene30_dir, corner_target):
    points = corner_target.surface_samples
    smooth = copy_scene(scene30_dir, tmp_path / "smooth")
    gt = harvest_gt(smooth)
    strip_labels(smooth, keep=(0,))
    start = time.perf_counter()
    report = propagate(open_labels(smooth), "corner_target", 0)
    t_smooth = time.perf_counter() - start
    errors = [add_metric(points, gt[(s.frame, "corner_target")], s.label.pose)
              for s in report.steps]
    worst = max(errors)

    tele = copy_scene(scene30_dir, tmp_path / "teleport")
    scene = Scene(tele)
    cfg = SynthConfig(model=corner_target, frame_count=30, seed=SMOOTH_SEED,
                      **SMOOTH_KW)
    jump = Pose(rotation_about_axis(np.array([0.0, 1.0, 0.0]), 0.9),
                np.array([0.30, 0.0, 0.05]))
    for frame in range(10, 30):
        write_frame(scene, cfg, corner_target, frame,
                    compose(jump, gt[(frame, "corner_target")]), {})
    strip_labels(tele, keep=(0,))
    start = time.perf_counter()
    tele_report = propagate(open_labels(tele), "corner_target", 0)
    t_tele = time.perf_counter() - start
    flagged = tele_report.flagged_frames

    total = t_smooth + t_tele
    ok = (worst <= 0.005 and not report.flagged_frames
          and 10 in flagged and not [f for f in flagged if f < 10]
          and total < 60.0)
    detail = (f"smooth worst ADD {worst * 1000:.3f} mm, "
              f"{len(report.flagged_frames)} flags; teleport first flag at "
              f"{min(flagged) if flagged else None}; {total:.1f} s total")
    record_acceptance("propagation: smooth 30-frame chain, teleport flagged",
                      ok, detail)
    assert ok, detail


def test_metrics_oracles():
    def brute_add(points, gt, pred):
        return float(np.mean(
            np.linalg.norm(gt.apply(points) - pred.apply(points), axis=1)))

    def brute_add_s(points, gt, pred):
        a = gt.apply(points)
        b = pred.apply(points)
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
        return float(np.mean(d.min(axis=1)))

    worst_gap = 0.0
    for size in (1, 2, 3, 17, 128, 500):
        rng = np.random.default_rng(size)
        points = rng.normal(size=(size, 3)) * 0.1
        gt = Pose(rotation_about_axis(unit(rng.normal(size=3)), 0.4),
                  rng.normal(size=3))
        pred = Pose(rotation_about_axis(unit(rng.normal(size=3)), 0.37),
                    gt.translation + rng.normal(size=3) * 0.01)
        worst_gap = max(
            worst_gap,
            abs(add_metric(points, gt, pred) - brute_add(points, gt, pred)),
            abs(add_s_metric(points, gt, pred)
                - brute_add_s(points, gt, pred)))

    auc_val = auc([0.0, 0.05, 0.2], max_threshold=0.1)

    two = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    half_turn = Pose(np.diag([-1.0, -1.0, 1.0]), np.zeros(3))
    add_180 = add_metric(two, Pose.identity(), half_turn)
    add_s_180 = add_s_metric(two, Pose.identity(), half_turn)

    ok = (worst_gap == 0.0 and auc_val == 50.0
          and add_180 == 2.0 and add_s_180 == 0.0)
    detail = (f"brute-force gap {worst_gap:.1e} up to 500 points; "
              f"AUC {auc_val!r}; 180-degree ADD {add_180!r} / "
              f"ADD-S {add_s_180!r}")
    record_acceptance("metrics: brute-force equality and exact oracles",
                      ok, detail)
    assert ok, detail


def test_segmentation(tmp_path, rover):
    intr = small_intrinsics()
    near = square_instance(1, 0.25, 1.0)
    far = square_instance(2, 0.25, 1.5)
    ok_z = True
    for order in ([near, far], [far, near]):
        mask, _, _ = render_objects(intr, order)
        ok_z = ok_z and mask[intr.height // 2, intr.width // 2] == 1

    verts, tris = make_uv_sphere(0.25)
    center = np.array([0.1, -0.05, 2.0])
    mask, _, _ = render_objects(intr, [(1, verts, tris,
                                        Pose(np.eye(3), center))])
    vs, us = np.nonzero(mask)
    cu_err = abs(us.mean() - (intr.fx * center[0] / center[2] + intr.cx))
    cv_err = abs(vs.mean() - (intr.fy * center[1] / center[2] + intr.cy))

    cfg = SynthConfig(model=rover, frame_count=2, seed=5, mode="independent",
                      distances=(0.9, 1.3), jitter_px=20.0, depth_sigma=0.0,
                      dropout=0.0, intrinsics=intr)
    scene = generate(cfg, tmp_path / "reproj")
    worst = 0.0
    checked = 0
    oracle_gap = 0.0
    for frame in range(cfg.frame_count):
        stored = scene.load_seg(frame)
        instances = frame_instances(scene, scene.load_frame_labels(frame))
        mask, _, buffers = render_objects(scene.intrinsics, instances)
        assert np.array_equal(stored, mask)
        raw = scene.load_depth(frame).raw
        for inst_id, verts, tris, pose in instances:
            sel = stored == inst_id
            if not sel.any():
                continue
            vs, us = np.nonzero(sel)
            z = raw[vs, us].astype(np.float64) * scene.intrinsics.depth_scale
            assert (z > 0).all()
            pts = np.column_stack([
                (us - scene.intrinsics.cx) * z / scene.intrinsics.fx,
                (vs - scene.intrinsics.cy) * z / scene.intrinsics.fy, z])
            corners = pose.apply(verts)[tris[buffers.face[vs, us]]]
            dist = tri_distances(pts, corners[:, 0], corners[:, 1],
                                 corners[:, 2])
            worst = max(worst, float(dist.max()))
            checked += len(pts)
            pick = np.random.default_rng(frame).choice(
                len(pts), size=min(100, len(pts)), replace=False)
            for i in pick:
                ref = point_triangle_distance(pts[i], corners[i, 0],
                                              corners[i, 1], corners[i, 2])
                oracle_gap = max(oracle_gap, abs(dist[i] - ref))

    ok = (ok_z and cu_err <= 1.0 and cv_err <= 1.0 and worst <= 0.005
          and checked > 0 and oracle_gap < 1e-12)
    detail = (f"z-order ok={ok_z}, centroid err ({cu_err:.2f}, {cv_err:.2f}) "
              f"px, worst reprojection {worst * 1000:.3f} mm over "
              f"{checked} labeled pixels")
    record_acceptance("segmentation: z-order, centroid, pixel reprojection",
                      ok, detail)
    assert ok, detail


def test_robust_kernels():
    start = time.perf_counter()
    round_trip = 0.0
    for n in range(1, 65):
        x = np.random.default_rng(n).normal(size=n)
        round_trip = max(round_trip,
                         float(np.abs(ifft_real(fft_real(x), n) - x).max()))

    identity_gap = 0.0
    for n in (1, 2, 7, 16, 33):
        x = np.random.default_rng(100 + n).normal(size=(n, 2))
        gains = np.ones((n // 2 + 1, 2), dtype=np.complex128)
        identity_gap = max(identity_gap,
                           float(np.abs(gff_forward(x, gains) - x).max()))

    h = 1e-6

    def fd(fun, arr, shape_like):
        grad = np.zeros_like(shape_like, dtype=np.float64)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = fun()
            flat[i] = keep - h
            down = fun()
            flat[i] = keep
            grad.reshape(-1)[i] = (up - down) / (2 * h)
        return grad

    worst_chamfer = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(int(rng.integers(4, 14)), 3))
        b = rng.normal(size=(int(rng.integers(4, 14)), 3))
        _, grad = chamfer_loss(a, b)
        ref = fd(lambda: chamfer_loss(a, b)[0], a, a)
        worst_chamfer = max(worst_chamfer,
                            np.linalg.norm(grad - ref)
                            / max(np.linalg.norm(ref), 1e-12))

    worst_gff = 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(2, 24))
        channels = int(rng.integers(1, 4))
        x = rng.normal(size=(n, channels))
        gains = (rng.normal(size=(n // 2 + 1, channels))
                 + 1j * rng.normal(size=(n // 2 + 1, channels)))
        upstream = rng.normal(size=(n, channels))
        dx, dg = gff_backward(x, gains, upstream)

        def loss():
            return float(np.sum(upstream * gff_forward(x, gains)))

        ref_x = fd(loss, x, x)
        gre = np.ascontiguousarray(gains.real)
        gim = np.ascontiguousarray(gains.imag)

        def loss_packed():
            return float(np.sum(upstream * gff_forward(x, gre + 1j * gim)))

        ref_re = fd(loss_packed, gre, gre)
        ref_im = fd(loss_packed, gim, gim)
        gap = max(
            np.linalg.norm(dx - ref_x) / max(np.linalg.norm(ref_x), 1e-12),
            np.linalg.norm(dg.real - ref_re)
            / max(np.linalg.norm(ref_re), 1e-12),
            np.linalg.norm(dg.imag - ref_im)
            / max(np.linalg.norm(ref_im), 1e-12))
        worst_gff = max(worst_gff, gap)
    elapsed = time.perf_counter() - start

    ok = (round_trip < 1e-9 and identity_gap < 1e-9
          and worst_chamfer <= 1e-4 and worst_gff <= 1e-4 and elapsed < 10.0)
    detail = (f"round trip {round_trip:.1e}, identity {identity_gap:.1e}, "
              f"chamfer fd {worst_chamfer:.1e}, gff fd {worst_gff:.1e}, "
              f"{elapsed:.1f} s")
    record_acceptance("kernels: fft round trip, identity gff, fd gradients",
                      ok, detail)
    assert ok, detail


def test_determinism(tmp_path, corner_target, small_scene_dir):
    cfg = SynthConfig(model=corner_target, frame_count=5, seed=9,
                      intrinsics=small_intrinsics(), **SMOOTH_KW)
    generate(cfg, tmp_path / "serial", threads=1)
    generate(cfg, tmp_path / "pooled", threads=4)
    scenes_match = tree_digest(tmp_path / "serial") == \
        tree_digest(tmp_path / "pooled")

    label_states = []
    for name in ("prop_a", "prop_b"):
        work = copy_scene(small_scene_dir, tmp_path / name)
        strip_labels(work, keep=(0,))
        labels = open_labels(work)
        propagate(labels, "corner_target", 0)
        labels.save()
        label_states.append({p.name: p.read_bytes()
                             for p in sorted((work / "labels").glob("*.json"))})
    labels_match = label_states[0] == label_states[1]

    scene = Scene(small_scene_dir)
    preds = []
    rng = np.random.default_rng(3)
    for frame in range(scene.frame_count):
        pose = scene.load_frame_labels(frame)["corner_target"].pose
        wobble = Pose(rotation_about_axis(unit(rng.normal(size=3)), 0.002),
                      pose.translation + rng.normal(size=3) * 0.001)
        d = Pose(wobble.rotation @ pose.rotation,
                 wobble.translation).to_json_dict()
        preds.append({"frame": frame, "object": "corner_target",
                      "q": d["q"], "t": d["t"]})
    for name in ("eval_a.json", "eval_b.json"):
        evaluate_scene(scene, preds).save(tmp_path / name)
    reports_match = (tmp_path / "eval_a.json").read_bytes() == \
        (tmp_path / "eval_b.json").read_bytes()

    ok = scenes_match and labels_match and reports_match
    detail = (f"scene dirs match={scenes_match}, label files "
              f"match={labels_match}, eval reports match={reports_match}")
    record_acceptance("determinism: byte-identical scenes, labels, reports",
                      ok, detail)
    assert ok, detail


def free_port():
    import socket
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_service_durability(tmp_path, small_scene_dir):
    scene_dir = copy_scene(small_scene_dir, tmp_path / "svc")
    gt = harvest_gt(scene_dir)
    port = free_port()
    proc = subprocess.Popen(
        [sys.executable, "-c",
         "import sys; from dtt.service import serve; "
         "serve([sys.argv[1]], port=int(sys.argv[2]))",
         str(scene_dir), str(port)],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    base = f"http://127.0.0.1:{port}"
    try:
        deadline = time.monotonic() + 30.0
        while True:
            try:
                sid = httpx.get(f"{base}/scenes", timeout=1.0).json()[0]["id"]
                break
            except (httpx.TransportError, IndexError):
                if time.monotonic() > deadline:
                    raise RuntimeError("annotation service did not come up")
                time.sleep(0.1)

        barrier = threading.Barrier(8)
        outcomes = []

        def race():
            barrier.wait()
            r = httpx.post(f"{base}/scenes/{sid}/lock", timeout=10.0)
            outcomes.append((r.status_code,
                             r.json().get("token") if r.status_code == 200
                             else None))

        threads = [threading.Thread(target=race) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        winners = [tok for code, tok in outcomes if code == 200]
        lock_ok = (len(winners) == 1
                   and sorted(code for code, _ in outcomes)
                   == [200] + [409] * 7)
        headers = {LOCK_HEADER: winners[0]}

        def put_label(frame):
            d = gt[(frame, "corner_target")].to_json_dict()
            return httpx.put(
                f"{base}/scenes/{sid}/frames/{frame}/labels/corner_target",
                json={"q": d["q"], "t": d["t"]}, headers=headers,
                timeout=10.0)

        assert put_label(1).status_code == 200
        saved = httpx.post(f"{base}/scenes/{sid}/save", headers=headers,
                           timeout=10.0).json()
        post_save = dir_state(scene_dir)
        assert put_label(2).status_code == 200  # left unsaved on purpose
    finally:
        proc.kill()
        proc.wait(timeout=10)

    durable = dir_state(scene_dir) == post_save
    reopened = Scene(scene_dir)
    status = reopened.load_frame_labels(1)["corner_target"].status
    no_journal = not (scene_dir / "labels" / ".save-journal.json").exists()

    ok = (lock_ok and saved == {"written": 1} and durable
          and status == "seeded" and no_journal)
    detail = (f"lock race 1 winner of 8={lock_ok}, save={saved}, "
              f"post-kill state exact={durable}, reopened frame-1 "
              f"status={status}")
    record_acceptance("service: lock exclusivity, kill-between-saves", ok,
                      detail)
    assert ok, detail
