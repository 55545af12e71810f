// End-to-end round trip against the real annotation service: generate a
// 20-frame synthetic scene, then drive seed, refine, propagate, review,
// and save through the same client and store the page uses. Residuals
// shown by the store must match GET /status exactly, and a deliberate
// 2 cm mis-seed must come back to the ground truth pose after Refine.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { formatFlag, formatRatio, formatRmse, formatStatus }
  from "../src/format.js";
import { translationDistance, translatePose } from "../src/pose.js";
import { AppStore } from "../src/state.js";
import { frameColor } from "../src/timeline.js";
import type { PoseJson, SseEvent, StatusResponse } from "../src/types.js";

const FRAME_COUNT = 20;

const SERVER_SCRIPT = `
import sys
from pathlib import Path

from dtt.geometry import CameraIntrinsics
from dtt.models import make_corner_target
from dtt.service import serve
from dtt.synth import SynthConfig, generate

out = Path(sys.argv[1])
cfg = SynthConfig(
    model=make_corner_target(),
    frame_count=${FRAME_COUNT},
    seed=33,
    intrinsics=CameraIntrinsics(fx=300.0, fy=300.0, cx=160.0, cy=120.0,
                                width=320, height=240, depth_scale=0.001),
    mode="trajectory",
    distances=(1.0,),
    yaw_range=(0.0, 0.0),
    pitch_range=(0.0, 0.0),
    roll_range=(0.0, 0.0),
    jitter_px=0.0,
    rot_step=0.02,
    trans_step=0.008,
)
generate(cfg, out)
serve([out], port=int(sys.argv[2]))
`;

let workdir: string;
let proc: ChildProcess;
let procOutput = "";
let base: string;
let sceneId: string;
let objectId: string;

let api: ApiClient;
const store = new AppStore();

async function waitForServer(url: string, timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    if (proc.exitCode !== null) {
      throw new Error(`service exited early:\n${procOutput}`);
    }
    try {
      const resp = await fetch(url);
      if (resp.ok) {
        return;
      }
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) {
      throw new Error(`service not reachable in time:\n${procOutput}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "dtt-ui-e2e-"));
  const sceneDir = join(workdir, "roundtrip");
  const port = 18400 + Math.floor(Math.random() * 800);
  base = `http://127.0.0.1:${port}`;
  proc = spawn("python3", ["-c", SERVER_SCRIPT, sceneDir, String(port)],
    { stdio: ["ignore", "pipe", "pipe"] });
  proc.stdout?.on("data", (chunk) => { procOutput += chunk; });
  proc.stderr?.on("data", (chunk) => { procOutput += chunk; });
  await waitForServer(`${base}/scenes`, 150_000);
  api = new ApiClient(base);
}, 170_000);

afterAll(() => {
  proc?.kill("SIGKILL");
  if (workdir) {
    rmSync(workdir, { recursive: true, force: true });
  }
});

async function rawStatus(): Promise<StatusResponse> {
  const resp = await fetch(`${base}/scenes/${sceneId}/status`);
  expect(resp.ok).toBe(true);
  return (await resp.json()) as StatusResponse;
}

describe("annotation round trip", () => {
  const gt = new Map<number, PoseJson>();
  let misSeed: PoseJson;

  it("lists the generated scene", async () => {
    const scenes = await api.listScenes();
    expect(scenes).toHaveLength(1);
    expect(scenes[0].frame_count).toBe(FRAME_COUNT);
    expect(scenes[0].objects).toHaveLength(1);
    sceneId = scenes[0].id;
    objectId = scenes[0].objects[0];
    store.openScene(sceneId, FRAME_COUNT, [objectId]);
    expect(store.activeObject).toBe(objectId);
  });

  it("acquires the scene lock and turns away a second session", async () => {
    await api.acquireLock(sceneId);
    store.setLockHeld(true);
    expect(store.canEdit).toBe(true);

    const intruder = new ApiClient(base);
    const otherStore = new AppStore();
    otherStore.openScene(sceneId, FRAME_COUNT, [objectId]);
    try {
      await intruder.acquireLock(sceneId);
      expect.unreachable("second lock must be refused");
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      const apiErr = err as ApiError;
      expect(apiErr.status).toBe(409);
      expect(apiErr.category).toBe("lock");
      otherStore.setLockDenied();
    }
    expect(otherStore.lockDenied).toBe(true);
    expect(otherStore.canEdit).toBe(false);

    const scenes = await api.listScenes();
    expect(scenes[0].locked).toBe(true);
  });

  it("serves decodable point payloads", async () => {
    const cloud = await api.cloud(sceneId, 0, 4);
    expect(cloud.count).toBeGreaterThan(500);
    expect(cloud.positions).toHaveLength(cloud.count * 3);
    // camera looks down +z; depths must sit in front of it
    let worstZ = Infinity;
    for (let i = 0; i < cloud.count; i++) {
      worstZ = Math.min(worstZ, cloud.positions[i * 3 + 2]);
    }
    expect(worstZ).toBeGreaterThan(0);

    const model = await api.modelPoints(sceneId, objectId, 512);
    expect(model.count).toBe(512);
    expect(model.colors[0]).toBe(180); // untextured default
  });

  it("re-seeds every frame from the shipped ground truth", async () => {
    for (let frame = 0; frame < FRAME_COUNT; frame++) {
      const label = await api.getLabel(sceneId, frame, objectId);
      expect(label.status).toBe("verified"); // synthetic labels ship reviewed
      gt.set(frame, { q: label.q, t: label.t });
    }
    for (let frame = 1; frame < FRAME_COUNT; frame++) {
      const seeded = await api.putLabel(sceneId, frame, objectId,
        gt.get(frame)!);
      expect(seeded.status).toBe("seeded");
    }
    misSeed = translatePose(gt.get(0)!, [0.02, 0, 0]);
    const seeded = await api.putLabel(sceneId, 0, objectId, misSeed);
    expect(seeded.status).toBe("seeded");
    expect(seeded.inlier_rmse).toBe(0); // placeholder until refinement

    store.applyStatus(await api.status(sceneId));
    for (let frame = 0; frame < FRAME_COUNT; frame++) {
      expect(store.entry(frame, objectId)?.status).toBe("seeded");
    }
  });

  it("rejects a review verdict on a seeded label and surfaces the message",
    async () => {
      try {
        await api.review(sceneId, 5, objectId, "verified");
        expect.unreachable("review of a seeded label must fail");
      } catch (err) {
        expect(err).toBeInstanceOf(ApiError);
        const apiErr = err as ApiError;
        expect(apiErr.status).toBe(422);
        expect(apiErr.category).toBe("state");
        store.setError(apiErr.message); // shown verbatim in the banner
        expect(store.lastError).toBe(apiErr.message);
        expect(store.lastError!.length).toBeGreaterThan(0);
      }
    });

  it("corrects the 2 cm mis-seed with one refine", async () => {
    const before = translationDistance(misSeed, gt.get(0)!);
    expect(before).toBeCloseTo(0.02, 9);

    const refined = await api.refine(sceneId, 0, objectId);
    expect(refined.status).toBe("refined");
    const after = translationDistance({ q: refined.q, t: refined.t },
      gt.get(0)!);
    expect(after).toBeLessThan(0.004); // visibly back on the object
    expect(after).toBeLessThan(before / 5);
    expect(refined.inlier_rmse).toBeGreaterThan(0);

    store.applyStatus(await api.status(sceneId));
    const entry = store.entry(0, objectId)!;
    expect(entry.status).toBe("refined");
    expect(entry.inlier_rmse).toBeLessThan(store.gates!.rmse_gate);
    expect(entry.flagged).toBe(false);
  }, 60_000);

  it("streams propagation progress for every remaining frame", async () => {
    const events: SseEvent[] = [];
    store.propagationStarted();
    await api.propagate(sceneId, { object: objectId, from: 0 }, (event) => {
      events.push(event);
      if (event.event === "progress") {
        store.propagationProgress(event.data.frame);
      } else if (event.event === "error") {
        store.setError(event.data.message);
      }
    });
    store.propagationFinished();

    const progress = events.filter((e) => e.event === "progress");
    expect(progress.map((e) => (e.event === "progress" ? e.data.frame : -1)))
      .toEqual(Array.from({ length: FRAME_COUNT - 1 }, (_, i) => i + 1));
    const done = events[events.length - 1];
    expect(done.event).toBe("done");
    if (done.event === "done") {
      expect(done.data.state).toBe("done");
      expect(done.data.frames).toBe(FRAME_COUNT - 1);
      expect(done.data.flagged_frames).toEqual([]);
    }
    expect(store.propagation.running).toBe(false);
    expect(store.propagation.framesDone).toBe(FRAME_COUNT - 1);

    const snapshot = await api.propagationStatus(sceneId);
    expect(snapshot.state).toBe("done");
    expect(snapshot.params?.object).toBe(objectId);
  }, 120_000);

  it("displays exactly the residuals reported by GET /status", async () => {
    store.applyStatus(await api.status(sceneId));
    const wire = await rawStatus(); // independent fetch and decode
    expect(wire.frames).toHaveLength(FRAME_COUNT);

    for (const row of wire.frames) {
      const shown = store.entry(row.frame, objectId);
      const reported = row.objects[objectId];
      expect(shown).not.toBeNull();
      // the store mirror is value-identical to the wire payload
      expect(shown!.status).toBe(reported.status);
      expect(Object.is(shown!.inlier_rmse, reported.inlier_rmse)).toBe(true);
      expect(Object.is(shown!.inlier_ratio, reported.inlier_ratio))
        .toBe(true);
      expect(shown!.flagged).toBe(reported.flagged);
      // and every HUD string derives from that mirror alone
      expect(formatStatus(shown)).toBe(formatStatus(reported));
      expect(formatRmse(shown)).toBe(formatRmse(reported));
      expect(formatRatio(shown)).toBe(formatRatio(reported));
      expect(formatFlag(shown)).toBe(formatFlag(reported));
      expect(frameColor(shown, store.gates))
        .toBe(frameColor(reported, wire.gates));
    }

    const wireFlagged = wire.frames
      .filter((row) => row.objects[objectId].flagged)
      .map((row) => row.frame);
    expect(store.flaggedFrames()).toEqual(wireFlagged);
  });

  it("completes the review pass", async () => {
    const verdict0 = await api.review(sceneId, 0, objectId, "verified");
    expect(verdict0.status).toBe("verified");
    for (let frame = 1; frame < FRAME_COUNT - 1; frame++) {
      const verdict = await api.review(sceneId, frame, objectId, "verified");
      expect(verdict.status).toBe("verified");
    }
    const rejected = await api.review(sceneId, FRAME_COUNT - 1, objectId,
      "rejected");
    expect(rejected.status).toBe("rejected");

    store.applyStatus(await api.status(sceneId));
    for (let frame = 0; frame < FRAME_COUNT - 1; frame++) {
      expect(store.entry(frame, objectId)?.status).toBe("verified");
    }
    expect(store.entry(FRAME_COUNT - 1, objectId)?.status).toBe("rejected");
  }, 60_000);

  it("saves every label through the service", async () => {
    const { written } = await api.save(sceneId);
    expect(written).toBe(FRAME_COUNT);

    // a fresh unprivileged client sees the reviewed state
    const reader = new ApiClient(base);
    const status = await reader.status(sceneId);
    const last = status.frames[FRAME_COUNT - 1].objects[objectId];
    expect(last.status).toBe("rejected");
  });

  it("releases the lock so the next session can edit", async () => {
    await api.releaseLock(sceneId);
    store.setLockHeld(false);
    expect(store.canEdit).toBe(false);
    const scenes = await new ApiClient(base).listScenes();
    expect(scenes[0].locked).toBe(false);
  });
});
