// HTTP client for the annotation service. Every number the UI displays
// comes back out of these calls; nothing is recomputed client-side.

import type {
  Gates,
  LabelRecord,
  PackedPoints,
  PoseJson,
  PropagateParams,
  SceneSummary,
  SseEvent,
  StatusResponse,
} from "./types.js";

export const LOCK_HEADER = "X-Lock-Token";

export class ApiError extends Error {
  readonly status: number;
  readonly category: string;

  constructor(status: number, category: string, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.category = category;
  }
}

async function raiseFor(resp: Response): Promise<never> {
  let category = "io";
  let message = `${resp.status} ${resp.statusText}`;
  try {
    const body = await resp.json();
    if (body && typeof body === "object" && "error" in body) {
      const err = (body as { error: { category?: string; message?: string } })
        .error;
      category = err.category ?? category;
      message = err.message ?? message;
    }
  } catch {
    // non-JSON body, keep the status line
  }
  throw new ApiError(resp.status, category, message);
}

/**
 * Decode the binary point payload: uint32 LE count, then count float32
 * xyz triples, then count uint8 rgb triples.
 */
export function parsePackedPoints(buf: ArrayBuffer): PackedPoints {
  if (buf.byteLength < 4) {
    throw new Error("point payload shorter than its header");
  }
  const count = new DataView(buf).getUint32(0, true);
  const expected = 4 + count * 12 + count * 3;
  if (buf.byteLength !== expected) {
    throw new Error(
      `point payload is ${buf.byteLength} bytes, expected ${expected} for ${count} points`,
    );
  }
  return {
    count,
    positions: new Float32Array(buf, 4, count * 3),
    colors: new Uint8Array(buf, 4 + count * 12, count * 3),
  };
}

/**
 * Incremental parser for text/event-stream bodies. Feed it chunks as they
 * arrive; events may split anywhere, including mid-line.
 */
export class SseParser {
  private buffer = "";

  push(chunk: string): SseEvent[] {
    this.buffer += chunk;
    const events: SseEvent[] = [];
    let sep: number;
    while ((sep = this.buffer.indexOf("\n\n")) !== -1) {
      const block = this.buffer.slice(0, sep);
      this.buffer = this.buffer.slice(sep + 2);
      const parsed = this.parseBlock(block);
      if (parsed) {
        events.push(parsed);
      }
    }
    return events;
  }

  private parseBlock(block: string): SseEvent | null {
    let name = "message";
    const dataLines: string[] = [];
    for (const line of block.split("\n")) {
      if (line.startsWith("event:")) {
        name = line.slice(6).trim();
      } else if (line.startsWith("data:")) {
        dataLines.push(line.slice(5).trim());
      }
    }
    if (dataLines.length === 0) {
      return null;
    }
    const data = JSON.parse(dataLines.join("\n"));
    if (name === "progress" || name === "done" || name === "error") {
      return { event: name, data } as SseEvent;
    }
    return null;
  }
}

export class ApiClient {
  readonly base: string;
  private lockTokens = new Map<string, string>();

  constructor(base: string) {
    this.base = base.replace(/\/$/, "");
  }

  lockToken(scene: string): string | null {
    return this.lockTokens.get(scene) ?? null;
  }

  private headers(scene?: string): Record<string, string> {
    const out: Record<string, string> = {};
    const token = scene ? this.lockTokens.get(scene) : null;
    if (token) {
      out[LOCK_HEADER] = token;
    }
    return out;
  }

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(this.base + path);
    if (!resp.ok) {
      await raiseFor(resp);
    }
    return (await resp.json()) as T;
  }

  private async sendJson<T>(
    method: string,
    path: string,
    scene: string,
    body?: unknown,
  ): Promise<T> {
    const headers = this.headers(scene);
    const init: RequestInit = { method, headers };
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
      init.body = JSON.stringify(body);
    }
    const resp = await fetch(this.base + path, init);
    if (!resp.ok) {
      await raiseFor(resp);
    }
    return (await resp.json()) as T;
  }

  listScenes(): Promise<SceneSummary[]> {
    return this.getJson("/scenes");
  }

  status(scene: string): Promise<StatusResponse> {
    return this.getJson(`/scenes/${scene}/status`);
  }

  async gates(scene: string): Promise<Gates> {
    return (await this.status(scene)).gates;
  }

  async acquireLock(scene: string): Promise<string> {
    const resp = await fetch(`${this.base}/scenes/${scene}/lock`, {
      method: "POST",
    });
    if (!resp.ok) {
      await raiseFor(resp);
    }
    const { token } = (await resp.json()) as { token: string };
    this.lockTokens.set(scene, token);
    return token;
  }

  async releaseLock(scene: string): Promise<void> {
    const token = this.lockTokens.get(scene);
    if (!token) {
      return;
    }
    const resp = await fetch(`${this.base}/scenes/${scene}/lock`, {
      method: "DELETE",
      headers: { [LOCK_HEADER]: token },
    });
    this.lockTokens.delete(scene);
    if (!resp.ok && resp.status !== 204) {
      await raiseFor(resp);
    }
  }

  private async getPacked(path: string): Promise<PackedPoints> {
    const resp = await fetch(this.base + path);
    if (!resp.ok) {
      await raiseFor(resp);
    }
    return parsePackedPoints(await resp.arrayBuffer());
  }

  cloud(scene: string, frame: number, stride = 1): Promise<PackedPoints> {
    return this.getPacked(
      `/scenes/${scene}/frames/${frame}/cloud?stride=${stride}`,
    );
  }

  modelPoints(
    scene: string,
    objectId: string,
    count = 1024,
    joints?: Record<string, number>,
  ): Promise<PackedPoints> {
    let path = `/scenes/${scene}/models/${objectId}/points?count=${count}`;
    if (joints && Object.keys(joints).length > 0) {
      path += `&joints=${encodeURIComponent(JSON.stringify(joints))}`;
    }
    return this.getPacked(path);
  }

  getLabel(scene: string, frame: number, objectId: string,
  ): Promise<LabelRecord> {
    return this.getJson(`/scenes/${scene}/frames/${frame}/labels/${objectId}`);
  }

  putLabel(
    scene: string,
    frame: number,
    objectId: string,
    pose: PoseJson,
    joints?: Record<string, number>,
  ): Promise<LabelRecord> {
    const body: Record<string, unknown> = { q: pose.q, t: pose.t };
    if (joints) {
      body.joints = joints;
    }
    return this.sendJson(
      "PUT",
      `/scenes/${scene}/frames/${frame}/labels/${objectId}`,
      scene,
      body,
    );
  }

  refine(scene: string, frame: number, objectId: string, stride = 1,
  ): Promise<LabelRecord> {
    return this.sendJson(
      "POST",
      `/scenes/${scene}/frames/${frame}/refine/${objectId}?stride=${stride}`,
      scene,
    );
  }

  review(scene: string, frame: number, objectId: string,
    verdict: "verified" | "rejected"): Promise<LabelRecord> {
    return this.sendJson(
      "POST",
      `/scenes/${scene}/frames/${frame}/review`,
      scene,
      { object: objectId, verdict },
    );
  }

  save(scene: string): Promise<{ written: number }> {
    return this.sendJson("POST", `/scenes/${scene}/save`, scene);
  }

  propagationStatus(scene: string): Promise<{
    state: string;
    params?: PropagateParams;
  }> {
    return this.getJson(`/scenes/${scene}/propagate/status`);
  }

  cancelPropagation(scene: string): Promise<{ state: string }> {
    return this.sendJson("POST", `/scenes/${scene}/propagate/cancel`, scene);
  }

  /**
   * Start a propagation run and stream its events. Resolves once the
   * stream closes; every parsed event is handed to onEvent in order.
   */
  async propagate(
    scene: string,
    params: PropagateParams,
    onEvent: (event: SseEvent) => void,
  ): Promise<void> {
    const headers = this.headers(scene);
    headers["Content-Type"] = "application/json";
    const resp = await fetch(`${this.base}/scenes/${scene}/propagate`, {
      method: "POST",
      headers,
      body: JSON.stringify(params),
    });
    if (!resp.ok) {
      await raiseFor(resp);
    }
    if (!resp.body) {
      throw new Error("propagation response has no body stream");
    }
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    const parser = new SseParser();
    for (;;) {
      const { done, value } = await reader.read();
      if (done) {
        break;
      }
      for (const event of parser.push(decoder.decode(value,
        { stream: true }))) {
        onEvent(event);
      }
    }
    for (const event of parser.push(decoder.decode())) {
      onEvent(event);
    }
  }
}
