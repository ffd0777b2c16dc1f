// Unit tests: line codec, client session logic and view state, plus a golden
// transcript replay against a live service (spawned from the repo root).

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn, ChildProcess } from "node:child_process";
import { readFileSync } from "node:fs";
import { resolve } from "node:path";

import { LineDecoder, encodeLine, StreamHeader, SkeletonMessage } from "../src/protocol.js";
import { SessionClient } from "../src/client.js";
import { ViewState, EDIT_RATE_CAP_HZ } from "../src/state.js";
import { forwardKinematics, identityQuat } from "../src/math.js";
import { createTcpTransport, LineTransport } from "../src/transport.js";

const ROOT = resolve(__dirname, "..", "..");

function loadTranscript(name: string): any[] {
  const text = readFileSync(resolve(ROOT, "docs", "transcripts", name), "utf-8");
  return text
    .split("\n")
    .filter((l) => l.trim())
    .map((l) => JSON.parse(l));
}

describe("line codec", () => {
  it("splits partial chunks into messages", () => {
    const dec = new LineDecoder();
    expect(dec.push('{"type":"hel')).toEqual([]);
    const out = dec.push('lo","version":1}\n{"type":"bye"}\n');
    expect(out).toHaveLength(2);
    expect((out[0] as any).type).toBe("hello");
  });

  it("stamps sequence numbers", () => {
    expect(encodeLine({ type: "bye" }, 7)).toBe('{"type":"bye","seq":7}\n');
  });
});

class FakeTransport implements LineTransport {
  sent: string[] = [];
  private handler: ((line: string) => void) | null = null;
  send(line: string): void {
    this.sent.push(line);
  }
  onLine(h: (line: string) => void): void {
    this.handler = h;
  }
  onClose(): void {}
  close(): void {}
  feed(msg: object): void {
    this.handler?.(JSON.stringify(msg) + "\n");
  }
  sentTypes(): string[] {
    return this.sent.map((l) => JSON.parse(l).type);
  }
}

const SKELETON_MSG: SkeletonMessage = {
  type: "skeleton",
  protocol: 1,
  skeleton: {
    joints: [
      { name: "Hips", parent: null, offset: [0, 0, 0] },
      { name: "Head", parent: 0, offset: [0, 0.5, 0] },
      { name: "LeftHand", parent: 0, offset: [0.4, 0.3, 0] },
    ],
    limb_groups: { root: [0], spine_head: [1], left_arm: [2] },
    end_effectors: { hip: 0, head: 1, left_hand: 2 },
  },
  skeleton_hash: "x",
  roles: ["hip", "head", "left_hand"],
};

describe("session client", () => {
  it("handshakes and dispatches", async () => {
    const transport = new FakeTransport();
    const frames: number[] = [];
    const client = new SessionClient({ onPoseFrame: (m) => frames.push(m.frame) });
    const handshake = client.attach(transport);
    transport.feed({ type: "hello", version: 1, mode: "offline", checkpoint: "c" });
    transport.feed(SKELETON_MSG);
    const skeleton = await handshake;
    expect(skeleton.roles).toContain("left_hand");
    transport.feed({
      type: "pose_frame", frame: 0, root: { pos: [0, 0, 0], quat: [1, 0, 0, 0] },
      joints: [[1, 0, 0, 0]], displacement: [0, 0, 0], iterations: 1, lpo: 0,
    });
    expect(frames).toEqual([0]);
    expect(transport.sentTypes()).toEqual(["hello"]);
  });

  it("buffers edits while disconnected and flushes on attach", async () => {
    const client = new SessionClient();
    client.updatePositionTarget("left_hand", [0, 1, 0]);
    const transport = new FakeTransport();
    const handshake = client.attach(transport);
    transport.feed({ type: "hello", version: 1, mode: "offline", checkpoint: "c" });
    transport.feed(SKELETON_MSG);
    await handshake;
    expect(transport.sentTypes()).toEqual(["hello", "constraint_edit"]);
  });
});

describe("view state", () => {
  function liveState(): { state: ViewState; transport: FakeTransport } {
    const transport = new FakeTransport();
    const client = new SessionClient();
    void client.attach(transport);
    let clock = 0;
    const state = new ViewState(client, () => (clock += 1000));
    state.initFromSkeleton(SKELETON_MSG);
    return { state, transport };
  }

  it("places handles at rest FK positions", () => {
    const { state } = liveState();
    const rest = forwardKinematics(
      SKELETON_MSG.skeleton.joints,
      SKELETON_MSG.skeleton.joints.map(() => identityQuat())
    );
    expect(state.handles.get("left_hand")!.position).toEqual(rest[2]);
    expect(state.handles.get("head")!.position).toEqual([0, 0.5, 0]);
  });

  it("drag emits a replace edit for the role", () => {
    const { state, transport } = liveState();
    const emitted = state.dragHandle("left_hand", [0.4, 0.5, 0]);
    expect(emitted).toBe(true);
    const edit = JSON.parse(transport.sent.at(-1)!);
    expect(edit.type).toBe("constraint_edit");
    expect(edit.remove).toEqual(["ee_pos:left_hand", "ee_rot:left_hand"]);
    expect(edit.add[0].target_position).toEqual([0.4, 0.5, 0]);
    expect(edit.add[0].weight).toBe(10);
  });

  it("caps the edit rate", () => {
    const transport = new FakeTransport();
    const client = new SessionClient();
    void client.attach(transport);
    let clock = 0;
    const state = new ViewState(client, () => clock);
    state.initFromSkeleton(SKELETON_MSG);
    let emitted = 0;
    for (let i = 0; i < 1000; i++) {
      clock += 1; // 1 ms apart: 1000 pointer events over one second
      if (state.dragHandle("left_hand", [0, i / 1000, 0])) emitted += 1;
    }
    expect(emitted).toBeLessThanOrEqual(EDIT_RATE_CAP_HZ + 1);
  });

  it("idle means silence", () => {
    const { transport } = liveState();
    expect(transport.sentTypes().filter((t) => t !== "hello")).toEqual([]);
  });

  it("toggle greys the handle and removes constraints", () => {
    const { state, transport } = liveState();
    state.toggleSensor("left_hand", false);
    expect(state.handles.get("left_hand")!.enabled).toBe(false);
    const edit = JSON.parse(transport.sent.at(-1)!);
    expect(edit.remove).toContain("ee_pos:left_hand");
    const base = [
      { role: "left_hand", pos: [0, 0, 0] as [number, number, number],
        quat: [1, 0, 0, 0] as [number, number, number, number],
        dof: "pos_rot" as const, valid: true },
    ];
    expect(state.frameSignals(base)).toEqual([]);
  });
});

describe("golden transcript replay", () => {
  let service: ChildProcess | null = null;
  let port = 0;

  beforeAll(async () => {
    const ckpt = resolve(ROOT, "tests", "data", "fixture_vae.ckpt");
    service = spawn(
      "python3",
      ["-m", "latentik.cli", "serve", "--checkpoint", ckpt,
       "--mode", "realtime", "--port", "0"],
      { cwd: ROOT, stdio: ["ignore", "pipe", "inherit"] }
    );
    port = await new Promise<number>((resolvePort, reject) => {
      const timer = setTimeout(() => reject(new Error("service start timeout")), 60_000);
      service!.stdout!.on("data", (chunk: Buffer) => {
        const m = chunk.toString().match(/listening on [\d.]+:(\d+)/);
        if (m) {
          clearTimeout(timer);
          resolvePort(Number(m[1]));
        }
      });
    });
  }, 90_000);

  afterAll(() => {
    service?.kill();
  });

  it("reproduces the committed golden reply stream", async () => {
    const input = loadTranscript("session_input.jsonl");
    const golden = loadTranscript("session_golden.jsonl");
    const header = input[0] as StreamHeader;
    const messages = input.slice(1);

    const received: any[] = [];
    const transport = await createTcpTransport("127.0.0.1", port);
    const done = new Promise<void>((resolveDone) => {
      const decoder = new LineDecoder();
      transport.onLine((line) => {
        for (const msg of decoder.push(line + "\n")) {
          const { seq: _seq, ...rest } = msg as any;
          received.push(rest);
          if ((msg as any).type === "bye") resolveDone();
        }
      });
    });
    let seq = 0;
    transport.send(encodeLine({ type: "hello", version: 1, header }, ++seq));
    for (const msg of messages) {
      const { seq: _old, ...rest } = msg;
      transport.send(encodeLine(rest, ++seq));
    }
    transport.send(encodeLine({ type: "bye" }, ++seq));
    await done;
    transport.close();

    expect(received.length).toBe(golden.length);
    expect(received).toEqual(golden);
  }, 120_000);
});
