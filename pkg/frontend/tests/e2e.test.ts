// End-to-end UI round trip against a live offline-mode service: a scripted
// drag of the left-hand handle must drive that constraint's residual below
// 2 cm within 30 pose frames; toggling a sensor greys its handle and removes
// its residual entry.

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn, ChildProcess } from "node:child_process";
import { readFileSync } from "node:fs";
import { resolve } from "node:path";

import { SessionClient } from "../src/client.js";
import { ViewState } from "../src/state.js";
import type {
  PoseFrame,
  ResidualsMessage,
  SignalPayload,
  StreamHeader,
} from "../src/protocol.js";
import { createTcpTransport } from "../src/transport.js";

const ROOT = resolve(__dirname, "..", "..");

function loadInput(): { header: StreamHeader; frames: any[] } {
  const lines = readFileSync(
    resolve(ROOT, "docs", "transcripts", "session_input.jsonl"), "utf-8"
  )
    .split("\n")
    .filter((l) => l.trim())
    .map((l) => JSON.parse(l));
  return {
    header: lines[0],
    frames: lines.slice(1).filter((m) => m.type === "sparse_frame"),
  };
}

describe("drag editing e2e", () => {
  let service: ChildProcess | null = null;
  let port = 0;

  beforeAll(async () => {
    const ckpt = resolve(ROOT, "tests", "data", "fixture_vae.ckpt");
    service = spawn(
      "python3",
      ["-m", "latentik.cli", "serve", "--checkpoint", ckpt,
       "--mode", "offline", "--lambda-po", "30", "--port", "0"],
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

  it("scripted drag converges and toggles grey out", async () => {
    const { header, frames } = loadInput();
    const residualLog: ResidualsMessage[] = [];
    const poseLog: PoseFrame[] = [];
    let resolveFrame: (() => void) | null = null;

    const client = new SessionClient({
      onResiduals: (m) => {
        residualLog.push(m);
        resolveFrame?.();
      },
      onPoseFrame: (m) => {
        poseLog.push(m);
        if (client.skeleton) state.applyPoseFrame(m, client.skeleton.skeleton.joints);
      },
    });
    const state = new ViewState(client, () => performance.now());

    const transport = await createTcpTransport("127.0.0.1", port);
    const skeleton = await client.attach(transport, header);
    state.initFromSkeleton(skeleton);
    expect(state.handles.size).toBe(6);

    const baseSignals = frames[0].signals as SignalPayload[];

    async function step(signals: SignalPayload[]): Promise<ResidualsMessage> {
      const waiter = new Promise<void>((r) => (resolveFrame = r));
      client.sendFrame(signals);
      await waiter;
      return residualLog[residualLog.length - 1];
    }

    // settle a few frames with the recorded sensors
    for (let i = 0; i < 3; i++) {
      await step(state.frameSignals(baseSignals));
    }

    // grab the hand handle and drag it 10 cm up from its current position
    const hand = state.handles.get("left_hand")!;
    const target: [number, number, number] = [
      hand.position[0], hand.position[1] + 0.1, hand.position[2],
    ];
    state.dragHandle("left_hand", target);

    let converged = -1;
    for (let i = 0; i < 30; i++) {
      const residuals = await step(state.frameSignals(baseSignals));
      state.applyResiduals(residuals);
      const err = residuals.residuals["ee_pos:left_hand"];
      expect(err).toBeDefined();
      if (err < 0.02) {
        converged = i;
        break;
      }
    }
    expect(converged).toBeGreaterThanOrEqual(0);

    // toggle the right foot off: handle greys out, residual entry disappears
    state.toggleSensor("right_foot", false);
    expect(state.handles.get("right_foot")!.enabled).toBe(false);
    const after = await step(state.frameSignals(baseSignals));
    expect(after.residuals["ee_pos:right_foot"]).toBeUndefined();
    expect(after.residuals["ee_pos:head"]).toBeDefined();

    // toggle back on: constraint returns on the next frames
    state.toggleSensor("right_foot", true);
    const restored = await step(state.frameSignals(baseSignals));
    expect(restored.residuals["ee_pos:right_foot"]).toBeDefined();

    client.bye();
    await new Promise((r) => setTimeout(r, 200));
    transport.close();
  }, 120_000);
});
