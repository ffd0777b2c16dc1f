// Protocol session client: handshake, frame streaming and constraint edits.
// Transport-agnostic; rendering and interaction state live in state.ts.

import {
  ClientMessage,
  ConstraintSpec,
  PoseFrame,
  PROTOCOL_VERSION,
  ResidualsMessage,
  ServerMessage,
  SignalPayload,
  SkeletonMessage,
  StreamHeader,
  encodeLine,
  isServerMessage,
} from "./protocol.js";
import { LineTransport } from "./transport.js";

export interface ClientHandlers {
  onPoseFrame?: (msg: PoseFrame) => void;
  onResiduals?: (msg: ResidualsMessage) => void;
  onError?: (reason: string) => void;
  onClose?: () => void;
}

export class SessionClient {
  private seq = 0;
  private frame = 0;
  private transport: LineTransport | null = null;
  private buffered: ClientMessage[] = [];
  readonly handlers: ClientHandlers;
  hello: { version: number; mode: string; checkpoint: string } | null = null;
  skeleton: SkeletonMessage | null = null;
  connected = false;

  constructor(handlers: ClientHandlers = {}) {
    this.handlers = handlers;
  }

  attach(transport: LineTransport, header?: StreamHeader): Promise<SkeletonMessage> {
    this.transport = transport;
    this.connected = true;
    return new Promise((resolve, reject) => {
      transport.onLine((line) => {
        let msg: unknown;
        try {
          msg = JSON.parse(line);
        } catch {
          return;
        }
        if (!isServerMessage(msg)) return;
        this.dispatch(msg);
        if (msg.type === "skeleton") resolve(msg);
        if (msg.type === "bye" && this.skeleton === null) {
          reject(new Error(msg.reason ?? "rejected"));
        }
      });
      transport.onClose(() => {
        this.connected = false;
        this.handlers.onClose?.();
      });
      this.sendRaw({ type: "hello", version: PROTOCOL_VERSION, header });
      this.flushBuffered();
    });
  }

  private dispatch(msg: ServerMessage): void {
    switch (msg.type) {
      case "hello":
        this.hello = msg;
        break;
      case "skeleton":
        this.skeleton = msg;
        break;
      case "pose_frame":
        this.handlers.onPoseFrame?.(msg);
        break;
      case "residuals":
        this.handlers.onResiduals?.(msg);
        break;
      case "error":
        this.handlers.onError?.(msg.reason);
        break;
      case "bye":
        this.transport?.close();
        break;
    }
  }

  private sendRaw(msg: ClientMessage): void {
    if (!this.transport || !this.connected) {
      this.buffered.push(msg);
      return;
    }
    this.seq += 1;
    this.transport.send(encodeLine(msg, this.seq));
  }

  private flushBuffered(): void {
    const queued = this.buffered;
    this.buffered = [];
    for (const msg of queued) this.sendRaw(msg);
  }

  sendFrame(signals: SignalPayload[]): number {
    const frame = this.frame++;
    this.sendRaw({ type: "sparse_frame", frame, signals });
    return frame;
  }

  sendConstraintEdit(add: ConstraintSpec[], remove: string[]): void {
    this.sendRaw({ type: "constraint_edit", add, remove });
  }

  /** Replace an end-effector position target (the drag gesture).
   *
   * Grabbing a handle makes its position authoritative: the rotation
   * constraint for that role is dropped and the position constraint gets a
   * dominating weight so the drag wins against the replayed sensors.
   */
  updatePositionTarget(
    role: string,
    pos: [number, number, number],
    weight = 10
  ): void {
    const id = `ee_pos:${role}`;
    this.sendConstraintEdit(
      [{ id, kind: "end_effector_position", roles: [role], target_position: pos, weight }],
      [id, `ee_rot:${role}`]
    );
  }

  bye(): void {
    this.sendRaw({ type: "bye" });
  }

  close(): void {
    this.transport?.close();
  }
}
