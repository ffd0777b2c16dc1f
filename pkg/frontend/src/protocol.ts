// Wire protocol types and line codec for the session service.
// One JSON object per line; unknown fields are ignored; `seq` increases
// monotonically per direction.

export const PROTOCOL_VERSION = 1;

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];

export interface SignalPayload {
  role: string;
  pos: Vec3;
  quat: Quat;
  dof: "pos_rot" | "pos_only";
  valid: boolean;
}

export interface StreamHeader {
  type: "stream_header";
  version: number;
  skeleton_hash: string;
  roles: string[];
  dof: string;
  frame_rate: number;
  initial_root: { pos: Vec3; quat: Quat };
  seed_pose: { joints: Quat[]; displacement: Vec3 };
}

export interface JointSpec {
  name: string;
  parent: number | null;
  offset: Vec3;
}

export interface SkeletonMessage {
  type: "skeleton";
  protocol: number;
  skeleton: {
    joints: JointSpec[];
    limb_groups: Record<string, number[]>;
    end_effectors: Record<string, number>;
  };
  skeleton_hash: string;
  roles: string[];
}

export interface PoseFrame {
  type: "pose_frame";
  frame: number;
  root: { pos: Vec3; quat: Quat };
  joints: Quat[];
  displacement: Vec3;
  iterations: number;
  lpo: number;
}

export interface ResidualsMessage {
  type: "residuals";
  frame: number;
  residuals: Record<string, number>;
  diagnostics: string[];
  queue_len: number;
}

export interface ConstraintSpec {
  id: string;
  kind: string;
  roles: string[];
  weight?: number;
  target_position?: Vec3;
  target_rotation?: Quat;
  target_value?: number;
  direction?: Vec3;
  axis?: Vec3;
}

export type ServerMessage =
  | { type: "hello"; version: number; mode: string; checkpoint: string }
  | SkeletonMessage
  | PoseFrame
  | ResidualsMessage
  | { type: "error"; reason: string }
  | { type: "bye"; reason?: string };

export type ClientMessage =
  | { type: "hello"; version: number; header?: StreamHeader }
  | { type: "sparse_frame"; frame: number; signals: SignalPayload[] }
  | { type: "constraint_edit"; add?: ConstraintSpec[]; remove?: string[] }
  | { type: "bye" };

export function encodeLine(msg: object, seq: number): string {
  return JSON.stringify({ ...msg, seq }) + "\n";
}

export class LineDecoder {
  private buffer = "";

  push(chunk: string): unknown[] {
    this.buffer += chunk;
    const out: unknown[] = [];
    let idx: number;
    while ((idx = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, idx).trim();
      this.buffer = this.buffer.slice(idx + 1);
      if (!line) continue;
      out.push(JSON.parse(line));
    }
    return out;
  }
}

export function isServerMessage(x: unknown): x is ServerMessage & { seq?: number } {
  if (typeof x !== "object" || x === null) return false;
  const t = (x as { type?: unknown }).type;
  return (
    t === "hello" || t === "skeleton" || t === "pose_frame" ||
    t === "residuals" || t === "error" || t === "bye"
  );
}
