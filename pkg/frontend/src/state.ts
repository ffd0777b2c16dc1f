// Interaction state: handle positions, sensor toggles, parameter sliders and
// the residual panel. The state is a pure model consumed by the renderer;
// closing and reopening the view loses nothing because the service owns the
// authoritative reconstruction state.

import { forwardKinematics, identityQuat, rotate, add } from "./math.js";
import type {
  PoseFrame,
  Quat,
  ResidualsMessage,
  SignalPayload,
  SkeletonMessage,
  Vec3,
} from "./protocol.js";
import { SessionClient } from "./client.js";

export const EDIT_RATE_CAP_HZ = 60;

export interface HandleState {
  role: string;
  jointIndex: number;
  position: Vec3;
  enabled: boolean;
  dragging: boolean;
}

export interface SliderState {
  lambdaPo: number;
  lambdaT: number;
  epsPosCm: number;
  epsRotDeg: number;
  mode: "realtime" | "offline";
}

export class ViewState {
  handles = new Map<string, HandleState>();
  residuals: Record<string, number> = {};
  diagnostics: string[] = [];
  queueLen = 0;
  connection: "connecting" | "live" | "closed" | "readonly" = "connecting";
  sliders: SliderState = {
    lambdaPo: 10.0,
    lambdaT: 0.1,
    epsPosCm: 1.0,
    epsRotDeg: 5.0,
    mode: "offline",
  };
  lastPose: PoseFrame | null = null;
  jointWorld: Vec3[] = [];
  private lastEditAt = 0;
  private pendingDrag: { role: string; pos: Vec3 } | null = null;

  constructor(private client: SessionClient, private now: () => number = () => Date.now()) {}

  /** Place a handle per active role at the rest pose's FK position. */
  initFromSkeleton(msg: SkeletonMessage): void {
    const joints = msg.skeleton.joints;
    const rest = forwardKinematics(
      joints,
      joints.map(() => identityQuat())
    );
    this.handles.clear();
    for (const role of msg.roles) {
      const jointIndex = msg.skeleton.end_effectors[role];
      if (jointIndex === undefined) continue;
      this.handles.set(role, {
        role,
        jointIndex,
        position: rest[jointIndex],
        enabled: true,
        dragging: false,
      });
    }
    this.connection = "live";
  }

  applyPoseFrame(msg: PoseFrame, joints: SkeletonMessage["skeleton"]["joints"]): void {
    this.lastPose = msg;
    const fk = forwardKinematics(joints, msg.joints as Quat[]);
    this.jointWorld = fk.map((p) => add(msg.root.pos, rotate(msg.root.quat, p)));
    for (const handle of this.handles.values()) {
      if (!handle.dragging) {
        handle.position = this.jointWorld[handle.jointIndex];
      }
    }
  }

  applyResiduals(msg: ResidualsMessage): void {
    this.residuals = msg.residuals;
    this.diagnostics = msg.diagnostics;
    this.queueLen = msg.queue_len;
  }

  /** Pointer drag: rate-capped to EDIT_RATE_CAP_HZ constraint edits. */
  dragHandle(role: string, position: Vec3): boolean {
    const handle = this.handles.get(role);
    if (!handle || !handle.enabled) return false;
    handle.dragging = true;
    handle.position = position;
    const t = this.now();
    if (t - this.lastEditAt < 1000 / EDIT_RATE_CAP_HZ) {
      this.pendingDrag = { role, pos: position };
      return false;
    }
    this.lastEditAt = t;
    this.client.updatePositionTarget(role, position);
    return true;
  }

  /** Called once per render frame: emits at most one coalesced drag edit. */
  flushDrag(): boolean {
    if (!this.pendingDrag) return false;
    const t = this.now();
    if (t - this.lastEditAt < 1000 / EDIT_RATE_CAP_HZ) return false;
    this.lastEditAt = t;
    const { role, pos } = this.pendingDrag;
    this.pendingDrag = null;
    this.client.updatePositionTarget(role, pos);
    return true;
  }

  releaseHandle(role: string): void {
    const handle = this.handles.get(role);
    if (handle) handle.dragging = false;
  }

  /** Toggle a sensor: disabled handles grey out and stop constraining. */
  toggleSensor(role: string, enabled: boolean): void {
    const handle = this.handles.get(role);
    if (!handle) return;
    handle.enabled = enabled;
    if (!enabled) {
      this.client.sendConstraintEdit([], [`ee_pos:${role}`, `ee_rot:${role}`]);
    } else {
      this.client.sendConstraintEdit(
        [
          { id: `ee_pos:${role}`, kind: "end_effector_position", roles: [role] },
          { id: `ee_rot:${role}`, kind: "end_effector_rotation", roles: [role] },
        ],
        []
      );
    }
  }

  /** Signals for the next replayed frame: dragged/disabled roles drop out. */
  frameSignals(base: SignalPayload[]): SignalPayload[] {
    return base
      .filter((s) => {
        const handle = this.handles.get(s.role);
        if (!handle) return true;
        return handle.enabled && !handle.dragging;
      })
      .map((s) => ({ ...s }));
  }
}
