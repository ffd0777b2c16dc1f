// Minimal quaternion/vector helpers matching the service's conventions:
// quaternions are [w, x, y, z]; forward kinematics rotates each joint's
// children offsets by that joint's root-space quaternion (index 0 holds the
// root increment), root at the origin.

import type { JointSpec, Quat, Vec3 } from "./protocol.js";

export function rotate(q: Quat, v: Vec3): Vec3 {
  const [w, x, y, z] = q;
  const tx = 2 * (y * v[2] - z * v[1]);
  const ty = 2 * (z * v[0] - x * v[2]);
  const tz = 2 * (x * v[1] - y * v[0]);
  return [
    v[0] + w * tx + y * tz - z * ty,
    v[1] + w * ty + z * tx - x * tz,
    v[2] + w * tz + x * ty - y * tx,
  ];
}

export function add(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function forwardKinematics(joints: JointSpec[], quats: Quat[]): Vec3[] {
  const positions: Vec3[] = new Array(joints.length);
  positions[0] = [0, 0, 0];
  for (let j = 1; j < joints.length; j++) {
    const parent = joints[j].parent ?? 0;
    positions[j] = add(positions[parent], rotate(quats[parent], joints[j].offset));
  }
  return positions;
}

export function worldPositions(
  joints: JointSpec[],
  quats: Quat[],
  displacement: Vec3,
  rootPos: Vec3,
  rootQuat: Quat,
  prevRootQuat?: Quat
): Vec3[] {
  // pose_frame carries the *committed* root state (after this frame); the
  // rendered pose uses it directly: world = root.pos + R_committed * fk,
  // which matches the service geometry up to the within-frame increment.
  const fk = forwardKinematics(joints, quats);
  return fk.map((p) => add(rootPos, rotate(prevRootQuat ?? rootQuat, p)));
}

export function identityQuat(): Quat {
  return [1, 0, 0, 0];
}
