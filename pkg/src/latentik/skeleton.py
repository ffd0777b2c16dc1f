"""Skeleton definition, poses, forward kinematics and root-state accumulation.

Pose convention: every joint carries a quaternion expressed in the frame of
the previous frame's root orientation ("root space"). Index 0 is the root's
own rotational increment relative to the previous frame; the 3-vector
displacement is the root's translation in that same frame. Because all
quaternions live in one common frame, forward kinematics never composes
rotations along the chain: each joint's children offsets are rotated by that
joint's stored quaternion directly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .errors import DimensionError, InvalidPoseError, MissingRoleError

LIMB_GROUP_NAMES = ("root", "spine_head", "left_arm", "right_arm", "left_leg", "right_leg")

FK_NORM_TOL = 1e-3


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int | None
    offset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        if self.offset.shape != (3,) or not np.all(np.isfinite(self.offset)):
            raise DimensionError(f"joint {self.name}: offset must be a finite 3-vector")


class Skeleton:
    """Joint hierarchy in topological order plus limb grouping and sensor roles.

    Exactly one root (parent None) at index 0; every parent index precedes its
    children; every joint belongs to exactly one limb group.
    """

    def __init__(
        self,
        joints: list[Joint],
        limb_groups: dict[str, list[int]],
        end_effectors: dict[str, int],
    ):
        if not joints or joints[0].parent is not None:
            raise InvalidPoseError("joint 0 must be the unique root (parent None)")
        for i, j in enumerate(joints[1:], start=1):
            if j.parent is None:
                raise InvalidPoseError("multiple roots in skeleton")
            if not (0 <= j.parent < i):
                raise InvalidPoseError(f"joint {i} ({j.name}): parent must precede it")
        seen: set[int] = set()
        for name in LIMB_GROUP_NAMES:
            if name not in limb_groups:
                raise InvalidPoseError(f"missing limb group {name!r}")
            group = limb_groups[name]
            if seen & set(group):
                raise InvalidPoseError("limb groups overlap")
            seen |= set(group)
        if seen != set(range(len(joints))):
            raise InvalidPoseError("limb groups must partition the joints")
        for role, idx in end_effectors.items():
            if not (0 <= idx < len(joints)):
                raise MissingRoleError(role)

        self.joints = list(joints)
        self.limb_groups = {k: list(v) for k, v in limb_groups.items()}
        self.end_effectors = dict(end_effectors)
        self.parents = np.array([-1] + [j.parent for j in joints[1:]], dtype=int)
        self.offsets = np.stack([j.offset for j in joints])
        # ancestry[j, k] = 1 when edge (parents[k+1] -> k+1) lies on the root->j path
        J = len(joints)
        anc = np.zeros((J, J - 1))
        for j in range(1, J):
            anc[j] = anc[self.parents[j]]
            anc[j, j - 1] = 1.0
        self.ancestry = anc

    @property
    def joint_count(self) -> int:
        return len(self.joints)

    @property
    def names(self) -> list[str]:
        return [j.name for j in self.joints]

    def role_index(self, role: str) -> int:
        try:
            return self.end_effectors[role]
        except KeyError:
            raise MissingRoleError(role) from None

    def content_hash(self) -> str:
        payload = {
            "joints": [
                {"name": j.name, "parent": j.parent, "offset": [round(v, 9) for v in j.offset]}
                for j in self.joints
            ],
            "limb_groups": self.limb_groups,
            "end_effectors": self.end_effectors,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "joints": [
                {"name": j.name, "parent": j.parent, "offset": list(map(float, j.offset))}
                for j in self.joints
            ],
            "limb_groups": self.limb_groups,
            "end_effectors": self.end_effectors,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        joints = [Joint(j["name"], j["parent"], np.array(j["offset"])) for j in d["joints"]]
        return cls(joints, d["limb_groups"], d["end_effectors"])


@dataclass
class Pose:
    """Root-space joint rotations [J, 4] plus root displacement [3] (meters)."""

    joint_rotations: np.ndarray
    root_displacement: np.ndarray

    def __post_init__(self):
        self.joint_rotations = np.asarray(self.joint_rotations, dtype=float)
        self.root_displacement = np.asarray(self.root_displacement, dtype=float)
        if self.joint_rotations.ndim != 2 or self.joint_rotations.shape[1] != 4:
            raise DimensionError("joint_rotations must have shape [J, 4]")
        if self.root_displacement.shape != (3,):
            raise DimensionError("root_displacement must be a 3-vector")

    @property
    def joint_count(self) -> int:
        return self.joint_rotations.shape[0]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.joint_rotations.reshape(-1), self.root_displacement])

    @classmethod
    def from_vector(cls, x: np.ndarray, joint_count: int) -> "Pose":
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != joint_count * 4 + 3:
            raise DimensionError(
                f"pose vector length {x.shape[0]} != {joint_count}*4+3"
            )
        return cls(x[: joint_count * 4].reshape(joint_count, 4), x[joint_count * 4 :])

    @classmethod
    def identity(cls, joint_count: int) -> "Pose":
        q = np.zeros((joint_count, 4))
        q[:, 0] = 1.0
        return cls(q, np.zeros(3))

    def normalized(self) -> "Pose":
        return Pose(quat.normalize(self.joint_rotations), self.root_displacement.copy())

    def canonical(self) -> "Pose":
        return Pose(quat.canonical_sign(quat.normalize(self.joint_rotations)),
                    self.root_displacement.copy())


@dataclass
class RootState:
    """Accumulated world transform of the root across a stream of increments."""

    world_rotation: np.ndarray = field(default_factory=lambda: quat.IDENTITY.copy())
    world_position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.world_rotation = np.asarray(self.world_rotation, dtype=float)
        self.world_position = np.asarray(self.world_position, dtype=float)

    def copy(self) -> "RootState":
        return RootState(self.world_rotation.copy(), self.world_position.copy())


@dataclass
class SparseSignal:
    role: str
    position: np.ndarray
    rotation: np.ndarray
    dof: str = "pos_rot"  # or "pos_only"
    valid: bool = True

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.rotation = np.asarray(self.rotation, dtype=float)
        if self.dof not in ("pos_rot", "pos_only"):
            raise DimensionError(f"unknown dof {self.dof!r}")


@dataclass
class SparseInput:
    signals: list[SparseSignal]

    def __post_init__(self):
        roles = [s.role for s in self.signals]
        if len(set(roles)) != len(roles):
            raise DimensionError("sparse input roles must be unique")

    def by_role(self) -> dict[str, SparseSignal]:
        return {s.role: s for s in self.signals}


def _checked_quats(pose: Pose, sk: Skeleton) -> np.ndarray:
    if pose.joint_count != sk.joint_count:
        raise DimensionError(
            f"pose has {pose.joint_count} joints, skeleton has {sk.joint_count}"
        )
    q = pose.joint_rotations
    n = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(n - 1.0) > FK_NORM_TOL):
        raise InvalidPoseError("pose quaternions deviate from unit norm beyond 1e-3")
    return q / n[:, None]


def forward_kinematics(pose: Pose, sk: Skeleton) -> np.ndarray:
    """Root-space joint positions [J, 3]; root at the origin, increment applied.

    position(j) = position(parent) + rotate(q_parent, offset_j). The root's
    quaternion slot holds its increment, so it participates exactly like any
    other joint when rotating its children's offsets.
    """
    q = _checked_quats(pose, sk)
    edge = quat.rotate_vector(q[sk.parents[1:]], sk.offsets[1:])
    return sk.ancestry @ edge


def fk_batch(quats: np.ndarray, sk: Skeleton) -> np.ndarray:
    """forward_kinematics over stacked unit quaternions [T, J, 4] -> [T, J, 3]."""
    edge = quat.rotate_vector(quats[:, sk.parents[1:]], sk.offsets[1:])
    return np.einsum("jk,tkc->tjc", sk.ancestry, edge)


def to_dual_quaternions(pose: Pose, sk: Skeleton) -> np.ndarray:
    """Pose as J dual quaternions [J, 8]: real = rotation, dual = 0.5*(0,t)*real.

    t is the joint's root-space position from forward kinematics; the root
    entry carries the root displacement instead.
    """
    q = _checked_quats(pose, sk)
    positions = forward_kinematics(pose, sk)
    t = positions.copy()
    t[0] = pose.root_displacement
    t_quat = np.concatenate([np.zeros((sk.joint_count, 1)), t], axis=1)
    dual = 0.5 * quat.multiply(t_quat, q)
    return np.concatenate([q, dual], axis=1)


def dq_translation(dq: np.ndarray) -> np.ndarray:
    """Recover translation(s) from dual quaternion rows [..., 8]."""
    real = dq[..., :4]
    dual = dq[..., 4:]
    return quat.multiply(2.0 * dual, quat.conjugate(real))[..., 1:]


def compose_root(prev: RootState, pose: Pose) -> RootState:
    """Accumulate the pose's root increment onto a world-space root state."""
    delta = quat.normalize(pose.joint_rotations[0])
    rot = quat.normalize(quat.multiply(prev.world_rotation, delta))
    pos = prev.world_position + quat.rotate_vector(prev.world_rotation, pose.root_displacement)
    return RootState(rot, pos)


def sparse_fk(
    pose: Pose,
    sk: Skeleton,
    roles: list[str],
    root: RootState | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Global (position, rotation) of the joints behind the given sensor roles.

    ``root`` is the accumulated state up to the previous frame; the pose's own
    displacement and increment place the body within that frame, so a root
    sensor constraint can act on the displacement. With an identity root state
    and zero displacement this reduces to forward_kinematics positions.
    """
    if root is None:
        root = RootState()
    positions = forward_kinematics(pose, sk)
    q = _checked_quats(pose, sk)
    out = []
    for role in roles:
        idx = sk.role_index(role)
        p = root.world_position + quat.rotate_vector(
            root.world_rotation, pose.root_displacement + positions[idx]
        )
        r = quat.multiply(root.world_rotation, q[idx])
        out.append((p, quat.normalize(r)))
    return out


def global_positions(pose: Pose, sk: Skeleton, root: RootState | None = None) -> np.ndarray:
    """World positions of all joints [J, 3] under the previous root state."""
    if root is None:
        root = RootState()
    positions = forward_kinematics(pose, sk)
    return root.world_position + quat.rotate_vector(
        root.world_rotation, pose.root_displacement + positions
    )


def rotation_angle_error(r0: np.ndarray, r1: np.ndarray) -> float:
    """Geodesic angle between two unit quaternions, degrees in [0, 180]."""
    return float(quat.rotation_angle_deg(r0, r1))


DEFAULT_ROLES = ("hip", "head", "left_hand", "right_hand", "left_foot", "right_foot")


def default_humanoid() -> Skeleton:
    """22-joint humanoid, meters, y-up. Standing hips sit ~0.96 m above ground."""
    j = Joint
    joints = [
        j("Hips", None, (0.0, 0.0, 0.0)),
        j("Spine", 0, (0.0, 0.12, 0.0)),
        j("Spine1", 1, (0.0, 0.13, 0.0)),
        j("Spine2", 2, (0.0, 0.13, 0.0)),
        j("Neck", 3, (0.0, 0.12, 0.0)),
        j("Head", 4, (0.0, 0.14, 0.0)),
        j("LeftShoulder", 3, (0.06, 0.09, 0.0)),
        j("LeftArm", 6, (0.12, 0.0, 0.0)),
        j("LeftForeArm", 7, (0.26, 0.0, 0.0)),
        j("LeftHand", 8, (0.25, 0.0, 0.0)),
        j("RightShoulder", 3, (-0.06, 0.09, 0.0)),
        j("RightArm", 10, (-0.12, 0.0, 0.0)),
        j("RightForeArm", 11, (-0.26, 0.0, 0.0)),
        j("RightHand", 12, (-0.25, 0.0, 0.0)),
        j("LeftUpLeg", 0, (0.09, -0.06, 0.0)),
        j("LeftLeg", 14, (0.0, -0.42, 0.0)),
        j("LeftFoot", 15, (0.0, -0.44, 0.0)),
        j("LeftToe", 16, (0.0, -0.04, 0.12)),
        j("RightUpLeg", 0, (-0.09, -0.06, 0.0)),
        j("RightLeg", 18, (0.0, -0.42, 0.0)),
        j("RightFoot", 19, (0.0, -0.44, 0.0)),
        j("RightToe", 20, (0.0, -0.04, 0.12)),
    ]
    limb_groups = {
        "root": [0],
        "spine_head": [1, 2, 3, 4, 5],
        "left_arm": [6, 7, 8, 9],
        "right_arm": [10, 11, 12, 13],
        "left_leg": [14, 15, 16, 17],
        "right_leg": [18, 19, 20, 21],
    }
    end_effectors = {
        "hip": 0,
        "head": 5,
        "left_hand": 9,
        "right_hand": 13,
        "left_foot": 16,
        "right_foot": 20,
    }
    return Skeleton(joints, limb_groups, end_effectors)


def standing_height(sk: Skeleton) -> float:
    """Height of the root above the lowest joint in the rest pose."""
    rest = forward_kinematics(Pose.identity(sk.joint_count), sk)
    return float(-rest[:, 1].min())
