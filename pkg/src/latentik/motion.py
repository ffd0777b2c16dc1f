"""Motion clips and conversion between world-space and increment-space poses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .errors import DimensionError
from .skeleton import Pose, RootState, Skeleton, compose_root, fk_batch


@dataclass
class MotionClip:
    """Pose sequence in the increment representation plus its world anchoring.

    ``initial_root`` is the root state *before* frame 0 (frame 0 increments are
    identity/zero by construction), so accumulating increments reproduces the
    absolute trajectory.
    """

    skeleton: Skeleton
    quats: np.ndarray  # [T, J, 4] root-space rotations, index 0 = root increment
    displacements: np.ndarray  # [T, 3]
    frame_rate: float = 60.0
    initial_root: RootState = field(default_factory=RootState)
    name: str = ""

    def __post_init__(self):
        self.quats = np.asarray(self.quats, dtype=float)
        self.displacements = np.asarray(self.displacements, dtype=float)
        if self.quats.ndim != 3 or self.quats.shape[2] != 4:
            raise DimensionError("quats must be [T, J, 4]")
        if self.quats.shape[0] != self.displacements.shape[0]:
            raise DimensionError("quats and displacements disagree on frame count")
        if self.quats.shape[0] < 1:
            raise DimensionError("clip needs at least one frame")
        if self.quats.shape[1] != self.skeleton.joint_count:
            raise DimensionError("clip joint count does not match skeleton")
        if self.frame_rate <= 0:
            raise DimensionError("frame rate must be positive")

    @property
    def frame_count(self) -> int:
        return self.quats.shape[0]

    def pose(self, t: int) -> Pose:
        return Pose(self.quats[t].copy(), self.displacements[t].copy())

    def pose_vectors(self) -> np.ndarray:
        t, j = self.quats.shape[:2]
        return np.concatenate([self.quats.reshape(t, j * 4), self.displacements], axis=1)

    def root_states(self) -> list[RootState]:
        """States s_0..s_T where s_t is the accumulated state before frame t."""
        states = [self.initial_root.copy()]
        for t in range(self.frame_count):
            states.append(compose_root(states[-1], self.pose(t)))
        return states

    def world_positions(self) -> np.ndarray:
        """Global joint positions [T, J, 3]."""
        fk = fk_batch(quat.normalize(self.quats), self.skeleton)
        states = self.root_states()
        out = np.empty_like(fk)
        for t in range(self.frame_count):
            s = states[t]
            local = self.displacements[t] + fk[t]
            out[t] = s.world_position + quat.rotate_vector(s.world_rotation, local)
        return out

    def world_rotations(self) -> np.ndarray:
        """Global joint rotations [T, J, 4]."""
        states = self.root_states()
        out = np.empty_like(self.quats)
        for t in range(self.frame_count):
            out[t] = quat.multiply(states[t].world_rotation, quat.normalize(self.quats[t]))
        return out

    def root_trajectory(self) -> np.ndarray:
        """Absolute root positions [T, 3]."""
        states = self.root_states()
        return np.stack([s.world_position for s in states[1:]])

    def subclip(self, start: int, end: int) -> "MotionClip":
        """Frames [start, end) as a standalone clip, re-anchored through world space."""
        world_rot, root_pos = clip_to_world(self)
        return clip_from_world(
            self.skeleton, world_rot[start:end], root_pos[start:end],
            self.frame_rate, name=self.name,
        )


def make_sparse(
    clip: MotionClip,
    roles: list[str],
    dof: str = "pos_rot",
    initial_root: "RootState | None" = None,
) -> list["SparseInput"]:
    """Per-frame sensor readings for the given roles, taken from ground truth.

    Feeding these targets together with the true poses back into the
    constraint loss yields zero residuals by construction. ``initial_root``
    overrides the clip's own anchoring when sensors should be expressed in a
    different world frame.
    """
    from .skeleton import SparseInput, SparseSignal, sparse_fk

    if initial_root is None:
        states = clip.root_states()
    else:
        states = [initial_root.copy()]
        for t in range(clip.frame_count):
            states.append(compose_root(states[-1], clip.pose(t)))
    out = []
    for t in range(clip.frame_count):
        readings = sparse_fk(clip.pose(t), clip.skeleton, roles, states[t])
        signals = [
            SparseSignal(role, pos, rot, dof=dof) for role, (pos, rot) in zip(roles, readings)
        ]
        out.append(SparseInput(signals))
    return out


def clip_from_world(
    skeleton: Skeleton,
    world_rotations: np.ndarray,
    root_positions: np.ndarray,
    frame_rate: float,
    name: str = "",
) -> MotionClip:
    """Build a clip from absolute joint rotations [T, J, 4] and root path [T, 3].

    Frame t stores rotations relative to the root orientation of frame t-1 and
    the root displacement in that same frame; frame 0 uses itself as reference
    so its increments are identity/zero.
    """
    world_rotations = quat.normalize(np.asarray(world_rotations, dtype=float))
    root_positions = np.asarray(root_positions, dtype=float)
    t = world_rotations.shape[0]
    prev_root = np.concatenate([world_rotations[:1, 0], world_rotations[:-1, 0]], axis=0)
    prev_conj = quat.conjugate(prev_root)
    quats = quat.multiply(prev_conj[:, None, :], world_rotations)
    quats = quat.canonical_sign(quat.normalize(quats))
    steps = np.vstack([np.zeros(3), np.diff(root_positions, axis=0)])
    disps = quat.rotate_vector(prev_conj, steps)
    initial = RootState(world_rotations[0, 0].copy(), root_positions[0].copy())
    return MotionClip(skeleton, quats, disps, frame_rate, initial, name)


def clip_to_world(clip: MotionClip) -> tuple[np.ndarray, np.ndarray]:
    """Absolute joint rotations [T, J, 4] and root positions [T, 3]."""
    return clip.world_rotations(), clip.root_trajectory()


def resample_clip(clip: MotionClip, target_rate: float = 60.0) -> MotionClip:
    """Resample to the target rate: slerp on world rotations, lerp on root path."""
    if abs(clip.frame_rate - target_rate) < 1e-9 or clip.frame_count < 2:
        return clip
    world_rot, root_pos = clip_to_world(clip)
    duration = (clip.frame_count - 1) / clip.frame_rate
    count = int(round(duration * target_rate)) + 1
    old_t = np.arange(clip.frame_count) / clip.frame_rate
    new_t = np.minimum(np.arange(count) / target_rate, old_t[-1])
    j = clip.skeleton.joint_count
    out_rot = np.empty((count, j, 4))
    out_pos = np.empty((count, 3))
    for i, tt in enumerate(new_t):
        k = min(int(np.searchsorted(old_t, tt, side="right")) - 1, clip.frame_count - 2)
        frac = (tt - old_t[k]) * clip.frame_rate
        for jj in range(j):
            out_rot[i, jj] = quat.slerp(world_rot[k, jj], world_rot[k + 1, jj], frac)
        out_pos[i] = (1 - frac) * root_pos[k] + frac * root_pos[k + 1]
    return clip_from_world(clip.skeleton, out_rot, out_pos, target_rate, name=clip.name)
