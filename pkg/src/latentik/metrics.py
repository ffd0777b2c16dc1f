"""Evaluation metrics: positional, rotational, velocity and end-effector
errors between a reconstructed clip and its ground truth, root-aligned."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .errors import DimensionError
from .motion import MotionClip


@dataclass
class MetricsReport:
    scenario: str
    pos_cm: float
    pos_std: float
    rot_deg: float
    rot_std: float
    vel_cm_s: float
    vel_std: float
    ee_cm: float
    ee_std: float
    frames: int = 0
    mean_iterations: float = 0.0
    per_frame_pos_cm: list[float] = field(default_factory=list)
    per_frame_ee_cm: list[float] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "frames": self.frames,
            "pos_cm": self.pos_cm,
            "pos_std": self.pos_std,
            "rot_deg": self.rot_deg,
            "rot_std": self.rot_std,
            "vel_cm_s": self.vel_cm_s,
            "vel_std": self.vel_std,
            "ee_cm": self.ee_cm,
            "ee_std": self.ee_std,
            "mean_iterations": self.mean_iterations,
            "per_frame_pos_cm": self.per_frame_pos_cm,
            "per_frame_ee_cm": self.per_frame_ee_cm,
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def aligned_world_positions(clip: MotionClip, reference: MotionClip) -> np.ndarray:
    """World positions of ``clip`` with the root translated onto ``reference``
    per frame (root alignment removes global drift from pose evaluation)."""
    pos = clip.world_positions()
    ref = reference.world_positions()
    shift = ref[:, 0:1, :] - pos[:, 0:1, :]
    return pos + shift


def compute_metrics(
    predicted: MotionClip,
    truth: MotionClip,
    sensor_roles: list[str],
    scenario: str = "",
    mean_iterations: float = 0.0,
) -> MetricsReport:
    """Root-aligned error metrics in centimeters / degrees / cm-per-second.

    Rotations are compared per joint in the stored increment representation
    (index 0 being the root increment), which is invariant to global
    placement; the velocity metric uses the magnitude of the velocity-vector
    difference with central differences inside the clip and one-sided stencils
    at its ends. End-effector error covers the given roles excluding the root.
    """
    if predicted.frame_count != truth.frame_count:
        raise DimensionError(
            f"frame count mismatch: {predicted.frame_count} vs {truth.frame_count}"
        )
    if predicted.skeleton.content_hash() != truth.skeleton.content_hash():
        raise DimensionError("clips use different skeletons")
    sk = truth.skeleton

    pred = aligned_world_positions(predicted, truth)
    ref = truth.world_positions()

    dist = np.linalg.norm(pred - ref, axis=-1)  # [T, J] meters
    per_frame_pos = dist.mean(axis=1) * 100.0

    ang = quat.rotation_angle_deg(
        quat.normalize(predicted.quats), quat.normalize(truth.quats)
    )  # [T, J]
    per_frame_rot = ang.mean(axis=1)

    def velocities(p: np.ndarray) -> np.ndarray:
        v = np.empty_like(p)
        v[1:-1] = (p[2:] - p[:-2]) * (truth.frame_rate / 2.0)
        v[0] = (p[1] - p[0]) * truth.frame_rate
        v[-1] = (p[-1] - p[-2]) * truth.frame_rate
        return v

    if predicted.frame_count >= 2:
        vdiff = np.linalg.norm(velocities(pred) - velocities(ref), axis=-1)
        per_frame_vel = vdiff.mean(axis=1) * 100.0
    else:
        per_frame_vel = np.zeros(1)

    ee_idx = [sk.role_index(r) for r in sensor_roles if sk.role_index(r) != 0]
    if ee_idx:
        ee_dist = np.linalg.norm(pred[:, ee_idx] - ref[:, ee_idx], axis=-1)
        per_frame_ee = ee_dist.mean(axis=1) * 100.0
    else:
        per_frame_ee = np.zeros(predicted.frame_count)

    return MetricsReport(
        scenario=scenario,
        frames=predicted.frame_count,
        pos_cm=float(per_frame_pos.mean()),
        pos_std=float(per_frame_pos.std()),
        rot_deg=float(per_frame_rot.mean()),
        rot_std=float(per_frame_rot.std()),
        vel_cm_s=float(per_frame_vel.mean()),
        vel_std=float(per_frame_vel.std()),
        ee_cm=float(per_frame_ee.mean()),
        ee_std=float(per_frame_ee.std()),
        mean_iterations=mean_iterations,
        per_frame_pos_cm=[float(v) for v in per_frame_pos],
        per_frame_ee_cm=[float(v) for v in per_frame_ee],
    )
