"""Procedural motion generator: sinusoid-driven full-body clips for desk-scale
training and evaluation. All motions are deterministic per seed, phase-lock
contralateral limbs and stay within humanoid velocity limits.
"""

from __future__ import annotations

import numpy as np

from . import quat
from .errors import DimensionError
from .motion import MotionClip, clip_from_world
from .skeleton import Skeleton, default_humanoid

KINDS = ("walk_cycle", "arm_wave", "squat", "pushup_like")


def _rx(a):
    return quat.from_axis_angle([1, 0, 0], a)


def _ry(a):
    return quat.from_axis_angle([0, 1, 0], a)


def _rz(a):
    return quat.from_axis_angle([0, 0, 1], a)


def _compose_world(sk: Skeleton, locals_: np.ndarray, root_rot: np.ndarray) -> np.ndarray:
    """Per-parent local rotations [J, 4] -> absolute world rotations [J, 4]."""
    world = np.empty_like(locals_)
    world[0] = quat.multiply(root_rot, locals_[0])
    for j in range(1, sk.joint_count):
        world[j] = quat.multiply(world[sk.parents[j]], locals_[j])
    return quat.normalize(world)


def synth_motion(
    kind: str,
    duration: float,
    seed: int = 0,
    frame_rate: float = 60.0,
    skeleton: Skeleton | None = None,
) -> MotionClip:
    if kind not in KINDS:
        raise DimensionError(f"unknown motion kind {kind!r} (choose from {KINDS})")
    if duration <= 0:
        raise DimensionError("duration must be positive")
    sk = skeleton or default_humanoid()
    rng = np.random.default_rng(seed)
    frames = int(round(duration * frame_rate))
    time = np.arange(frames) / frame_rate

    J = sk.joint_count
    idx = {name: i for i, name in enumerate(sk.names)}
    world_rot = np.empty((frames, J, 4))
    root_pos = np.empty((frames, 3))

    # per-seed variation keeps clips from collapsing onto one template
    freq = {"walk_cycle": 1.55, "arm_wave": 1.0, "squat": 0.45, "pushup_like": 0.5}[kind]
    freq *= 1.0 + 0.1 * rng.uniform(-1.0, 1.0)
    phase0 = rng.uniform(0.0, 2 * np.pi)
    amp = 1.0 + 0.15 * rng.uniform(-1.0, 1.0)
    # decouple arm swing from leg phase so upper-body sensors do not fully
    # determine the legs (the ambiguity sparse setups have to cope with)
    arm_phase_off = rng.uniform(-1.2, 1.2)

    arm_drop = np.deg2rad(72.0)

    for t_i, t in enumerate(time):
        phase = 2 * np.pi * freq * t + phase0
        locals_ = np.tile(quat.IDENTITY, (J, 1))
        root_rot = quat.IDENTITY.copy()

        def set_local(name, q):
            locals_[idx[name]] = q

        # arms hang by default; overwritten per motion below
        set_local("LeftArm", _rz(-arm_drop))
        set_local("RightArm", _rz(arm_drop))

        if kind == "walk_cycle":
            speed = 1.1 * amp
            root_pos[t_i] = (0.0, 0.955, speed * t)
            leg = 0.42 * amp * np.sin(phase)
            knee_l = 0.48 * amp * max(0.0, np.sin(phase + 0.6))
            knee_r = 0.48 * amp * max(0.0, np.sin(phase + np.pi + 0.6))
            set_local("LeftUpLeg", _rx(-leg))
            set_local("RightUpLeg", _rx(leg))
            set_local("LeftLeg", _rx(knee_l))
            set_local("RightLeg", _rx(knee_r))
            arm = 0.38 * amp * np.sin(phase + arm_phase_off)
            set_local("LeftArm", quat.multiply(_rx(arm), _rz(-arm_drop)))
            set_local("RightArm", quat.multiply(_rx(-arm), _rz(arm_drop)))
            set_local("LeftForeArm", _rx(0.25 + 0.15 * np.sin(phase + arm_phase_off)))
            set_local("RightForeArm", _rx(0.25 - 0.15 * np.sin(phase + arm_phase_off)))
            set_local("Spine", _ry(0.08 * np.sin(phase)))
            set_local("Spine2", _ry(-0.06 * np.sin(phase)))
            set_local("Neck", _rx(0.04 * np.sin(2 * phase)))
        elif kind == "arm_wave":
            root_pos[t_i] = (0.0, 0.96, 0.0)
            # gentle root sway keeps rotational increments exercised
            root_rot = quat.multiply(
                _ry(0.25 * amp * np.sin(0.7 * phase)), _rz(0.08 * np.sin(0.9 * phase))
            )
            raise_a = np.deg2rad(135.0) + 0.25 * amp * np.sin(phase)
            set_local("LeftArm", _rz(raise_a - arm_drop))
            set_local("RightArm", _rz(arm_drop - raise_a))
            set_local("LeftForeArm", _rz(0.6 * amp * np.sin(phase + np.pi / 3)))
            set_local("RightForeArm", _rz(-0.6 * amp * np.sin(phase + np.pi / 3)))
            set_local("Spine1", _rz(0.07 * np.sin(phase)))
            set_local("Head", _rz(-0.08 * np.sin(phase)))
        elif kind == "squat":
            depth = 0.5 * (1 - np.cos(phase))  # 0..1
            bend = 0.9 * amp * depth
            root_rot = quat.multiply(_rx(0.18 * depth), _ry(0.1 * amp * np.sin(0.5 * phase)))
            # root drop matches the leg-chain shortening so feet stay grounded
            root_pos[t_i] = (0.0, 0.96 - 0.86 * (1 - np.cos(bend)), 0.0)
            set_local("LeftUpLeg", _rx(-bend))
            set_local("RightUpLeg", _rx(-bend))
            set_local("LeftLeg", _rx(2.0 * bend))
            set_local("RightLeg", _rx(2.0 * bend))
            set_local("LeftFoot", _rx(-bend))
            set_local("RightFoot", _rx(-bend))
            set_local("Spine", _rx(0.25 * depth))
            # arms reach forward as counterweight
            set_local("LeftArm", quat.multiply(_rx(1.1 * depth), _rz(-arm_drop)))
            set_local("RightArm", quat.multiply(_rx(-1.1 * depth), _rz(arm_drop)))
        else:  # pushup_like
            press = 0.5 * (1 - np.cos(phase))  # 0 at top
            root_rot = quat.multiply(
                _rx(np.pi / 2 - 0.12 - 0.1 * press), _rz(0.05 * np.sin(0.8 * phase))
            )
            root_pos[t_i] = (0.0, 0.55 - 0.2 * amp * press, 0.0)
            elbow = 1.25 * amp * press
            set_local("LeftArm", _rz(-arm_drop - 0.3 * press))
            set_local("RightArm", _rz(arm_drop + 0.3 * press))
            set_local("LeftForeArm", _rz(elbow))
            set_local("RightForeArm", _rz(-elbow))
            set_local("Spine", _rx(-0.1 * press))
            set_local("Neck", _rx(-0.35))
            set_local("LeftUpLeg", _rx(0.1))
            set_local("RightUpLeg", _rx(0.1))

        world_rot[t_i] = _compose_world(sk, locals_, root_rot)

    return clip_from_world(sk, world_rot, root_pos, frame_rate, name=f"{kind}-{seed}")


def joint_speeds(clip: MotionClip) -> np.ndarray:
    """Per-frame per-joint world speed magnitudes [T-1, J] in m/s."""
    pos = clip.world_positions()
    return np.linalg.norm(np.diff(pos, axis=0), axis=-1) * clip.frame_rate
