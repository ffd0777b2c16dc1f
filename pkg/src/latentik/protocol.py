"""Line-delimited JSON wire protocol shared by the service, the CLI replayer
and the tests. One JSON object per line; unknown fields are ignored; every
message carries a monotonically increasing per-direction sequence number."""

from __future__ import annotations

import json
from typing import Iterable

import numpy as np

from .errors import ProtocolError
from .optimizer import Constraint, FrameTrace
from .skeleton import Pose, RootState, Skeleton, SparseInput, SparseSignal

PROTOCOL_VERSION = 1

MESSAGE_TYPES = (
    "hello", "skeleton", "sparse_frame", "constraint_edit",
    "pose_frame", "residuals", "error", "bye", "stream_header",
)


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def encode_message(msg: dict, seq: int | None = None) -> str:
    if seq is not None:
        msg = {**msg, "seq": seq}
    return canonical(msg) + "\n"


def decode_line(line: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"malformed JSON: {e}") from None
    if not isinstance(msg, dict):
        raise ProtocolError("message must be a JSON object")
    if msg.get("type") not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {msg.get('type')!r}")
    return msg


def floats(x) -> list[float]:
    return [float(v) for v in np.asarray(x, dtype=float).reshape(-1)]


# --- payload builders -------------------------------------------------------


def stream_header(
    skeleton: Skeleton, roles: list[str], dof: str, frame_rate: float,
    initial_root: RootState, seed_pose: Pose,
) -> dict:
    return {
        "type": "stream_header",
        "version": PROTOCOL_VERSION,
        "skeleton_hash": skeleton.content_hash(),
        "roles": list(roles),
        "dof": dof,
        "frame_rate": frame_rate,
        "initial_root": {
            "pos": floats(initial_root.world_position),
            "quat": floats(initial_root.world_rotation),
        },
        "seed_pose": {
            "joints": [floats(q) for q in seed_pose.joint_rotations],
            "displacement": floats(seed_pose.root_displacement),
        },
    }


def parse_stream_header(msg: dict) -> tuple[list[str], str, float, RootState, Pose]:
    try:
        roles = list(msg["roles"])
        dof = msg["dof"]
        rate = float(msg["frame_rate"])
        root = RootState(
            np.array(msg["initial_root"]["quat"]), np.array(msg["initial_root"]["pos"])
        )
        pose = Pose(
            np.array(msg["seed_pose"]["joints"]), np.array(msg["seed_pose"]["displacement"])
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"bad stream header: {e}") from None
    return roles, dof, rate, root, pose


def sparse_frame_message(frame: int, sparse: SparseInput) -> dict:
    return {
        "type": "sparse_frame",
        "frame": frame,
        "signals": [
            {
                "role": s.role,
                "pos": floats(s.position),
                "quat": floats(s.rotation),
                "dof": s.dof,
                "valid": bool(s.valid),
            }
            for s in sparse.signals
        ],
    }


def parse_sparse_frame(msg: dict) -> tuple[int, SparseInput]:
    try:
        signals = [
            SparseSignal(
                s["role"], np.array(s["pos"]), np.array(s.get("quat", [1, 0, 0, 0])),
                s.get("dof", "pos_rot"), bool(s.get("valid", True)),
            )
            for s in msg["signals"]
        ]
        return int(msg["frame"]), SparseInput(signals)
    except (KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"bad sparse_frame: {e}") from None


def pose_frame_message(frame: int, root: RootState, pose: Pose, trace: FrameTrace) -> dict:
    return {
        "type": "pose_frame",
        "frame": frame,
        "root": {"pos": floats(root.world_position), "quat": floats(root.world_rotation)},
        "joints": [floats(q) for q in pose.joint_rotations],
        "displacement": floats(pose.root_displacement),
        "iterations": trace.iterations,
        "lpo": float(trace.lpo[-1]) if trace.lpo else 0.0,
    }


def residuals_message(frame: int, trace: FrameTrace, queue_len: int = 0) -> dict:
    return {
        "type": "residuals",
        "frame": frame,
        "residuals": {k: float(v) for k, v in sorted(trace.residuals.items())},
        "diagnostics": list(trace.diagnostics),
        "queue_len": queue_len,
    }


def parse_constraint_edit(msg: dict) -> tuple[list[Constraint], list[str]]:
    add = []
    for spec in msg.get("add", []):
        try:
            add.append(
                Constraint(
                    id=spec["id"],
                    kind=spec["kind"],
                    roles=tuple(spec.get("roles", [])),
                    weight=float(spec.get("weight", 1.0)),
                    target_position=spec.get("target_position"),
                    target_rotation=spec.get("target_rotation"),
                    target_value=float(spec.get("target_value", 0.0)),
                    direction=spec.get("direction"),
                    axis=spec.get("axis"),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"bad constraint spec: {e}") from None
    remove = [str(cid) for cid in msg.get("remove", [])]
    return add, remove


def skeleton_message(skeleton: Skeleton, roles: list[str]) -> dict:
    return {
        "type": "skeleton",
        "protocol": PROTOCOL_VERSION,
        "skeleton": skeleton.to_dict(),
        "skeleton_hash": skeleton.content_hash(),
        "roles": list(roles),
    }


def write_stream(path, header: dict, frames: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(encode_message(header))
        for msg in frames:
            fh.write(encode_message(msg))


def read_stream(path) -> tuple[dict, list[dict]]:
    header = None
    frames = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            msg = decode_line(line)
            if msg["type"] == "stream_header":
                header = msg
            elif msg["type"] == "sparse_frame":
                frames.append(msg)
            else:
                raise ProtocolError(f"unexpected {msg['type']!r} in stream file")
    if header is None:
        raise ProtocolError("stream file missing stream_header")
    return header, frames
