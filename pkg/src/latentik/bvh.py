"""BVH reading and writing.

Parsing converts the file's local Euler channels to the package's increment
representation (root-space rotations, per-frame root delta + displacement) and
resamples to 60 Hz. Writing emits ZYX Euler channels with fixed formatting so
identical clips serialize identically.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import quat
from .errors import ParseError
from .motion import MotionClip, clip_from_world, clip_to_world, resample_clip
from .skeleton import Joint, LIMB_GROUP_NAMES, Skeleton

_ORDER_MAP = {"Xrotation": "X", "Yrotation": "Y", "Zrotation": "Z"}
_CHANNEL_NAMES = {"X": "Xrotation", "Y": "Yrotation", "Z": "Zrotation"}

TARGET_RATE = 60.0


def _quat_from_euler(order: str, degrees: np.ndarray) -> np.ndarray:
    r = Rotation.from_euler(order, degrees, degrees=True)
    x, y, z, w = r.as_quat().T
    return np.stack([w, x, y, z], axis=-1)


def _euler_from_quat(q: np.ndarray, order: str) -> np.ndarray:
    wxyz = np.asarray(q, dtype=float)
    xyzw = np.concatenate([wxyz[..., 1:], wxyz[..., :1]], axis=-1)
    flat = xyzw.reshape(-1, 4)
    eulers = Rotation.from_quat(flat).as_euler(order, degrees=True)
    return eulers.reshape(wxyz.shape[:-1] + (3,))


class _Reader:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def peek(self) -> str:
        while self.pos < len(self.lines) and not self.lines[self.pos].strip():
            self.pos += 1
        if self.pos >= len(self.lines):
            raise ParseError("unexpected end of file", self.pos)
        return self.lines[self.pos].strip()

    def next(self) -> str:
        line = self.peek()
        self.pos += 1
        return line

    @property
    def line_no(self) -> int:
        return self.pos


def _assign_limb_groups(names: list[str], parents: np.ndarray) -> dict[str, list[int]]:
    """Heuristic grouping by joint-name keywords; fallback splits by subtree."""
    groups: dict[str, list[int]] = {name: [] for name in LIMB_GROUP_NAMES}
    groups["root"].append(0)
    for i, name in enumerate(names):
        if i == 0:
            continue
        low = name.lower()
        left = "left" in low or low.startswith("l")
        if any(k in low for k in ("arm", "hand", "shoulder", "collar", "clavicle", "elbow", "wrist")):
            groups["left_arm" if left else "right_arm"].append(i)
        elif any(k in low for k in ("leg", "foot", "toe", "hip", "knee", "ankle", "thigh", "shin", "upleg")):
            groups["left_leg" if left else "right_leg"].append(i)
        else:
            groups["spine_head"].append(i)
    return groups


def _default_end_effectors(names: list[str]) -> dict[str, int]:
    out: dict[str, int] = {"hip": 0}
    lows = [n.lower() for n in names]

    def find(*keys, left=None):
        for i, low in enumerate(lows):
            if left is True and not (low.startswith("l") or "left" in low):
                continue
            if left is False and not (low.startswith("r") or "right" in low):
                continue
            if any(k in low for k in keys):
                return i
        return None

    for role, keys, left in (
        ("head", ("head",), None),
        ("left_hand", ("hand", "wrist"), True),
        ("right_hand", ("hand", "wrist"), False),
        ("left_foot", ("foot", "ankle"), True),
        ("right_foot", ("foot", "ankle"), False),
    ):
        idx = find(*keys, left=left)
        if idx is not None:
            out[role] = idx
    return out


def parse_bvh(text: str, resample: bool = True) -> MotionClip:
    rd = _Reader(text)
    if rd.next().split()[0] != "HIERARCHY":
        raise ParseError("missing HIERARCHY header", rd.line_no)

    names: list[str] = []
    parents: list[int] = []
    offsets: list[np.ndarray] = []
    channels: list[list[str]] = []
    stack: list[int] = []

    while True:
        line = rd.peek()
        tok = line.split()
        if tok[0] == "MOTION":
            rd.next()
            break
        if tok[0] in ("ROOT", "JOINT"):
            rd.next()
            if tok[0] == "ROOT" and names:
                raise ParseError("multiple ROOT nodes", rd.line_no)
            idx = len(names)
            names.append("_".join(tok[1:]) or f"joint{idx}")
            parents.append(stack[-1] if stack else -1)
            if rd.next() != "{":
                raise ParseError("expected '{'", rd.line_no)
            stack.append(idx)
            off = rd.next().split()
            if off[0] != "OFFSET" or len(off) != 4:
                raise ParseError("expected OFFSET with 3 values", rd.line_no)
            offsets.append(np.array([float(v) for v in off[1:]]))
            ch = rd.next().split()
            if ch[0] != "CHANNELS":
                raise ParseError("expected CHANNELS", rd.line_no)
            count = int(ch[1])
            if len(ch) != 2 + count:
                raise ParseError("channel count mismatch", rd.line_no)
            channels.append(ch[2:])
        elif tok[0] == "End":
            rd.next()
            if rd.next() != "{":
                raise ParseError("expected '{' after End Site", rd.line_no)
            rd.next()  # OFFSET of the end site, ignored
            if rd.next() != "}":
                raise ParseError("expected '}' closing End Site", rd.line_no)
        elif tok[0] == "}":
            rd.next()
            if not stack:
                raise ParseError("unbalanced '}'", rd.line_no)
            stack.pop()
        else:
            raise ParseError(f"unexpected token {tok[0]!r}", rd.line_no)

    if stack:
        raise ParseError("unclosed joint block", rd.line_no)
    if not names:
        raise ParseError("no joints declared", rd.line_no)

    frames_line = rd.next().split()
    if frames_line[0] != "Frames:":
        raise ParseError("expected 'Frames:'", rd.line_no)
    frame_count = int(frames_line[1])
    ft_line = rd.next().split()
    if ft_line[0] != "Frame" or ft_line[1] != "Time:":
        raise ParseError("expected 'Frame Time:'", rd.line_no)
    frame_time = float(ft_line[2])
    if frame_time <= 0:
        raise ParseError("frame time must be positive", rd.line_no)
    # snap rates written with limited decimals (0.016667 -> 60 Hz exactly)
    rate = 1.0 / frame_time
    if abs(rate - round(rate)) < 0.005 * rate:
        rate = float(round(rate))

    # per-joint rotation orders
    orders = []
    for ch in channels:
        order = "".join(_ORDER_MAP[c] for c in ch if c in _ORDER_MAP)
        if order and sorted(order) != ["X", "Y", "Z"]:
            raise ParseError(f"unsupported rotation order {order!r}")
        orders.append(order)

    values = np.zeros((frame_count, sum(len(c) for c in channels)))
    for f in range(frame_count):
        row = rd.next().split()
        if len(row) != values.shape[1]:
            raise ParseError(
                f"frame {f}: expected {values.shape[1]} values, got {len(row)}", rd.line_no
            )
        values[f] = [float(v) for v in row]

    scale = 1.0
    bone_lengths = [np.linalg.norm(o) for o in offsets[1:] if np.linalg.norm(o) > 0]
    if bone_lengths and np.median(bone_lengths) > 10.0:
        scale = 0.01
        warnings.warn("BVH offsets look like centimeters; scaling to meters")
    offsets = [o * scale for o in offsets]

    J = len(names)
    local_rot = np.tile(quat.IDENTITY, (frame_count, J, 1))
    local_pos = np.zeros((frame_count, J, 3))
    col = 0
    for j, ch in enumerate(channels):
        eulers = np.zeros((frame_count, 3))
        axis_seen = 0
        for c_i, cname in enumerate(ch):
            column = values[:, col + c_i]
            if cname.endswith("position"):
                local_pos[:, j, "XYZ".index(cname[0])] = column * scale
            elif cname in _ORDER_MAP:
                eulers[:, axis_seen] = column
                axis_seen += 1
            else:
                raise ParseError(f"unknown channel {cname!r}")
        if orders[j]:
            local_rot[:, j] = _quat_from_euler(orders[j], eulers)
        col += len(ch)

    parents_arr = np.array(parents)
    world_rot = np.empty_like(local_rot)
    for j in range(J):
        if parents_arr[j] < 0:
            world_rot[:, j] = local_rot[:, j]
        else:
            world_rot[:, j] = quat.multiply(world_rot[:, parents_arr[j]], local_rot[:, j])
    root_pos = offsets[0] + local_pos[:, 0]

    joints = [Joint(names[0], None, offsets[0] * 0.0)] + [
        Joint(names[j], int(parents_arr[j]), offsets[j]) for j in range(1, J)
    ]
    skel = Skeleton(joints, _assign_limb_groups(names, parents_arr), _default_end_effectors(names))
    clip = clip_from_world(skel, world_rot, root_pos, rate)
    if resample and abs(clip.frame_rate - TARGET_RATE) > 1e-6:
        clip = resample_clip(clip, TARGET_RATE)
    return clip


def load_bvh(path: str | Path, resample: bool = True) -> MotionClip:
    clip = parse_bvh(Path(path).read_text(), resample=resample)
    clip.name = Path(path).stem
    return clip


def write_bvh(clip: MotionClip) -> str:
    """Serialize with ZYX Euler channels, 6 decimal places, space separators."""
    sk = clip.skeleton
    J = sk.joint_count
    children: list[list[int]] = [[] for _ in range(J)]
    for j in range(1, J):
        children[sk.parents[j]].append(j)

    lines: list[str] = ["HIERARCHY"]

    def fmt(v: float) -> str:
        return f"{v:.6f}"

    def emit(j: int, depth: int, kind: str):
        pad = "\t" * depth
        lines.append(f"{pad}{kind} {sk.joints[j].name}")
        lines.append(pad + "{")
        off = sk.offsets[j]
        lines.append(f"{pad}\tOFFSET {fmt(off[0])} {fmt(off[1])} {fmt(off[2])}")
        if kind == "ROOT":
            lines.append(
                f"{pad}\tCHANNELS 6 Xposition Yposition Zposition "
                "Zrotation Yrotation Xrotation"
            )
        else:
            lines.append(f"{pad}\tCHANNELS 3 Zrotation Yrotation Xrotation")
        if children[j]:
            for c in children[j]:
                emit(c, depth + 1, "JOINT")
        else:
            lines.append(f"{pad}\tEnd Site")
            lines.append(pad + "\t{")
            lines.append(f"{pad}\t\tOFFSET 0.000000 0.000000 0.000000")
            lines.append(pad + "\t}")
        lines.append(pad + "}")

    emit(0, 0, "ROOT")
    lines.append("MOTION")
    lines.append(f"Frames: {clip.frame_count}")
    lines.append(f"Frame Time: {1.0 / clip.frame_rate:.6f}")

    world_rot, root_pos = clip_to_world(clip)
    local = np.empty_like(world_rot)
    local[:, 0] = world_rot[:, 0]
    for j in range(1, J):
        local[:, j] = quat.multiply(
            quat.conjugate(world_rot[:, sk.parents[j]]), world_rot[:, j]
        )
    eulers = _euler_from_quat(quat.normalize(local), "ZYX")

    for f in range(clip.frame_count):
        row = [fmt(v) for v in root_pos[f]]
        for j in range(J):
            row.extend(fmt(v) for v in eulers[f, j])
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def save_bvh(clip: MotionClip, path: str | Path) -> None:
    Path(path).write_text(write_bvh(clip))
