"""Quaternion and dual-quaternion algebra.

Quaternions are numpy arrays in [w, x, y, z] order. Every function accepts
stacked arrays with the quaternion on the last axis and broadcasts over the
leading axes, so the same code serves single poses and whole clips.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

NORM_EPS = 1e-12


def multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b (applies b first when rotating vectors)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def norm(q: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(q, dtype=float), axis=-1)


def normalize(q: np.ndarray) -> np.ndarray:
    """Scale to unit norm. Raises DegenerateInputError below ``NORM_EPS``."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < NORM_EPS):
        raise DegenerateInputError("cannot normalize near-zero quaternion")
    return q / n


def rotate_vector(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate 3-vector(s) v by unit quaternion(s) q."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def canonical_sign(q: np.ndarray) -> np.ndarray:
    """Resolve the double cover: w >= 0, ties broken by the first nonzero component."""
    q = np.asarray(q, dtype=float)
    flat = q.reshape(-1, 4)
    first = np.argmax(flat != 0.0, axis=1)
    lead = flat[np.arange(flat.shape[0]), first]
    sign = np.where(lead < 0.0, -1.0, 1.0)
    return (flat * sign[:, None]).reshape(q.shape)


def to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) to 3x3 rotation matrix(es)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def from_matrix(m: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix to unit quaternion (Shepperd's method), w >= 0."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        out = np.empty(m.shape[:-2] + (4,))
        for idx in np.ndindex(m.shape[:-2]):
            out[idx] = from_matrix(m[idx])
        return out
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return canonical_sign(normalize(q))


def from_axis_angle(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < NORM_EPS:
        raise DegenerateInputError("axis must be nonzero")
    half = 0.5 * angle_rad
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def rotation_angle_deg(r0: np.ndarray, r1: np.ndarray) -> np.ndarray:
    """Angle in degrees of the relative rotation between two unit quaternions.

    Equals the angle of the matrix R0 @ R1.T, i.e. arccos((trace - 1) / 2),
    computed here through the quaternion product for numerical robustness.
    Result is in [0, 180], invariant to the sign of either input, and exactly
    zero when the operands match up to sign.
    """
    r0 = np.asarray(r0, dtype=float)
    r1 = np.asarray(r1, dtype=float)
    d = multiply(r0, conjugate(r1))
    ang = 2.0 * np.arctan2(np.linalg.norm(d[..., 1:], axis=-1), np.abs(d[..., 0]))
    same = np.all(r0 == r1, axis=-1) | np.all(r0 == -r1, axis=-1)
    return np.degrees(np.where(same, 0.0, ang))


def slerp(q0: np.ndarray, q1: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation between two unit quaternions, shortest path."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    dot = min(dot, 1.0)
    theta = np.arccos(dot)
    if theta < 1e-8:
        return normalize((1.0 - t) * q0 + t * q1)
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) * q0 + np.sin(t * theta) * q1) / s


class DualQuaternion:
    """Rigid transform as real (rotation) + dual (translation) quaternion pair.

    Built as real = r, dual = 0.5 * (0, t) * r for rotation r and translation
    t, which keeps <real, dual> = 0.
    """

    __slots__ = ("real", "dual")

    def __init__(self, real: np.ndarray, dual: np.ndarray):
        self.real = np.asarray(real, dtype=float)
        self.dual = np.asarray(dual, dtype=float)

    @classmethod
    def from_rotation_translation(cls, rotation: np.ndarray, translation) -> "DualQuaternion":
        rotation = normalize(rotation)
        t = np.asarray(translation, dtype=float)
        t_quat = np.concatenate([[0.0], t])
        return cls(rotation, 0.5 * multiply(t_quat, rotation))

    def translation(self) -> np.ndarray:
        return multiply(2.0 * self.dual, conjugate(self.real))[1:]

    def normalized(self) -> "DualQuaternion":
        n = np.linalg.norm(self.real)
        if n < NORM_EPS:
            raise DegenerateInputError("cannot normalize degenerate dual quaternion")
        real = self.real / n
        dual = self.dual / n
        dual = dual - real * float(np.dot(real, dual))
        return DualQuaternion(real, dual)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.real, self.dual])

    def __repr__(self) -> str:  # pragma: no cover
        return f"DualQuaternion(real={self.real}, dual={self.dual})"
