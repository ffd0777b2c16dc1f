"""Training-ready views over motion clips: flat frame arrays, consecutive-frame
pairs that never cross clip boundaries, and dataset statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat
from .errors import DimensionError, InsufficientDataError
from .motion import MotionClip
from .skeleton import Skeleton, fk_batch


@dataclass
class DatasetStats:
    """Latent statistics (filled after encoding) plus pose-space extents."""

    latent_mean: np.ndarray
    latent_std: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    clip_count: int

    def to_dict(self) -> dict:
        return {
            "latent_mean": list(map(float, self.latent_mean)),
            "latent_std": list(map(float, self.latent_std)),
            "bbox_min": list(map(float, self.bbox_min)),
            "bbox_max": list(map(float, self.bbox_max)),
            "clip_count": self.clip_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetStats":
        return cls(
            np.array(d["latent_mean"]),
            np.array(d["latent_std"]),
            np.array(d["bbox_min"]),
            np.array(d["bbox_max"]),
            int(d["clip_count"]),
        )


def batched_dual_quaternions(quats: np.ndarray, disps: np.ndarray, sk: Skeleton) -> np.ndarray:
    """Dual-quaternion frames [T, J, 8] for stacked poses."""
    q = quat.normalize(quats)
    positions = fk_batch(q, sk)
    t = positions.copy()
    t[:, 0] = disps
    tq = np.concatenate([np.zeros(t.shape[:2] + (1,)), t], axis=-1)
    dual = 0.5 * quat.multiply(tq, q)
    return np.concatenate([q, dual], axis=-1)


class PoseDataset:
    """Frames from one or more clips sharing a skeleton.

    Exposes pose vectors, dual-quaternion encoder inputs, root-space FK
    positions and the next-frame index map used by the continuity loss.
    """

    def __init__(self, clips: list[MotionClip]):
        if not clips:
            raise InsufficientDataError("no clips given")
        sk = clips[0].skeleton
        h = sk.content_hash()
        for c in clips:
            if c.skeleton.content_hash() != h:
                raise DimensionError("all clips must share one skeleton")
        self.skeleton = sk
        self.clips = clips
        self.frame_rate = clips[0].frame_rate

        vectors, dqs, fks, next_index = [], [], [], []
        offset = 0
        for c in clips:
            t = c.frame_count
            vectors.append(c.pose_vectors())
            dqs.append(batched_dual_quaternions(c.quats, c.displacements, sk).reshape(t, -1))
            # displacement shifts every joint: positions in the previous-root frame
            fks.append(fk_batch(quat.normalize(c.quats), sk) + c.displacements[:, None, :])
            nxt = np.arange(offset + 1, offset + t + 1)
            nxt[-1] = -1  # no pair across the clip boundary
            next_index.append(nxt)
            offset += t
        self.vectors = np.concatenate(vectors)
        self.dq = np.concatenate(dqs)
        self.fk = np.concatenate(fks)
        self.next_index = np.concatenate(next_index)

    @property
    def frame_count(self) -> int:
        return self.vectors.shape[0]

    @property
    def pair_indices(self) -> np.ndarray:
        """Indices i with a same-clip successor (usable for the continuity loss)."""
        return np.flatnonzero(self.next_index >= 0)

    def require_pairs(self) -> None:
        if self.pair_indices.size == 0:
            raise InsufficientDataError(
                "dataset has no consecutive-frame pairs (clips shorter than 2 frames)"
            )

    def pose_bbox(self) -> tuple[np.ndarray, np.ndarray]:
        pts = self.fk.reshape(-1, 3)
        return pts.min(axis=0), pts.max(axis=0)
