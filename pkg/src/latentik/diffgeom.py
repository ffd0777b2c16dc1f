"""Differentiable kinematics assembled from autodiff primitives.

Everything here operates on batched tensors ([B, ...]) so one graph covers a
whole training batch; the pose optimizer uses the same code with B = 1.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import quat
from .autodiff import Tensor
from .skeleton import RootState, Skeleton


def split_pose_vector(x: Tensor, joint_count: int) -> tuple[Tensor, Tensor, Tensor]:
    """Raw pose vector [B, J*4+3] -> (unit quats [B,J,4], disp [B,3], clean vector).

    Quaternions are normalized with the differentiable primitive, and the
    returned vector has those normalized blocks substituted back in.
    """
    b = x.shape[0]
    raw_q = ad.reshape(ad.getitem(x, (slice(None), slice(0, joint_count * 4))), (b, joint_count, 4))
    quats = ad.vec_normalize(raw_q)
    disp = ad.getitem(x, (slice(None), slice(joint_count * 4, None)))
    vector = ad.concat([ad.reshape(quats, (b, joint_count * 4)), disp], axis=1)
    return quats, disp, vector


def rotate_vectors(q: Tensor, v: Tensor | np.ndarray) -> Tensor:
    """Rotate 3-vectors by unit quaternions: v + 2w(u x v) + 2u x (u x v)."""
    if not isinstance(v, Tensor):
        v = ad.constant(v)
    ndim = q.ndim
    w = ad.getitem(q, (Ellipsis, slice(0, 1)))
    u = ad.getitem(q, (Ellipsis, slice(1, 4)))
    t = ad.scale(ad.cross(u, v), 2.0)
    wt = ad.mul(ad.tile(w, 3, ndim - 1), t)
    return ad.add(ad.add(v, wt), ad.cross(u, t))


def fk_positions(quats: Tensor, sk: Skeleton) -> Tensor:
    """Differentiable forward kinematics: [B, J, 4] unit quats -> [B, J, 3]."""
    parent_q = ad.index_select(quats, 1, sk.parents[1:])
    edges = rotate_vectors(parent_q, sk.offsets[1:])
    return ad.matmul(ad.constant(sk.ancestry), edges)


def world_positions(fk: Tensor, disp: Tensor, root: RootState) -> Tensor:
    """Place root-space positions in the world under the previous root state."""
    b, j = fk.shape[0], fk.shape[1]
    shifted = ad.add(fk, ad.tile(ad.reshape(disp, (b, 1, 3)), j, 1))
    rot = quat.to_matrix(root.world_rotation)
    return ad.add(ad.matmul(shifted, ad.constant(rot.T)), ad.constant(root.world_position))


def _left_mul_matrix(a: np.ndarray) -> np.ndarray:
    w, x, y, z = a
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    )


def world_rotations(quats: Tensor, root: RootState) -> Tensor:
    """Compose the root world rotation onto root-space quats: [B, J, 4]."""
    lmat = _left_mul_matrix(root.world_rotation)
    return ad.matmul(quats, ad.constant(lmat.T))


def rotation_alignment(q: Tensor, target: np.ndarray) -> Tensor:
    """Smooth squared-geodesic surrogate between quats [..., 4] and targets.

    4 * (1 - <q, t>^2) equals the squared rotation angle to second order and
    is invariant to the sign of either quaternion.
    """
    dot = ad.sum_(ad.mul(q, ad.constant(target)), axis=-1)
    return ad.scale(ad.sub(ad.constant(np.ones(dot.shape)), ad.square(dot)), 4.0)
