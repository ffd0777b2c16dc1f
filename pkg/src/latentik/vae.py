"""Probabilistic pose autoencoder building the structured latent space.

The encoder consumes dual-quaternion frames (J x 8) and emits the mean and
log-variance of a diagonal Gaussian over the latent space; the decoder maps a
latent vector back to a pose vector with unit quaternions enforced by the
differentiable normalize primitive. Training combines four losses: plain pose
reconstruction, forward-kinematics reconstruction, KL to the standard normal,
and a continuity term that makes the next frame reachable in one latent
gradient step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import diffgeom, quat
from .autodiff import AdamW, Parameter, Tensor, backward
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import DatasetStats, PoseDataset, batched_dual_quaternions
from .errors import CheckpointError, DimensionError, DomainError, InvalidLatentError
from .nn import Linear
from .skeleton import Pose, Skeleton, fk_batch

LATENT_DIM = 24

LIMB_LAYOUT: dict[str, tuple[int, int]] = {
    "root": (0, 4),
    "spine_head": (4, 8),
    "left_arm": (8, 12),
    "right_arm": (12, 16),
    "left_leg": (16, 20),
    "right_leg": (20, 24),
}


@dataclass
class LatentVector:
    values: np.ndarray
    limb_layout: dict[str, tuple[int, int]] = field(default_factory=lambda: dict(LIMB_LAYOUT))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def limb(self, name: str) -> np.ndarray:
        a, b = self.limb_layout[name]
        return self.values[a:b]


@dataclass
class VaeLossWeights:
    reconstruction: float = 1.0
    fk: float = 100.0
    kld: float = 0.001
    continuity: float = 1.0

    def to_dict(self) -> dict:
        return {
            "reconstruction": self.reconstruction,
            "fk": self.fk,
            "kld": self.kld,
            "continuity": self.continuity,
        }


class PoseEncoder:
    """flatten(J x 8) -> 256 -> ELU -> 128 -> ELU -> two linear heads of L.

    Heads start at zero so an untrained encoder reports mu=0, sigma=1.
    """

    def __init__(self, joint_count: int, latent_dim: int, rng: np.random.Generator):
        self.joint_count = joint_count
        self.latent_dim = latent_dim
        self.l1 = Linear(joint_count * 8, 256, rng)
        self.l2 = Linear(256, 128, rng)
        self.mu_head = Linear(128, latent_dim, rng, zero_init=True)
        self.logvar_head = Linear(128, latent_dim, rng, zero_init=True)

    def __call__(self, dq: Tensor) -> tuple[Tensor, Tensor]:
        if dq.shape[-1] != self.joint_count * 8:
            raise DimensionError(
                f"encoder expects {self.joint_count * 8} inputs, got {dq.shape[-1]}"
            )
        h = ad.elu(self.l2(ad.elu(self.l1(dq))))
        return self.mu_head(h), self.logvar_head(h)

    def parameters(self) -> dict[str, Parameter]:
        out = {}
        for name, layer in (
            ("l1", self.l1), ("l2", self.l2), ("mu", self.mu_head), ("logvar", self.logvar_head),
        ):
            for pname, p in layer.parameters().items():
                out[f"enc.{name}.{pname}"] = p
        return out


class PoseDecoder:
    """L -> 128 -> ELU -> 256 -> ELU -> J*4+3 with per-quaternion normalization."""

    def __init__(self, joint_count: int, latent_dim: int, rng: np.random.Generator):
        self.joint_count = joint_count
        self.latent_dim = latent_dim
        self.l1 = Linear(latent_dim, 128, rng)
        self.l2 = Linear(128, 256, rng)
        self.out = Linear(256, joint_count * 4 + 3, rng)

    def __call__(self, z: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (pose vector [B, J*4+3], unit quats [B, J, 4], displacement [B, 3])."""
        raw = self.out(ad.elu(self.l2(ad.elu(self.l1(z)))))
        quats, disp, vector = diffgeom.split_pose_vector(raw, self.joint_count)
        return vector, quats, disp

    def parameters(self) -> dict[str, Parameter]:
        out = {}
        for name, layer in (("l1", self.l1), ("l2", self.l2), ("out", self.out)):
            for pname, p in layer.parameters().items():
                out[f"dec.{name}.{pname}"] = p
        return out


def sample_latent(mu: Tensor, sigma: Tensor, noise: np.ndarray) -> Tensor:
    """Reparameterized draw z = mu + sigma * noise (differentiable in mu, sigma)."""
    return ad.add(mu, ad.mul(sigma, ad.constant(noise)))


def loss_q(x: Tensor | np.ndarray, xhat: Tensor) -> Tensor:
    """Plain MSE over the pose vector."""
    x = x if isinstance(x, Tensor) else ad.constant(x)
    return ad.mse(x, xhat)


def align_pose_target(x: np.ndarray, pred: np.ndarray, joint_count: int) -> np.ndarray:
    """Flip each target quaternion block onto the prediction's hemisphere.

    w>=0 canonicalization alone is unstable near w=0: targets flip sign
    discontinuously while the decoder is continuous, which injects |2q|^2
    artifacts into every pose MSE. Aligning the (constant) target to the
    prediction's sign removes the double-cover artifact without changing the
    represented rotations.
    """
    out = np.array(x, copy=True)
    q = out[..., : joint_count * 4].reshape(*out.shape[:-1], joint_count, 4)
    p = pred[..., : joint_count * 4].reshape(*pred.shape[:-1], joint_count, 4)
    dots = np.sum(q * p, axis=-1, keepdims=True)
    q *= np.where(dots < 0, -1.0, 1.0)
    return out


def loss_fk(
    fk_target: np.ndarray, quats: Tensor, sk: Skeleton, disp: Tensor | None = None
) -> Tensor:
    """MSE between joint positions of the decoded pose and precomputed targets.

    Positions live in the history-independent frame: root increment applied,
    frame origin at the previous root. When ``disp`` is given the root
    displacement shifts every joint, so the displacement components receive
    the same strong supervision as the rotations.
    """
    positions = diffgeom.fk_positions(quats, sk)
    if disp is not None:
        b, j = positions.shape[0], positions.shape[1]
        positions = ad.add(positions, ad.tile(ad.reshape(disp, (b, 1, 3)), j, 1))
    return ad.mse(ad.constant(fk_target), positions)


def loss_kld(mu: np.ndarray, sigma: np.ndarray) -> float:
    """Closed-form KL(N(mu, sigma^2) || N(0, 1)) summed over dimensions."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise DomainError("sigma must be strictly positive")
    return float(0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - np.log(sigma * sigma)))


def loss_kld_graph(mu: Tensor, logvar: Tensor) -> Tensor:
    """Batch-mean KL using the log-variance parameterization."""
    per_dim = ad.sub(ad.add(ad.square(mu), ad.exp(logvar)),
                     ad.add(ad.constant(np.ones(logvar.shape)), logvar))
    return ad.scale(ad.mean(ad.sum_(per_dim, axis=1)), 0.5)


def loss_continuity(
    z: Tensor, xhat: Tensor, x_next: np.ndarray, decode_fn,
    inner_grad: np.ndarray | None = None,
) -> Tensor:
    """One-step reachability: follow the latent gradient of MSE(xhat, x_next),
    decode, and compare against the next frame. The inner gradient is a
    constant for the outer graph (first order only); pass ``inner_grad`` to
    pin it, e.g. when checking outer gradients against finite differences.
    """
    if inner_grad is None:
        # the gradient step is per pose: for batched input, scaling the batch-mean
        # MSE by the row count makes each row's gradient its own per-sample step
        rows = xhat.shape[0] if xhat.ndim > 1 else 1
        inner = ad.scale(ad.mse(xhat, ad.constant(x_next)), rows)
        g = backward(inner, stop=(z,)).get(z)
        if g is None:
            g = np.zeros(z.shape)
    else:
        g = inner_grad
    z_next = ad.sub(z, ad.constant(g))
    decoded = decode_fn(z_next)
    vector = decoded[0] if isinstance(decoded, tuple) else decoded
    return ad.mse(ad.constant(x_next), vector)


@dataclass
class EpochLog:
    epoch: int
    reconstruction: float
    fk: float
    kld: float
    continuity: float
    total: float
    seconds: float

    def as_dict(self) -> dict:
        return self.__dict__.copy()


class PoseVae:
    """Trained (or fresh) encoder/decoder pair bound to a skeleton."""

    def __init__(
        self,
        skeleton: Skeleton,
        latent_dim: int = LATENT_DIM,
        seed: int = 0,
        weights: VaeLossWeights | None = None,
        frame_rate: float = 60.0,
    ):
        rng = np.random.default_rng(seed)
        self.skeleton = skeleton
        self.latent_dim = latent_dim
        self.encoder = PoseEncoder(skeleton.joint_count, latent_dim, rng)
        self.decoder = PoseDecoder(skeleton.joint_count, latent_dim, rng)
        self.weights = weights or VaeLossWeights()
        self.frame_rate = frame_rate
        self.limb_layout = dict(LIMB_LAYOUT) if latent_dim == LATENT_DIM else {}
        self.stats: DatasetStats | None = None

    def parameters(self) -> dict[str, Parameter]:
        return {**self.encoder.parameters(), **self.decoder.parameters()}

    def freeze(self) -> "PoseVae":
        for p in self.parameters().values():
            p.freeze()
        return self

    # --- inference -----------------------------------------------------

    def encode(self, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
        """Pose -> (mu, sigma), both [L]."""
        dq = batched_dual_quaternions(
            pose.joint_rotations[None], pose.root_displacement[None], self.skeleton
        ).reshape(1, -1)
        mu, logvar = self.encoder(ad.constant(dq))
        return mu.data[0].copy(), np.exp(0.5 * logvar.data[0])

    def encode_mean(self, pose: Pose) -> np.ndarray:
        return self.encode(pose)[0]

    def encode_mean_batch(self, quats: np.ndarray, disps: np.ndarray) -> np.ndarray:
        dq = batched_dual_quaternions(quats, disps, self.skeleton)
        mu, _ = self.encoder(ad.constant(dq.reshape(dq.shape[0], -1)))
        return mu.data.copy()

    def decode(self, z: np.ndarray) -> Pose:
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.shape[0] != self.latent_dim:
            raise InvalidLatentError(f"latent length {z.shape[0]} != {self.latent_dim}")
        if not np.all(np.isfinite(z)):
            raise InvalidLatentError("latent vector contains non-finite values")
        vector, _, _ = self.decoder(ad.constant(z[None]))
        return Pose.from_vector(vector.data[0], self.skeleton.joint_count).canonical()

    def decode_batch(self, zs: np.ndarray) -> np.ndarray:
        vector, _, _ = self.decoder(ad.constant(zs))
        return vector.data.copy()

    # --- persistence ----------------------------------------------------

    def save(self, path, extra_metadata: dict | None = None) -> None:
        meta = {
            "kind": "pose_vae",
            "joint_count": self.skeleton.joint_count,
            "latent_dim": self.latent_dim,
            "limb_layout": {k: list(v) for k, v in self.limb_layout.items()},
            "skeleton": self.skeleton.to_dict(),
            "skeleton_hash": self.skeleton.content_hash(),
            "loss_weights": self.weights.to_dict(),
            "frame_rate": self.frame_rate,
            "stats": self.stats.to_dict() if self.stats else None,
        }
        if extra_metadata:
            meta.update(extra_metadata)
        save_checkpoint(path, {k: p.data for k, p in self.parameters().items()}, meta)

    @classmethod
    def load(cls, path) -> "PoseVae":
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "pose_vae":
            raise CheckpointError(f"{path} is not a pose VAE checkpoint")
        skel = Skeleton.from_dict(meta["skeleton"])
        model = cls(
            skel,
            latent_dim=int(meta["latent_dim"]),
            weights=VaeLossWeights(**meta["loss_weights"]),
            frame_rate=float(meta["frame_rate"]),
        )
        model.limb_layout = {k: tuple(v) for k, v in meta["limb_layout"].items()}
        if meta.get("stats"):
            model.stats = DatasetStats.from_dict(meta["stats"])
        params = model.parameters()
        if set(params) != set(tensors):
            raise CheckpointError(f"parameter names in {path} do not match the architecture")
        for name, p in params.items():
            if p.data.shape != tensors[name].shape:
                raise CheckpointError(f"tensor {name} has shape {tensors[name].shape}")
            p.data = tensors[name]
        return model

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.parameters()):
            h.update(name.encode())
            h.update(self.parameters()[name].data.tobytes())
        return h.hexdigest()[:16]


def train_vae(
    dataset: PoseDataset,
    weights: VaeLossWeights | None = None,
    epochs: int = 50,
    batch_size: int = 64,
    lr: float = 1e-4,
    seed: int = 0,
    latent_dim: int = LATENT_DIM,
    log_cb=None,
) -> tuple[PoseVae, list[EpochLog]]:
    """Train on consecutive-frame pairs; returns the model plus per-epoch losses."""
    dataset.require_pairs()
    weights = weights or VaeLossWeights()
    model = PoseVae(
        dataset.skeleton, latent_dim=latent_dim, seed=seed,
        weights=weights, frame_rate=dataset.frame_rate,
    )
    params = model.parameters()
    opt = AdamW(params.values(), lr=lr)
    rng = np.random.default_rng(seed)
    sk = dataset.skeleton
    pairs = dataset.pair_indices
    log: list[EpochLog] = []

    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = rng.permutation(pairs)
        sums = np.zeros(4)
        batches = 0
        for start in range(0, order.size, batch_size):
            idx = order[start : start + batch_size]
            nxt = dataset.next_index[idx]
            x = dataset.vectors[idx]
            x_next = dataset.vectors[nxt]
            dq = dataset.dq[idx]
            fk_target = dataset.fk[idx]

            mu, logvar = model.encoder(ad.constant(dq))
            sigma = ad.exp(ad.scale(logvar, 0.5))
            eps = rng.standard_normal(mu.shape)
            z = sample_latent(mu, sigma, eps)
            xhat, quats, disp = model.decoder(z)

            j = sk.joint_count
            l_q = loss_q(align_pose_target(x, xhat.data, j), xhat)
            l_fk = loss_fk(fk_target, quats, sk, disp)
            l_kld = loss_kld_graph(mu, logvar)
            l_c = loss_continuity(z, xhat, align_pose_target(x_next, xhat.data, j),
                                  model.decoder)
            total = ad.add(
                ad.add(ad.scale(l_q, weights.reconstruction), ad.scale(l_fk, weights.fk)),
                ad.add(ad.scale(l_kld, weights.kld), ad.scale(l_c, weights.continuity)),
            )
            opt.step(backward(total))
            sums += [l_q.item(), l_fk.item(), l_kld.item(), l_c.item()]
            batches += 1
        means = sums / max(batches, 1)
        entry = EpochLog(
            epoch, *map(float, means),
            float(np.dot(means, [weights.reconstruction, weights.fk, weights.kld,
                                 weights.continuity])),
            time.perf_counter() - t0,
        )
        log.append(entry)
        if log_cb:
            log_cb(entry)

    standardize_latent_space(model, dataset)
    model.stats = compute_dataset_stats(model, dataset)
    return model, log


def standardize_latent_space(model: PoseVae, dataset: PoseDataset) -> tuple[np.ndarray, np.ndarray]:
    """Fold the aggregate-posterior mean and scale into the model weights.

    The affine map z' = S(z - c), with c the training-set posterior mean and
    S the inverse aggregate standard deviation sqrt(Var(mu) + E[sigma^2]), is
    an exact reparameterization: compensating the decoder input layer leaves
    every reconstruction bit-identical. Afterwards the aggregate posterior has
    zero mean and unit variance per dimension, which is where the prior, the
    latent optimizer and random sampling expect the mass to be, and it evens
    out gradient scales across latent dimensions.
    """
    mu, logvar = model.encoder(ad.constant(dataset.dq))
    c = mu.data.mean(axis=0)
    agg_var = mu.data.var(axis=0) + np.exp(logvar.data).mean(axis=0)
    s = 1.0 / np.sqrt(np.maximum(agg_var, 1e-12))

    enc_mu = model.encoder.mu_head
    enc_mu.w.data = enc_mu.w.data * s
    enc_mu.b.data = (enc_mu.b.data - c) * s
    model.encoder.logvar_head.b.data = model.encoder.logvar_head.b.data + 2.0 * np.log(s)
    l1 = model.decoder.l1
    l1.b.data = l1.b.data + c @ l1.w.data
    l1.w.data = l1.w.data / s[:, None]
    return c, s


def compute_dataset_stats(model: PoseVae, dataset: PoseDataset) -> DatasetStats:
    mu, _ = model.encoder(ad.constant(dataset.dq))
    bbox_min, bbox_max = dataset.pose_bbox()
    std = mu.data.std(axis=0)
    return DatasetStats(
        latent_mean=mu.data.mean(axis=0),
        latent_std=np.maximum(std, 1e-6),
        bbox_min=bbox_min,
        bbox_max=bbox_max,
        clip_count=len(dataset.clips),
    )


def reconstruction_position_error(model: PoseVae, dataset: PoseDataset) -> float:
    """Mean FK positional error (meters) of mean-latent reconstructions."""
    zs = model.encode_mean_batch(
        dataset.vectors[:, : dataset.skeleton.joint_count * 4].reshape(
            dataset.frame_count, dataset.skeleton.joint_count, 4
        ),
        dataset.vectors[:, dataset.skeleton.joint_count * 4 :],
    )
    decoded = model.decode_batch(zs)
    j = dataset.skeleton.joint_count
    quats = quat.normalize(decoded[:, : j * 4].reshape(-1, j, 4))
    fk = fk_batch(quats, dataset.skeleton) + decoded[:, None, j * 4 :]
    return float(np.linalg.norm(fk - dataset.fk, axis=-1).mean())
