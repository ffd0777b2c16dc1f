"""Transformer temporal predictor: forecasts upcoming latent vectors at a
reduced rate to keep the pose optimizer on the manifold of valid, temporally
coherent poses.

Scheduling follows two counters derived from the frame index i: the predictor
step j = ceil(i / n) and the chunk anchor p = W_f * floor(j / W_f). The
encoder refreshes its memory from past committed latents once per chunk; the
decoder then autoregresses up to W_f predictions from the anchor latent.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamW, Parameter, Tensor, backward
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    CheckpointError,
    ColdStartError,
    DimensionError,
    InsufficientDataError,
    RefreshRequiredError,
)
from .nn import FeedForward, LayerNorm, Linear, MultiHeadAttention, causal_mask, sinusoidal_encoding

NOISED_LIMBS = ("left_arm", "right_arm", "left_leg", "right_leg")

CONTEXT_HEIGHT_ROLES = ("hip", "head", "left_hand", "right_hand", "left_foot", "right_foot")


@dataclass
class TemporalConfig:
    step: int = 4  # frames per predictor step (n)
    past_window: int = 16  # W_p
    future_window: int = 16  # W_f
    heads: int = 4
    encoder_layers: int = 3
    decoder_layers: int = 3
    feature_dim: int = 48
    feedforward_dim: int = 2048
    latent_dim: int = 24

    def __post_init__(self):
        if self.step < 1 or self.past_window < 1 or self.future_window < 1:
            raise DimensionError("step, past_window and future_window must be >= 1")

    @property
    def context_dim(self) -> int:
        # latent + root displacement + heights of root/head/hands/feet
        return self.latent_dim + 3 + 6

    def to_dict(self) -> dict:
        return asdict(self)


def indices(i: int, cfg: TemporalConfig) -> tuple[int, int]:
    """Frame index -> (predictor step j, chunk anchor p)."""
    if i < 0:
        raise DimensionError("frame index must be nonnegative")
    j = -(-i // cfg.step)
    p = cfg.future_window * (j // cfg.future_window)
    return j, p


def limb_noise(
    z: np.ndarray,
    stats_mean: np.ndarray,
    stats_std: np.ndarray,
    limb_layout: dict[str, tuple[int, int]],
    prob: float = 0.1,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Perturb each of the four limb latent ranges independently with
    probability ``prob`` using per-dimension Gaussian statistics."""
    rng = rng or np.random.default_rng()
    out = np.array(z, dtype=float, copy=True)
    for limb in NOISED_LIMBS:
        if rng.random() < prob:
            a, b = limb_layout[limb]
            out[..., a:b] += rng.normal(stats_mean[a:b], stats_std[a:b])
    return out


class _EncoderLayer:
    def __init__(self, cfg: TemporalConfig, rng):
        self.attn = MultiHeadAttention(cfg.feature_dim, cfg.heads, rng)
        self.ffn = FeedForward(cfg.feature_dim, cfg.feedforward_dim, rng)
        self.ln1 = LayerNorm(cfg.feature_dim)
        self.ln2 = LayerNorm(cfg.feature_dim)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.ln1(ad.add(x, self.attn(x, x)))
        return self.ln2(ad.add(x, self.ffn(x)))

    def parameters(self):
        out = {}
        for name, m in (("attn", self.attn), ("ffn", self.ffn), ("ln1", self.ln1), ("ln2", self.ln2)):
            for k, p in m.parameters().items():
                out[f"{name}.{k}"] = p
        return out


class _DecoderLayer:
    def __init__(self, cfg: TemporalConfig, rng):
        self.self_attn = MultiHeadAttention(cfg.feature_dim, cfg.heads, rng)
        self.cross_attn = MultiHeadAttention(cfg.feature_dim, cfg.heads, rng)
        self.ffn = FeedForward(cfg.feature_dim, cfg.feedforward_dim, rng)
        self.ln1 = LayerNorm(cfg.feature_dim)
        self.ln2 = LayerNorm(cfg.feature_dim)
        self.ln3 = LayerNorm(cfg.feature_dim)

    def __call__(self, x: Tensor, memory: Tensor, mask: np.ndarray) -> Tensor:
        x = self.ln1(ad.add(x, self.self_attn(x, x, mask)))
        x = self.ln2(ad.add(x, self.cross_attn(x, memory)))
        return self.ln3(ad.add(x, self.ffn(x)))

    def parameters(self):
        out = {}
        for name, m in (
            ("self", self.self_attn), ("cross", self.cross_attn), ("ffn", self.ffn),
            ("ln1", self.ln1), ("ln2", self.ln2), ("ln3", self.ln3),
        ):
            for k, p in m.parameters().items():
                out[f"{name}.{k}"] = p
        return out


class TemporalPredictor:
    """Encoder-decoder transformer over latent steps."""

    def __init__(self, cfg: TemporalConfig | None = None, seed: int = 0,
                 vae_hash: str = "", zero_head: bool = False):
        self.cfg = cfg or TemporalConfig()
        self.vae_hash = vae_hash
        rng = np.random.default_rng(seed)
        d = self.cfg.feature_dim
        self.enc_proj = Linear(self.cfg.context_dim, d, rng)
        self.enc_layers = [_EncoderLayer(self.cfg, rng) for _ in range(self.cfg.encoder_layers)]
        self.dec_proj = Linear(self.cfg.latent_dim, d, rng)
        self.dec_layers = [_DecoderLayer(self.cfg, rng) for _ in range(self.cfg.decoder_layers)]
        self.out = Linear(d, self.cfg.latent_dim, rng, zero_init=zero_head)
        self._pos = sinusoidal_encoding(
            max(self.cfg.past_window, self.cfg.future_window + 1) + 8, d
        )

    def parameters(self) -> dict[str, Parameter]:
        out = {}
        for k, p in self.enc_proj.parameters().items():
            out[f"tp.enc_proj.{k}"] = p
        for i, layer in enumerate(self.enc_layers):
            for k, p in layer.parameters().items():
                out[f"tp.enc{i}.{k}"] = p
        for k, p in self.dec_proj.parameters().items():
            out[f"tp.dec_proj.{k}"] = p
        for i, layer in enumerate(self.dec_layers):
            for k, p in layer.parameters().items():
                out[f"tp.dec{i}.{k}"] = p
        for k, p in self.out.parameters().items():
            out[f"tp.out.{k}"] = p
        return out

    def freeze(self) -> "TemporalPredictor":
        for p in self.parameters().values():
            p.freeze()
        return self

    # --- forward --------------------------------------------------------

    def encode_batch(self, feats: Tensor) -> Tensor:
        """[B, W_p, context_dim] -> memory [B, W_p, D]."""
        t = feats.shape[1]
        x = ad.add(self.enc_proj(feats), ad.constant(self._pos[:t]))
        for layer in self.enc_layers:
            x = layer(x)
        return x

    def decode_batch(self, latents: Tensor, memory: Tensor) -> Tensor:
        """Teacher-forced decode: [B, K, L] tokens -> [B, K, L] predictions."""
        k = latents.shape[1]
        x = ad.add(self.dec_proj(latents), ad.constant(self._pos[:k]))
        mask = causal_mask(k)
        for layer in self.dec_layers:
            x = layer(x, memory, mask)
        return self.out(x)

    def encode_context(self, features: np.ndarray) -> np.ndarray:
        """Inference-path memory from [W_p, context_dim] features."""
        features = np.asarray(features, dtype=float)
        if features.ndim != 2 or features.shape[1] != self.cfg.context_dim:
            raise DimensionError(
                f"context features must be [W_p, {self.cfg.context_dim}]"
            )
        if features.shape[0] == 0:
            raise ColdStartError("empty history; seed the session with an initial pose")
        if features.shape[0] < self.cfg.past_window:
            pad = np.repeat(features[:1], self.cfg.past_window - features.shape[0], axis=0)
            features = np.vstack([pad, features])
        features = features[-self.cfg.past_window :]
        return self.encode_batch(ad.constant(features[None])).data[0].copy()

    def decode_step(self, tokens: np.ndarray, memory: np.ndarray) -> np.ndarray:
        """Predict the next latent from [K, L] tokens (anchor + pending)."""
        out = self.decode_batch(ad.constant(tokens[None]), ad.constant(memory[None]))
        return out.data[0, -1].copy()

    # --- persistence ------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "kind": "temporal_predictor",
            "config": self.cfg.to_dict(),
            "vae_hash": self.vae_hash,
        }
        save_checkpoint(path, {k: p.data for k, p in self.parameters().items()}, meta)

    @classmethod
    def load(cls, path, expected_vae_hash: str | None = None) -> "TemporalPredictor":
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "temporal_predictor":
            raise CheckpointError(f"{path} is not a temporal predictor checkpoint")
        if expected_vae_hash is not None and meta["vae_hash"] != expected_vae_hash:
            raise CheckpointError(
                "temporal predictor was trained against a different pose VAE "
                f"({meta['vae_hash']} != {expected_vae_hash})"
            )
        model = cls(TemporalConfig(**meta["config"]), vae_hash=meta["vae_hash"])
        params = model.parameters()
        if set(params) != set(tensors):
            raise CheckpointError(f"parameter names in {path} do not match the architecture")
        for name, p in params.items():
            p.data = tensors[name]
        return model


@dataclass
class StepContext:
    """Features describing one committed predictor step."""

    latent: np.ndarray
    displacement: np.ndarray
    heights: np.ndarray

    def as_row(self) -> np.ndarray:
        return np.concatenate([self.latent, self.displacement, self.heights])


@dataclass
class PredictorState:
    """Per-session autoregression state."""

    predictor: TemporalPredictor
    history: list[StepContext] = field(default_factory=list)
    memory: np.ndarray | None = None
    anchor: np.ndarray | None = None
    pending: list[np.ndarray] = field(default_factory=list)
    last_prediction: np.ndarray | None = None

    def seed(self, ctx: StepContext) -> None:
        self.history.append(ctx)
        del self.history[: -self.predictor.cfg.past_window]

    def refresh(self) -> None:
        if not self.history:
            raise ColdStartError("cannot refresh with empty history")
        rows = np.stack([c.as_row() for c in self.history])
        self.memory = self.predictor.encode_context(rows)
        self.anchor = self.history[-1].latent.copy()
        self.pending = []

    def predict_next(self) -> np.ndarray:
        if self.memory is None or self.anchor is None:
            raise ColdStartError("refresh required before prediction")
        if len(self.pending) >= self.predictor.cfg.future_window:
            raise RefreshRequiredError(
                "pending prediction buffer is full; refresh the encoder memory"
            )
        tokens = np.vstack([self.anchor[None]] + [p[None] for p in self.pending])
        z_t = self.predictor.decode_step(tokens, self.memory)
        self.pending.append(z_t)
        self.last_prediction = z_t
        return z_t


def build_step_dataset(
    vae, clips, cfg: TemporalConfig | None = None
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Encode clips with the pose VAE and subsample predictor-rate steps.

    Returns per-clip step latents [M, L] and context rows [M, L+9] (latent,
    root displacement, heights above ground of root/head/hands/feet).
    """
    cfg = cfg or TemporalConfig()
    latents, contexts = [], []
    for clip in clips:
        z = vae.encode_mean_batch(clip.quats, clip.displacements)
        world = clip.world_positions()
        height_idx = [clip.skeleton.role_index(r) for r in CONTEXT_HEIGHT_ROLES]
        steps = np.arange(0, clip.frame_count, cfg.step)
        rows = np.concatenate(
            [z[steps], clip.displacements[steps], world[steps][:, height_idx, 1]], axis=1
        )
        latents.append(z[steps])
        contexts.append(rows)
    return latents, contexts


def build_training_windows(
    latent_steps: list[np.ndarray],
    contexts: list[np.ndarray],
    cfg: TemporalConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-clip step latents [M, L] + context rows [M, ctx] -> batched windows.

    Returns (encoder features [N, W_p, ctx], decoder inputs [N, W_f, L],
    targets [N, W_f, L]).
    """
    feats, dec_in, targets = [], [], []
    for z, c in zip(latent_steps, contexts):
        m = z.shape[0]
        need = cfg.past_window + cfg.future_window
        if m < need + 1:
            warnings.warn(
                f"sequence with {m} predictor steps is shorter than "
                f"W_p+W_f+1={need + 1}; skipped"
            )
            continue
        for s in range(cfg.past_window - 1, m - cfg.future_window - 1):
            feats.append(c[s - cfg.past_window + 1 : s + 1])
            dec_in.append(z[s : s + cfg.future_window])
            targets.append(z[s + 1 : s + cfg.future_window + 1])
    if not feats:
        raise InsufficientDataError("no training windows; clips too short")
    return np.stack(feats), np.stack(dec_in), np.stack(targets)


@dataclass
class TemporalEpochLog:
    epoch: int
    loss: float
    seconds: float


def train_temporal(
    latent_steps: list[np.ndarray],
    contexts: list[np.ndarray],
    cfg: TemporalConfig | None = None,
    stats_mean: np.ndarray | None = None,
    stats_std: np.ndarray | None = None,
    limb_layout: dict[str, tuple[int, int]] | None = None,
    epochs: int = 30,
    batch_size: int = 512,
    lr: float = 1e-3,
    seed: int = 0,
    noise_prob: float = 0.1,
    vae_hash: str = "",
    log_cb=None,
) -> tuple[TemporalPredictor, list[TemporalEpochLog]]:
    """Teacher-forced next-step training with MSE on encoder-provided latents."""
    import time

    cfg = cfg or TemporalConfig()
    feats, dec_in, targets = build_training_windows(latent_steps, contexts, cfg)
    model = TemporalPredictor(cfg, seed=seed, vae_hash=vae_hash)
    opt = AdamW(model.parameters().values(), lr=lr)
    rng = np.random.default_rng(seed)
    n = feats.shape[0]
    use_noise = stats_mean is not None and stats_std is not None and limb_layout is not None
    log: list[TemporalEpochLog] = []

    micro = 64  # keep transformer activations memory-bounded; gradients average exactly

    def add_noise(rows: np.ndarray) -> None:
        # rows [..., >=L]; per-limb Bernoulli mask over the leading axes
        flat = rows.reshape(-1, rows.shape[-1])
        for limb in NOISED_LIMBS:
            a, b = limb_layout[limb]
            mask = rng.random(flat.shape[0]) < noise_prob
            noise = rng.normal(
                stats_mean[a:b], stats_std[a:b], (flat.shape[0], b - a)
            )
            flat[mask, a:b] += noise[mask]

    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            f = feats[idx].copy()
            d = dec_in[idx].copy()
            if use_noise:
                add_noise(f[..., : cfg.latent_dim])
                add_noise(d)
            acc: dict = {}
            batch_loss = 0.0
            for ms in range(0, idx.size, micro):
                sl = slice(ms, min(ms + micro, idx.size))
                weight = (sl.stop - sl.start) / idx.size
                memory = model.encode_batch(ad.constant(f[sl]))
                preds = model.decode_batch(ad.constant(d[sl]), memory)
                loss = ad.mse(preds, ad.constant(targets[idx[sl]]))
                for p, g in backward(loss).items():
                    if isinstance(p, Parameter):
                        acc[p] = acc.get(p, 0.0) + weight * g
                batch_loss += weight * loss.item()
            opt.step(acc)
            total += batch_loss
            batches += 1
        entry = TemporalEpochLog(epoch, total / max(batches, 1), time.perf_counter() - t0)
        log.append(entry)
        if log_cb:
            log_cb(entry)
    return model, log
