"""Network building blocks on top of the autodiff engine."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros((in_dim, out_dim))
            b = np.zeros(out_dim)
        else:
            k = 1.0 / np.sqrt(in_dim)
            w = rng.uniform(-k, k, (in_dim, out_dim))
            b = rng.uniform(-k, k, out_dim)
        self.w = Parameter(w)
        self.b = Parameter(b)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim > 2:
            # single GEMM over the flattened leading axes
            shape = x.shape
            flat = ad.reshape(x, (-1, shape[-1]))
            out = ad.add(ad.matmul(flat, self.w), self.b)
            return ad.reshape(out, shape[:-1] + (self.w.shape[1],))
        return ad.add(ad.matmul(x, self.w), self.b)

    def parameters(self) -> dict[str, Parameter]:
        return {"w": self.w, "b": self.b}


class LayerNorm:
    """Layer normalization over the last axis with learned affine."""

    def __init__(self, dim: int):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.mul(ad.layer_norm(x), self.gamma), self.beta)

    def parameters(self) -> dict[str, Parameter]:
        return {"gamma": self.gamma, "beta": self.beta}


class MultiHeadAttention:
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        assert dim % heads == 0
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def __call__(self, q_in: Tensor, kv_in: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """q_in [B, Tq, D], kv_in [B, Tk, D]; mask [Tq, Tk] additive (-inf style)."""
        b, tq = q_in.shape[0], q_in.shape[1]
        tk = kv_in.shape[1]

        def split(x: Tensor, t: int) -> Tensor:
            x = ad.reshape(x, (b, t, self.heads, self.head_dim))
            return ad.swapaxes(x, 1, 2)  # [B, H, T, Dh]

        q = split(self.wq(q_in), tq)
        k = split(self.wk(kv_in), tk)
        v = split(self.wv(kv_in), tk)
        scores = ad.scale(ad.matmul(q, ad.swapaxes(k, 2, 3)), 1.0 / np.sqrt(self.head_dim))
        if mask is not None:
            scores = ad.add(scores, ad.constant(mask))
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(attn, v)  # [B, H, Tq, Dh]
        ctx = ad.reshape(ad.swapaxes(ctx, 1, 2), (b, tq, self.dim))
        return self.wo(ctx)

    def parameters(self) -> dict[str, Parameter]:
        out = {}
        for name, layer in (("q", self.wq), ("k", self.wk), ("v", self.wv), ("o", self.wo)):
            for pname, p in layer.parameters().items():
                out[f"{name}.{pname}"] = p
        return out


class FeedForward:
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.l1 = Linear(dim, hidden, rng)
        self.l2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(ad.relu(self.l1(x)))

    def parameters(self) -> dict[str, Parameter]:
        out = {}
        for name, layer in (("l1", self.l1), ("l2", self.l2)):
            for pname, p in layer.parameters().items():
                out[f"{name}.{pname}"] = p
        return out


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """Classic fixed sin/cos positional table [length, dim]."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    enc = np.zeros((length, dim))
    enc[:, 0::2] = np.sin(angles[:, 0::2])
    enc[:, 1::2] = np.cos(angles[:, 1::2])
    return enc


def causal_mask(t: int) -> np.ndarray:
    """Additive mask blocking attention to future positions."""
    m = np.zeros((t, t))
    m[np.triu_indices(t, k=1)] = -1e9
    return m


def collect_parameters(prefix: str, modules: dict[str, object]) -> dict[str, Parameter]:
    out: dict[str, Parameter] = {}
    for name, module in modules.items():
        for pname, p in module.parameters().items():  # type: ignore[attr-defined]
            out[f"{prefix}{name}.{pname}"] = p
    return out
