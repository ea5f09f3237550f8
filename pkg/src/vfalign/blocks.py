"""Encoder sub-layers: attention (global, windowed-local, cross), the
global/local convolution branches, max-feature-map fusion, the macaron
feed-forward, and sinusoidal positions.

Blocks are plain classes holding named parameter tensors; calling one runs
the forward pass on the autodiff graph. Residual connections are added by
the caller (the encoder block), not here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (DEFAULT_DTYPE, Tensor, concat, conv1d_depthwise,
                     conv1d_pointwise, layer_norm, mask_sentinel,
                     masked_softmax, matmul, maximum, mul, narrow, sigmoid,
                     swish, tensor, transpose)


@dataclass
class AttentionConfig:
    embed_dim: int
    num_heads: int
    window: int | None = None  # frames, local attention only

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by "
                f"{self.num_heads} heads")
        if self.window is not None and self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")


@dataclass
class ConvBranchConfig:
    kernel: int  # frames; 31 for the global branch, 3 for the local one
    embed_dim: int

    def __post_init__(self):
        if self.kernel < 1 or self.embed_dim < 1:
            raise ValueError("kernel and embed_dim must be >= 1")


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape=None, dtype=DEFAULT_DTYPE) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out)).astype(dtype)


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype=DEFAULT_DTYPE, name: str = "linear"):
        self.w = tensor(xavier_uniform(rng, d_in, d_out, dtype=dtype),
                        dtype=dtype, requires_grad=True, name=f"{name}.w")
        self.b = tensor(np.zeros(d_out, dtype=dtype), dtype=dtype,
                        requires_grad=True, name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.w) + self.b

    def parameters(self):
        return [self.w, self.b]


class LayerNorm:
    def __init__(self, dim: int, dtype=DEFAULT_DTYPE, name: str = "ln"):
        self.gain = tensor(np.ones(dim, dtype=dtype), dtype=dtype,
                           requires_grad=True, name=f"{name}.gain")
        self.bias = tensor(np.zeros(dim, dtype=dtype), dtype=dtype,
                           requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)

    def parameters(self):
        return [self.gain, self.bias]


def local_attention_mask(t_len: int, window: int,
                         dtype=DEFAULT_DTYPE) -> Tensor:
    """Additive T x T mask keeping positions with |i - j| <= floor(W/2).

    The diagonal is always kept, so no row is fully masked.
    """
    if t_len < 1 or window < 1:
        raise ValueError("t_len and window must be >= 1")
    radius = window // 2
    idx = np.arange(t_len)
    keep = np.abs(idx[:, None] - idx[None, :]) <= radius
    mask = np.where(keep, 0.0, mask_sentinel(dtype)).astype(dtype)
    return tensor(mask, dtype=dtype)


def causal_mask(t_len: int, dtype=DEFAULT_DTYPE) -> Tensor:
    keep = np.tril(np.ones((t_len, t_len), dtype=bool))
    return tensor(np.where(keep, 0.0, mask_sentinel(dtype)).astype(dtype),
                  dtype=dtype)


class MultiHeadAttention:
    """Scaled dot-product attention, cross or self depending on inputs.

    Queries keep their own length, so attending video queries over text
    keys/values returns a video-length output. Scores are scaled by
    1/sqrt(head_dim); an optional additive mask (T_q x T_kv) restricts
    which keys each query sees.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator,
                 dtype=DEFAULT_DTYPE, name: str = "attn"):
        self.cfg = cfg
        c = cfg.embed_dim
        self.wq = Linear(c, c, rng, dtype, f"{name}.q")
        self.wk = Linear(c, c, rng, dtype, f"{name}.k")
        self.wv = Linear(c, c, rng, dtype, f"{name}.v")
        self.wo = Linear(c, c, rng, dtype, f"{name}.o")

    def __call__(self, q_in: Tensor, kv_in: Tensor,
                 mask: Tensor | None = None) -> Tensor:
        if mask is not None and mask.shape != (q_in.shape[0], kv_in.shape[0]):
            raise ValueError(
                f"mask shape {mask.shape} does not match "
                f"({q_in.shape[0]}, {kv_in.shape[0]})")
        h = self.cfg.num_heads
        d = self.cfg.embed_dim // h
        q = self.wq(q_in)
        k = self.wk(kv_in)
        v = self.wv(kv_in)
        scale = 1.0 / np.sqrt(d)
        heads = []
        for i in range(h):
            qh = narrow(q, 1, i * d, d)
            kh = narrow(k, 1, i * d, d)
            vh = narrow(v, 1, i * d, d)
            logits = mul(matmul(qh, transpose(kh)),
                         tensor(scale, dtype=q_in.dtype))
            weights = masked_softmax(logits, mask)
            heads.append(matmul(weights, vh))
        merged = heads[0] if h == 1 else concat(heads, axis=1)
        return self.wo(merged)

    def parameters(self):
        return (self.wq.parameters() + self.wk.parameters()
                + self.wv.parameters() + self.wo.parameters())


def glu(x: Tensor) -> Tensor:
    """Gated linear unit over the channel axis: first half gated by sigmoid
    of the second half; output has half the channels."""
    c2 = x.shape[1]
    if c2 % 2 != 0:
        raise ValueError(f"GLU needs an even channel count, got {c2}")
    half = c2 // 2
    return mul(narrow(x, 1, 0, half), sigmoid(narrow(x, 1, half, half)))


class ConvBranch:
    """pointwise(C -> 2C) -> GLU -> depthwise(k) -> layer norm -> swish ->
    pointwise(C -> C). The caller adds the residual."""

    def __init__(self, cfg: ConvBranchConfig, rng: np.random.Generator,
                 dtype=DEFAULT_DTYPE, name: str = "conv"):
        self.cfg = cfg
        c, k = cfg.embed_dim, cfg.kernel
        self.pw1 = tensor(xavier_uniform(rng, c, 2 * c, dtype=dtype),
                          dtype=dtype, requires_grad=True, name=f"{name}.pw1")
        self.pw1_b = tensor(np.zeros(2 * c, dtype=dtype), dtype=dtype,
                            requires_grad=True, name=f"{name}.pw1_b")
        self.dw = tensor(xavier_uniform(rng, k, k, shape=(k, c), dtype=dtype),
                         dtype=dtype, requires_grad=True, name=f"{name}.dw")
        self.dw_b = tensor(np.zeros(c, dtype=dtype), dtype=dtype,
                           requires_grad=True, name=f"{name}.dw_b")
        self.norm = LayerNorm(c, dtype, f"{name}.norm")
        self.pw2 = tensor(xavier_uniform(rng, c, c, dtype=dtype),
                          dtype=dtype, requires_grad=True, name=f"{name}.pw2")
        self.pw2_b = tensor(np.zeros(c, dtype=dtype), dtype=dtype,
                            requires_grad=True, name=f"{name}.pw2_b")

    def __call__(self, x: Tensor) -> Tensor:
        y = conv1d_pointwise(x, self.pw1) + self.pw1_b
        y = glu(y)
        y = conv1d_depthwise(y, self.dw) + self.dw_b
        y = self.norm(y)
        y = swish(y)
        return conv1d_pointwise(y, self.pw2) + self.pw2_b

    def parameters(self):
        return [self.pw1, self.pw1_b, self.dw, self.dw_b,
                self.pw2, self.pw2_b] + self.norm.parameters()


def mfm_fuse(a: Tensor, b: Tensor) -> Tensor:
    """Max feature map: elementwise maximum of two equal-shaped maps.

    Gradient follows the winning input; ties route to `a`.
    """
    return maximum(a, b)


class FeedForward:
    """linear(C -> 4C) -> swish -> linear(4C -> C); the caller scales the
    residual by 1/2 (macaron convention)."""

    def __init__(self, embed_dim: int, rng: np.random.Generator,
                 dtype=DEFAULT_DTYPE, name: str = "ffn", expansion: int = 4):
        c = embed_dim
        self.l1 = Linear(c, expansion * c, rng, dtype, f"{name}.l1")
        self.l2 = Linear(expansion * c, c, rng, dtype, f"{name}.l2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(swish(self.l1(x)))

    def parameters(self):
        return self.l1.parameters() + self.l2.parameters()


def positional_encoding(t_len: int, embed_dim: int,
                        dtype=DEFAULT_DTYPE) -> Tensor:
    """Absolute sinusoidal positions: sin on even channels, cos on odd."""
    pos = np.arange(t_len, dtype=np.float64)[:, None]
    i = np.arange(0, embed_dim, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, i / embed_dim)
    pe = np.zeros((t_len, embed_dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : embed_dim // 2])
    return tensor(pe.astype(dtype), dtype=dtype)
