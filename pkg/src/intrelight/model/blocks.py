"""Transformer and ConvNeXt building blocks, and axial 2-D rotary tables."""
from __future__ import annotations

import math

import numpy as np

from ..autodiff import ops
from ..autodiff.nn import Conv2d, DepthwiseConv2d, LayerNorm, Linear, Module, Parameter


def rope_tables(gh: int, gw: int, head_dim: int, base: float = 100.0, offset=(0.0, 0.0), n_prefix: int = 0):
    """cos/sin tables (n_prefix + gh*gw, head_dim/2) for interleaved pairs.

    The first half of the pairs rotate with the row index, the second half
    with the column index.  Prefix rows (registers) get the identity rotation.
    """
    quarter = head_dim // 4
    freqs = base ** (-np.arange(quarter, dtype=np.float64) / quarter)
    rows, cols = np.meshgrid(np.arange(gh, dtype=np.float64), np.arange(gw, dtype=np.float64), indexing="ij")
    rows = rows.ravel() + offset[0]
    cols = cols.ravel() + offset[1]
    ang = np.concatenate([rows[:, None] * freqs, cols[:, None] * freqs], axis=1)
    ang = np.concatenate([np.zeros((n_prefix, 2 * quarter)), ang], axis=0)
    return np.cos(ang), np.sin(ang)


class Attention(Module):
    def __init__(self, d, heads, rng):
        self.heads = heads
        self.qkv = Linear(d, 3 * d, rng)
        self.proj = Linear(d, d, rng)

    def qk(self, x, rope):
        """Rotated queries and keys, each (B, heads, N, dh), plus values."""
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads)
        qkv = ops.transpose(qkv, (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        if rope is not None:
            q = ops.rotary(q, *rope)
            k = ops.rotary(k, *rope)
        return q, k, v

    def logits(self, x, rope):
        q, k, _ = self.qk(x, rope)
        return q.data @ np.swapaxes(k.data, -1, -2) / math.sqrt(q.shape[-1])

    def forward(self, x, rope):
        b, n, d = x.shape
        q, k, v = self.qk(x, rope)
        out = ops.scaled_dot_product_attention(q, k, v)
        out = ops.transpose(out, (0, 2, 1, 3)).reshape(b, n, d)
        return self.proj(out)


class Mlp(Module):
    def __init__(self, din, dhidden, dout, rng):
        self.fc1 = Linear(din, dhidden, rng)
        self.fc2 = Linear(dhidden, dout, rng)

    def forward(self, x):
        return self.fc2(ops.gelu(self.fc1(x)))


class Block(Module):
    """Pre-norm self-attention block."""

    def __init__(self, d, heads, mlp_ratio, rng):
        self.norm1 = LayerNorm(d)
        self.attn = Attention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.mlp = Mlp(d, mlp_ratio * d, d, rng)

    def forward(self, x, rope=None):
        x = x + self.attn(self.norm1(x), rope)
        return x + self.mlp(self.norm2(x))


class ChannelNorm(Module):
    """LayerNorm over the channel axis of an N x C x H x W map."""

    def __init__(self, c):
        self.norm = LayerNorm(c)

    def forward(self, x):
        y = self.norm(ops.transpose(x, (0, 2, 3, 1)))
        return ops.transpose(y, (0, 3, 1, 2))


class ConvNeXtBlock(Module):
    """Depthwise 7x7, channel norm, pointwise MLP, residual."""

    def __init__(self, c, rng, mlp_ratio=4, pad_mode="edge"):
        self.dw = DepthwiseConv2d(c, 7, rng, pad_mode=pad_mode)
        self.norm = LayerNorm(c)
        self.mlp = Mlp(c, mlp_ratio * c, c, rng)
        self.gamma = Parameter(np.full(c, 0.1))

    def forward(self, x):
        y = ops.transpose(self.dw(x), (0, 2, 3, 1))
        y = self.mlp(self.norm(y)) * self.gamma
        return x + ops.transpose(y, (0, 3, 1, 2))


class ResidualConvUnit(Module):
    def __init__(self, c, rng):
        self.conv1 = Conv2d(c, c, 3, rng, padding=1, pad_mode="edge")
        self.conv2 = Conv2d(c, c, 3, rng, padding=1, pad_mode="edge", std=1e-3)

    def forward(self, x):
        return x + self.conv2(ops.gelu(self.conv1(ops.gelu(x))))
