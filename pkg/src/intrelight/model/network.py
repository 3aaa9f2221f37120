"""The relighting network: source ViT + intrinsics ConvNeXt -> fused trunk -> DPT-lite head."""
from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, ops
from ..autodiff.nn import Conv2d, LayerNorm, Linear, Module, Parameter, trunc_normal
from .blocks import Block, ChannelNorm, ConvNeXtBlock, Mlp, ResidualConvUnit, rope_tables
from .config import ModelConfig


def _to_grid(tokens, gh, gw):
    b, n, d = tokens.shape
    return ops.transpose(tokens.reshape(b, gh, gw, d), (0, 3, 1, 2))


def _to_tokens(grid):
    b, c, h, w = grid.shape
    return ops.transpose(grid, (0, 2, 3, 1)).reshape(b, h * w, c)


class SourceEncoder(Module):
    """Non-overlapping p x p patch embedding followed by self-attention blocks."""

    def __init__(self, cfg: ModelConfig, rng):
        self.p = cfg.p
        self.embed = Conv2d(3, cfg.d, cfg.p, rng, stride=cfg.p, std=0.02)
        self.blocks = [Block(cfg.d, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.source_encoder_depth)]

    def patchify(self, image):
        return _to_tokens(self.embed(image))

    def forward(self, image, rope):
        x = self.patchify(image)
        for blk in self.blocks:
            x = blk(x, rope)
        return x


class IntrinsicsEncoder(Module):
    """Strided stem, ConvNeXt blocks, then a strided projection to d (total stride p)."""

    def __init__(self, cfg: ModelConfig, rng):
        self.stem_stride = max(cfg.p // 2, 1)
        self.proj_stride = cfg.p // self.stem_stride
        width = max(cfg.d // 4, 8)
        self.stem = Conv2d(9, width, self.stem_stride, rng, stride=self.stem_stride)
        self.stem_norm = ChannelNorm(width)
        self.blocks = [ConvNeXtBlock(width, rng) for _ in range(cfg.intrinsics_encoder_depth)]
        self.out_norm = ChannelNorm(width)
        self.proj = Conv2d(width, cfg.d, self.proj_stride, rng, stride=self.proj_stride)

    def forward(self, cond):
        if cond.ndim != 4 or cond.shape[1] != 9:
            raise ValueError(f"intrinsics encoder expects B x 9 x H x W, got {cond.shape}")
        x = self.stem_norm(self.stem(cond))
        for blk in self.blocks:
            x = blk(x)
        return _to_tokens(self.proj(self.out_norm(x)))


class DPTHead(Module):
    """Four token streams -> dense C' x H x W features -> output conv.

    All streams live at stride p.  Each is normalised and projected to a
    common width, merged coarse-to-fine (deepest first) through residual
    conv units, then brought to full resolution by log2(p) stages of
    3x3 conv + bilinear x2.  No 3x3 conv runs at full resolution.
    """

    def __init__(self, cfg: ModelConfig, rng, out_channels: int, skip_channels: int = 0):
        c = cfg.head_width
        self.norms = [LayerNorm(cfg.d) for _ in range(4)]
        self.projs = [Linear(cfg.d, c, rng, std=(1.0 / cfg.d) ** 0.5) for _ in range(4)]
        self.rcu_in = [ResidualConvUnit(c, rng) for _ in range(4)]
        self.rcu_out = [ResidualConvUnit(c, rng) for _ in range(4)]
        self.ups = []
        width = c
        for _ in range(int(np.log2(cfg.p))):
            nxt = max(width // 2, 16)
            self.ups.append(Conv2d(width, nxt, 3, rng, padding=1, pad_mode="edge"))
            width = nxt
        self.out_width = width
        # full-resolution path from the raw inputs, merged just before the output conv
        self.skip = self.skip2 = self.merge = None
        if skip_channels:
            sw = cfg.skip_width
            self.skip = Conv2d(skip_channels, sw, 1, rng)
            self.skip2 = Conv2d(sw, sw, 1, rng)
            self.merge = Conv2d(width + sw, width, 1, rng)
        self.out = Conv2d(width, out_channels, 1, rng)
        self.out.weight.data[...] = 0.0
        self.out.bias.data[...] = 0.0

    def features(self, streams, gh, gw):
        fused = None
        for i in reversed(range(4)):
            x = _to_grid(self.projs[i](self.norms[i](streams[i])), gh, gw)
            x = self.rcu_in[i](x)
            fused = x if fused is None else fused + x
            fused = self.rcu_out[i](fused)
        for conv in self.ups:
            h, w = fused.shape[-2:]
            fused = ops.upsample_bilinear(ops.gelu(conv(fused)), 2 * h, 2 * w)
        return fused

    def forward(self, streams, gh, gw, pixels=None):
        feats = self.features(streams, gh, gw)
        if self.skip is not None:
            s = ops.gelu(self.skip2(ops.gelu(self.skip(pixels))))
            feats = ops.gelu(self.merge(ops.concat([feats, s], axis=1)))
        return self.out(feats)


class PixlModel(Module):
    def __init__(self, cfg: ModelConfig | None = None, rng: np.random.Generator | None = None):
        cfg = ModelConfig() if cfg is None else cfg
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed) if rng is None else rng
        d = cfg.d
        self.source = SourceEncoder(cfg, rng) if cfg.trunk_mode == "fused" else None
        self.intrinsics = IntrinsicsEncoder(cfg, rng)
        fuse_in = 2 * d if cfg.trunk_mode == "fused" else d
        self.fuse = Mlp(fuse_in, d, d, rng)
        self.registers = Parameter(trunc_normal(rng, (cfg.n_registers, d), 0.02))
        self.blocks = [Block(d, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.L)]
        skip = (12 if cfg.trunk_mode == "fused" else 9) if cfg.pixel_skip else 0
        self.head = DPTHead(cfg, rng, 6 if cfg.head_mode == "modulation" else 3, skip)

    # -- pieces ---------------------------------------------------------------
    def grid(self, h, w):
        p = self.cfg.p
        if h % p or w % p:
            raise ValueError(f"image size {h}x{w} not divisible by patch size {p}")
        return h // p, w // p

    def rope(self, gh, gw, n_prefix=0, offset=(0.0, 0.0)):
        c = self.cfg
        return rope_tables(gh, gw, c.head_dim, c.rope_base, offset, n_prefix)

    def encode_source(self, image):
        image = _batched(image)
        gh, gw = self.grid(*image.shape[-2:])
        return self.source(image, self.rope(gh, gw))

    def encode_intrinsics(self, cond):
        cond = _batched(cond)
        self.grid(*cond.shape[-2:])
        return self.intrinsics(cond)

    def fuse_tokens(self, src_tokens, cond_tokens):
        if self.cfg.trunk_mode == "intrinsics_only":
            return self.fuse(cond_tokens)
        if src_tokens.shape != cond_tokens.shape:
            raise ValueError(f"token grids differ: source {src_tokens.shape} vs conditioning {cond_tokens.shape}")
        return self.fuse(ops.concat([src_tokens, cond_tokens], axis=-1))

    def trunk_forward(self, tokens, gh, gw, offset=(0.0, 0.0)):
        b, n, d = tokens.shape
        nreg = self.cfg.n_registers
        rope = self.rope(gh, gw, nreg, offset)
        x = tokens
        if nreg:
            x = ops.concat([np.zeros((b, nreg, d), dtype=tokens.data.dtype) + self.registers, tokens], axis=1)
        taps = {}
        for i, blk in enumerate(self.blocks):
            x = blk(x, rope)
            if i in self.cfg.readout_indices:
                taps[i] = x[:, nreg:]
        return [taps[i] for i in self.cfg.readout_indices]

    def trunk_logits(self, tokens, gh, gw, offset=(0.0, 0.0)):
        """Patch-to-patch attention logits of every trunk block (for diagnostics)."""
        b, n, d = tokens.shape
        nreg = self.cfg.n_registers
        rope = self.rope(gh, gw, nreg, offset)
        x = tokens
        if nreg:
            x = ops.concat([np.zeros((b, nreg, d), dtype=tokens.data.dtype) + self.registers, tokens], axis=1)
        out = []
        for blk in self.blocks:
            out.append(blk.attn.logits(blk.norm1(x), rope)[..., nreg:, nreg:])
            x = blk(x, rope)
        return out

    def dpt_readout(self, streams, gh, gw):
        return self.head.features(streams, gh, gw)

    def head_output(self, source, cond):
        source, cond = _batched(source), _batched(cond)
        if source.shape[0] != cond.shape[0] or source.shape[-2:] != cond.shape[-2:]:
            raise ValueError(f"source {source.shape} and conditioning {cond.shape} disagree")
        if source.shape[1] != 3:
            raise ValueError(f"source must have 3 channels, got {source.shape}")
        gh, gw = self.grid(*source.shape[-2:])
        cond_tokens = self.encode_intrinsics(cond)
        src_tokens = self.encode_source(source) if self.source is not None else None
        streams = self.trunk_forward(self.fuse_tokens(src_tokens, cond_tokens), gh, gw)
        pixels = None
        if self.cfg.pixel_skip:
            pixels = cond if self.source is None else ops.concat([source, cond], axis=1)
        return self.head(streams, gh, gw, pixels)

    def forward(self, source, cond):
        """Relit image from source I_S (B x 3 x H x W, [0,1]) and target conditioning C_T (B x 9 x H x W)."""
        source = _batched(source)
        out = self.head_output(source, cond)
        if self.cfg.head_mode == "direct_regression":
            return ops.sigmoid(out)
        return modulate(source, out[:, 0:3], out[:, 3:6])


def modulate(source, gain, bias):
    """clip((1 + g) * I_S + b, 0, 1) with zero gradient where saturated."""
    return ops.clip(source * (gain + 1.0) + bias, 0.0, 1.0)


def _batched(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    return x.reshape((1,) + x.shape) if x.ndim == 3 else x
