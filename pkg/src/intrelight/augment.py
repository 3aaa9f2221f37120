"""Stochastic corruption of the conditioning stack.

Mimics the defects of conditioning rendered from a coarse reconstruction:
exposure/colour shifts, missing-geometry holes, silhouette cracks, speckle,
denoiser blur and banding.  All randomness comes from counter-based
substreams keyed by (seed, sample_id, augmentation), so results do not
depend on the order in which samples are processed.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .imgcore import resize_array
from .intrinsics import ConditioningStack, percentile

PHOTOMETRIC = ("color_cast", "gamma")
STRUCTURAL = ("holes", "edge_cracks")
NOISE = ("salt_pepper", "gaussian_noise")
FREQUENCY = ("gaussian_blur", "posterize")
PIPELINE_ORDER = PHOTOMETRIC + STRUCTURAL + NOISE + FREQUENCY

# substream ids; 0 is the global gate
_STREAM_ID = {"gate": 0, **{name: i + 1 for i, name in enumerate(PIPELINE_ORDER)}}

# admissible strength ranges (the defaults use them in full)
LIMITS = {
    "color_cast_scale": (0.85, 1.15),
    "color_cast_bias": (-0.06, 0.06),
    "gamma_range": (0.75, 1.35),
    "holes_fraction": (0.005, 0.040),
    "edge_cracks_quantile": (0.92, 0.99),
    "edge_cracks_strength": (0.4, 1.0),
    "salt_pepper_fraction": (0.0, 0.003),
    "gaussian_noise_sigma": (0.0, 0.04),
    "gaussian_blur_sigma": (0.4, 1.2),
    "posterize_levels": (12, 64),
}

HOLE_GRID_DIVISOR = 8
HOLE_NOISE_FLOOR = 0.01
HOLE_EDGE_WEIGHT = 0.5


@dataclass(frozen=True)
class AugmentConfig:
    p_apply: float = 0.70
    color_cast_p: float = 0.50
    color_cast_scale: tuple[float, float] = (0.85, 1.15)
    color_cast_bias: tuple[float, float] = (-0.06, 0.06)
    gamma_p: float = 0.30
    gamma_range: tuple[float, float] = (0.75, 1.35)
    holes_p: float = 0.50
    holes_fraction: tuple[float, float] = (0.005, 0.040)
    holes_edge_bias_p: float = 0.50
    edge_cracks_p: float = 0.50
    edge_cracks_quantile: tuple[float, float] = (0.92, 0.99)
    edge_cracks_strength: tuple[float, float] = (0.4, 1.0)
    salt_pepper_p: float = 0.25
    salt_pepper_fraction: tuple[float, float] = (0.0, 0.003)
    gaussian_noise_p: float = 0.50
    gaussian_noise_sigma: tuple[float, float] = (0.0, 0.04)
    gaussian_blur_p: float = 0.25
    gaussian_blur_sigma: tuple[float, float] = (0.4, 1.2)
    posterize_p: float = 0.25
    posterize_levels: tuple[int, int] = (12, 64)

    def __post_init__(self):
        for name, value in asdict(self).items():
            if isinstance(value, list):
                value = tuple(value)
                object.__setattr__(self, name, value)
            if name.endswith("_p") or name == "p_apply":
                if not 0.0 <= value <= 1.0:
                    raise ValueError(f"{name}={value} is not a probability")
            else:
                lo, hi = value
                if lo > hi:
                    raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
                lim_lo, lim_hi = LIMITS[name]
                if lo < lim_lo or hi > lim_hi:
                    raise ValueError(f"{name}=({lo}, {hi}) outside admissible range [{lim_lo}, {lim_hi}]")

    def probability(self, name: str) -> float:
        return getattr(self, f"{name}_p")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown augment keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(p_apply=0.0)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random substreams: one Philox stream per (sample, purpose)."""

    seed: int

    def generator(self, sample_id: int, stream_id: int) -> np.random.Generator:
        key = self.seed & 0xFFFFFFFFFFFFFFFF
        # ids live in the high counter words so draws never walk into a neighbour
        counter = [0, 0, stream_id & 0xFFFFFFFFFFFFFFFF, sample_id & 0xFFFFFFFFFFFFFFFF]
        return np.random.Generator(np.random.Philox(counter=counter, key=key))


@dataclass
class AugmentTrace:
    applied: bool = False
    fired: list[str] = field(default_factory=list)
    params: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# individual corruptions (raw arrays; stacks are 9 x H x W, groups 3 x H x W)


def color_cast(group: np.ndarray, scale, bias) -> np.ndarray:
    scale = np.asarray(scale, np.float32).reshape(-1, 1, 1)
    bias = np.asarray(bias, np.float32).reshape(-1, 1, 1)
    return (scale * group + bias).astype(np.float32)


def gamma(group: np.ndarray, g) -> np.ndarray:
    g = np.asarray(g, np.float32)
    lo, hi = LIMITS["gamma_range"]
    if np.any(g < lo) or np.any(g > hi):
        raise ValueError(f"gamma {g} outside [{lo}, {hi}]")
    g = g.reshape(-1, 1, 1) if g.ndim else g
    # colour-cast bias can dip below zero; fractional powers need x >= 0
    return np.power(np.maximum(group, 0.0), g).astype(np.float32)


def sobel_magnitude(img: np.ndarray) -> np.ndarray:
    p = np.pad(img.astype(np.float32), 1, mode="edge")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    return np.sqrt(gx * gx + gy * gy)


def shading_luminance(stack: np.ndarray) -> np.ndarray:
    return stack[3:6].mean(axis=0)


def hole_mask(stack: np.ndarray, edge_bias: bool, gen: np.random.Generator) -> np.ndarray:
    _, h, w = stack.shape
    gh, gw = max(2, h // HOLE_GRID_DIVISOR), max(2, w // HOLE_GRID_DIVISOR)
    grid = gen.random((1, gh, gw)).astype(np.float32)
    mask = resize_array(grid, h, w)[0]
    if edge_bias:
        mag = sobel_magnitude(shading_luminance(stack))
        peak = mag.max()
        if peak > 0:
            mag = mag / peak
        mask = (1.0 - HOLE_EDGE_WEIGHT) * mask + HOLE_EDGE_WEIGHT * mag
    return mask


def holes(stack: np.ndarray, fraction: float, edge_bias: bool, gen: np.random.Generator) -> np.ndarray:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"hole fraction {fraction} outside [0, 1]")
    c, h, w = stack.shape
    mask = hole_mask(stack, edge_bias, gen)
    k = math.ceil(round(fraction * h * w, 9))
    out = np.array(stack, dtype=np.float32, copy=True)
    if k == 0:
        return out
    idx = np.argsort(-mask.ravel(), kind="stable")[:k]
    flat = out.reshape(c, -1)
    floor = gen.uniform(0.0, HOLE_NOISE_FLOOR, size=(c, k)).astype(np.float32)
    flat[:, idx] = flat.min(axis=1, keepdims=True) + floor
    return out


def dilate3x3(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask, 1, mode="constant", constant_values=False)
    h, w = mask.shape
    out = np.zeros_like(mask)
    for dy in range(3):
        for dx in range(3):
            out |= p[dy : dy + h, dx : dx + w]
    return out


def edge_crack_mask(stack: np.ndarray, quantile: float) -> np.ndarray:
    mag = sobel_magnitude(shading_luminance(stack))
    thresh = percentile(mag, quantile)
    return dilate3x3(mag > thresh)


def edge_cracks(stack: np.ndarray, quantile: float, strength: float) -> np.ndarray:
    mask = edge_crack_mask(stack, quantile)
    factor = np.where(mask, np.float32(1.0 - strength), np.float32(1.0)).astype(np.float32)
    return (stack * factor[None]).astype(np.float32)


def salt_pepper(stack: np.ndarray, fraction: float, gen: np.random.Generator) -> np.ndarray:
    _, h, w = stack.shape
    hit = gen.random((h, w)) < fraction
    value = (gen.random((h, w)) < 0.5).astype(np.float32)
    out = np.array(stack, dtype=np.float32, copy=True)
    out[:, hit] = value[hit]
    return out


def gaussian_noise(stack: np.ndarray, sigma: float, gen: np.random.Generator) -> np.ndarray:
    noise = gen.normal(0.0, sigma, size=stack.shape).astype(np.float32)
    return (stack + noise).astype(np.float32)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    if radius == 0:
        return np.ones(1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(stack: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    if r == 0:
        return np.array(stack, dtype=np.float32, copy=True)
    _, h, w = stack.shape
    x = np.pad(stack.astype(np.float64), ((0, 0), (r, r), (r, r)), mode="edge")
    tmp = sum(k[i] * x[:, i : i + h, :] for i in range(len(k)))
    out = sum(k[i] * tmp[:, :, i : i + w] for i in range(len(k)))
    return out.astype(np.float32)


def posterize(stack: np.ndarray, levels: int) -> np.ndarray:
    if levels < 2:
        raise ValueError("posterize needs at least 2 levels")
    q = levels - 1
    return (np.round(stack * q) / q).astype(np.float32)


# ---------------------------------------------------------------------------
# pipeline


def _uniform(gen, lo_hi, size=None):
    lo, hi = lo_hi
    return gen.uniform(lo, hi, size=size)


def _apply_one(name: str, x: np.ndarray, cfg: AugmentConfig, gen, trace: AugmentTrace) -> np.ndarray:
    if name == "color_cast":
        scale = _uniform(gen, cfg.color_cast_scale, (3, 3))
        bias = _uniform(gen, cfg.color_cast_bias, (3, 3))
        trace.params[name] = {"scale": scale.tolist(), "bias": bias.tolist()}
        return np.concatenate([color_cast(x[3 * i : 3 * i + 3], scale[i], bias[i]) for i in range(3)])
    if name == "gamma":
        g = _uniform(gen, cfg.gamma_range, (3, 3))
        trace.params[name] = {"gamma": g.tolist()}
        return np.concatenate([gamma(x[3 * i : 3 * i + 3], g[i]) for i in range(3)])
    if name == "holes":
        frac = float(_uniform(gen, cfg.holes_fraction))
        edge_bias = bool(gen.random() < cfg.holes_edge_bias_p)
        trace.params[name] = {"fraction": frac, "edge_bias": edge_bias}
        return holes(x, frac, edge_bias, gen)
    if name == "edge_cracks":
        q = float(_uniform(gen, cfg.edge_cracks_quantile))
        s = float(_uniform(gen, cfg.edge_cracks_strength))
        trace.params[name] = {"quantile": q, "strength": s}
        return edge_cracks(x, q, s)
    if name == "salt_pepper":
        frac = float(_uniform(gen, cfg.salt_pepper_fraction))
        trace.params[name] = {"fraction": frac}
        return salt_pepper(x, frac, gen)
    if name == "gaussian_noise":
        sigma = float(_uniform(gen, cfg.gaussian_noise_sigma))
        trace.params[name] = {"sigma": sigma}
        return gaussian_noise(x, sigma, gen)
    if name == "gaussian_blur":
        sigma = float(_uniform(gen, cfg.gaussian_blur_sigma))
        trace.params[name] = {"sigma": sigma}
        return gaussian_blur(x, sigma)
    if name == "posterize":
        lo, hi = cfg.posterize_levels
        levels = int(gen.integers(lo, hi + 1))
        trace.params[name] = {"levels": levels}
        return posterize(x, levels)
    raise KeyError(f"unknown augmentation {name!r}")


def augment_array(
    stack: np.ndarray,
    config: AugmentConfig,
    rng: RngStream,
    sample_id: int = 0,
    order: Sequence[str] = PIPELINE_ORDER,
) -> tuple[np.ndarray, AugmentTrace]:
    """Corrupt a raw 9 x H x W array; returns (output, trace)."""
    if sorted(order) != sorted(PIPELINE_ORDER):
        raise ValueError(f"order must be a permutation of {PIPELINE_ORDER}")
    trace = AugmentTrace()
    gate = rng.generator(sample_id, _STREAM_ID["gate"])
    if not gate.random() < config.p_apply:
        return stack, trace
    trace.applied = True
    x = np.array(stack, dtype=np.float32, copy=True)
    for name in order:
        gen = rng.generator(sample_id, _STREAM_ID[name])
        if gen.random() < config.probability(name):
            trace.fired.append(name)
            x = _apply_one(name, x, config, gen, trace)
    return np.clip(x, 0.0, 1.0).astype(np.float32), trace


def augment_conditioning(
    stack: ConditioningStack,
    config: AugmentConfig,
    rng: RngStream,
    sample_id: int = 0,
    order: Sequence[str] = PIPELINE_ORDER,
) -> ConditioningStack:
    out, trace = augment_array(stack.data, config, rng, sample_id, order)
    if not trace.applied:
        return stack
    return ConditioningStack(out)
