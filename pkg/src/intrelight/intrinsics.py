"""Image-formation model, render-pass composition and conditioning assembly."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .imgcore import FloatBuffer, ImageRGB, LINEAR, load_pfm, save_pfm

TRIPLET_FILES = ("albedo.pfm", "shading.pfm", "residual.pfm")
CONDITIONING_FILES = ("cond_albedo.pfm", "cond_shading.pfm", "cond_residual.pfm")
DEFAULT_EPS = 1e-4


def _check_rgb(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"{name} must be 3 x H x W, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class IntrinsicTriplet:
    """Albedo A, diffuse shading S and non-diffuse residual R of one image."""

    albedo: np.ndarray
    shading: np.ndarray
    residual: np.ndarray

    def __post_init__(self):
        a = _check_rgb("albedo", self.albedo)
        s = _check_rgb("shading", self.shading)
        r = _check_rgb("residual", self.residual)
        if not (a.shape == s.shape == r.shape):
            raise ValueError(f"dimension mismatch: A{a.shape} S{s.shape} R{r.shape}")
        if a.min() < 0.0 or a.max() > 1.0:
            raise ValueError("albedo must lie in [0, 1]")
        if s.min() < 0.0:
            raise ValueError("shading must be non-negative")
        for name, arr in (("albedo", a), ("shading", s), ("residual", r)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.albedo.shape

    def save(self, directory, names=TRIPLET_FILES) -> None:
        for name, arr in zip(names, (self.albedo, self.shading, self.residual)):
            save_pfm(FloatBuffer(arr), Path(directory) / name)

    @classmethod
    def load(cls, directory, names=TRIPLET_FILES) -> "IntrinsicTriplet":
        a, s, r = (load_pfm(Path(directory) / n).data for n in names)
        return cls(a, s, r)


PASS_NAMES = (
    "diffuse_color",
    "diffuse_direct",
    "diffuse_indirect",
    "glossy_color",
    "glossy_direct",
    "glossy_indirect",
    "transmission_color",
    "transmission_direct",
    "transmission_indirect",
    "volume_direct",
    "volume_indirect",
    "emission",
)


@dataclass(frozen=True, eq=False)
class RenderPasses:
    """Named HDR buffers with Cycles pass semantics; missing passes default to zero."""

    diffuse_color: np.ndarray
    diffuse_direct: np.ndarray | None = None
    diffuse_indirect: np.ndarray | None = None
    glossy_color: np.ndarray | None = None
    glossy_direct: np.ndarray | None = None
    glossy_indirect: np.ndarray | None = None
    transmission_color: np.ndarray | None = None
    transmission_direct: np.ndarray | None = None
    transmission_indirect: np.ndarray | None = None
    volume_direct: np.ndarray | None = None
    volume_indirect: np.ndarray | None = None
    emission: np.ndarray | None = None

    def __post_init__(self):
        ref = _check_rgb("diffuse_color", self.diffuse_color)
        for f in fields(self):
            arr = getattr(self, f.name)
            arr = np.zeros_like(ref) if arr is None else _check_rgb(f.name, arr)
            if arr.shape != ref.shape:
                raise ValueError(f"pass {f.name} has shape {arr.shape}, expected {ref.shape}")
            if arr.min() < 0.0:
                raise ValueError(f"pass {f.name} has negative values")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, f.name, arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.diffuse_color.shape

    def as_dict(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PASS_NAMES}


@dataclass(frozen=True, eq=False)
class ConditioningStack:
    """9 x H x W stack, channel order [A ; S ; R]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[0] != 9:
            raise ValueError(f"conditioning must be 9 x H x W, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("conditioning contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("conditioning channels must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def albedo(self) -> np.ndarray:
        return self.data[0:3]

    @property
    def shading(self) -> np.ndarray:
        return self.data[3:6]

    @property
    def residual(self) -> np.ndarray:
        return self.data[6:9]

    def save(self, directory, names=CONDITIONING_FILES) -> None:
        for i, name in enumerate(names):
            save_pfm(FloatBuffer(self.data[3 * i : 3 * i + 3]), Path(directory) / name)

    @classmethod
    def load(cls, directory, names=CONDITIONING_FILES) -> "ConditioningStack":
        return cls(np.concatenate([load_pfm(Path(directory) / n).data for n in names]))


def compose_image(triplet: IntrinsicTriplet) -> ImageRGB:
    """I = A * S + R, unclipped linear radiance."""
    return ImageRGB(triplet.albedo * triplet.shading + triplet.residual, LINEAR)


def compose_array(albedo, shading, residual) -> np.ndarray:
    return np.asarray(albedo, np.float32) * np.asarray(shading, np.float32) + np.asarray(residual, np.float32)


def passes_to_intrinsics(passes: RenderPasses) -> IntrinsicTriplet:
    a = np.clip(passes.diffuse_color, 0.0, 1.0)
    s = np.maximum(passes.diffuse_direct + passes.diffuse_indirect, 0.0)
    r = (
        passes.glossy_color * (passes.glossy_direct + passes.glossy_indirect)
        + passes.transmission_color * (passes.transmission_direct + passes.transmission_indirect)
        + (passes.volume_direct + passes.volume_indirect)
        + passes.emission
    )
    return IntrinsicTriplet(a, s, np.maximum(r, 0.0))


def percentile_index(n: int, p: float) -> int:
    """Index of the inclusive p-quantile in an ascending sort of n entries."""
    if n <= 0:
        raise ValueError("percentile of an empty buffer")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"percentile fraction must be in (0, 1], got {p}")
    # round() guards against 0.98 * n landing a hair above an integer.
    return max(math.ceil(round(p * n, 9)) - 1, 0)


def percentile(values: np.ndarray, p: float = 0.98) -> float:
    flat = np.asarray(values, dtype=np.float32).ravel()
    k = percentile_index(flat.size, p)
    return float(np.partition(flat, k)[k])


def percentile_rescale(shading: np.ndarray, residual: np.ndarray, p: float = 0.98, eps: float = DEFAULT_EPS):
    """Jointly normalise S and R by tau = max(p98(S), p98(R), eps).

    Returns (S', R', tau).
    """
    s = np.asarray(shading, dtype=np.float32)
    r = np.asarray(residual, dtype=np.float32)
    if s.size == 0 or r.size == 0:
        raise ValueError("percentile_rescale on an empty buffer")
    tau = np.float32(max(percentile(s, p), percentile(r, p), eps))
    s_out = np.clip(s, 0.0, tau) / tau
    r_out = np.clip(r, 0.0, tau) / tau
    return s_out.astype(np.float32), r_out.astype(np.float32), float(tau)


def rescale_triplet(triplet: IntrinsicTriplet, p: float = 0.98, eps: float = DEFAULT_EPS) -> IntrinsicTriplet:
    s, r, _ = percentile_rescale(triplet.shading, triplet.residual, p, eps)
    return IntrinsicTriplet(triplet.albedo, s, r)


def build_conditioning(triplet: IntrinsicTriplet) -> ConditioningStack:
    for name, arr in (("shading", triplet.shading), ("residual", triplet.residual)):
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"{name} outside [0, 1]; apply percentile_rescale first")
    return ConditioningStack(np.concatenate([triplet.albedo, triplet.shading, triplet.residual], axis=0))


def conditioning_from_passes(passes: RenderPasses, p: float = 0.98, eps: float = DEFAULT_EPS) -> ConditioningStack:
    """Renderer passes -> rescaled conditioning stack (the inference path)."""
    return build_conditioning(rescale_triplet(passes_to_intrinsics(passes), p, eps))


def save_passes(passes: RenderPasses, directory) -> None:
    """One <pass_name>.pfm per pass."""
    Path(directory).mkdir(parents=True, exist_ok=True)
    for name, arr in passes.as_dict().items():
        save_pfm(FloatBuffer(arr), Path(directory) / f"{name}.pfm")


def load_passes(directory) -> RenderPasses:
    """Read <pass_name>.pfm files; diffuse_color is required, absent passes are zero."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"pass directory {directory} does not exist")
    found = {n: directory / f"{n}.pfm" for n in PASS_NAMES if (directory / f"{n}.pfm").exists()}
    if "diffuse_color" not in found:
        raise FileNotFoundError(f"missing pass files in {directory}: diffuse_color.pfm is required")
    return RenderPasses(**{n: load_pfm(p).data for n, p in found.items()})
