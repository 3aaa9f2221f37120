"""Procedural multi-illumination scenes with exact intrinsic passes.

A scene is a ground plane plus a handful of spheres and yaw-rotated boxes seen
through a pinhole camera.  Shading is direct-only (Lambert diffuse plus a
normalised Blinn-Phong lobe for the glossy pass) with binary shadow rays and
an optional constant ambient term, so the intrinsic decomposition of every
rendered image is known exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .imgcore import ImageRGB, LINEAR, linear_to_srgb, parse_floats, read_kv, write_kv
from .intrinsics import IntrinsicTriplet, RenderPasses, passes_to_intrinsics, rescale_triplet

LIGHT_KINDS = ("point", "directional", "ambient")
TEXTURES = ("solid", "checker", "stripes", "noise")
SHAPES = ("plane", "sphere", "box")

SHADOW_OFFSET = 1e-3
_T_EPS = 1e-6

PRESETS = (
    "cool_side_flash",
    "warm_overhead_flash",
    "dim_overhead_spot",
    "soft_frontal_sun",
    "warm_interior_sun",
)


def kelvin_to_rgb(kelvin: float) -> tuple[float, float, float]:
    """Approximate blackbody colour, normalised so the largest channel is 1."""
    t = kelvin / 100.0
    if t <= 66:
        r = 255.0
        g = 99.4708025861 * math.log(t) - 161.1195681661
        b = 0.0 if t <= 19 else 138.5177312231 * math.log(t - 10) - 305.0447927307
    else:
        r = 329.698727446 * (t - 60) ** -0.1332047592
        g = 288.1221695283 * (t - 60) ** -0.0755148492
        b = 255.0
    rgb = np.clip(np.array([r, g, b]), 1.0, 255.0)
    rgb = rgb / rgb.max()
    return tuple(float(c) for c in rgb)


# ---------------------------------------------------------------------------
# descriptions


@dataclass(frozen=True)
class Material:
    color: tuple[float, float, float] = (0.7, 0.7, 0.7)
    color2: tuple[float, float, float] = (0.3, 0.3, 0.3)
    texture: str = "solid"
    texture_scale: float = 1.0
    texture_seed: int = 0
    specular_tint: tuple[float, float, float] = (0.04, 0.04, 0.04)
    shininess: float = 32.0

    def __post_init__(self):
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}")
        for name in ("color", "color2", "specular_tint"):
            v = getattr(self, name)
            if len(v) != 3 or min(v) < 0.0 or max(v) > 1.0:
                raise ValueError(f"{name} must be an RGB triple in [0, 1], got {v}")
        if self.shininess < 1.0:
            raise ValueError("shininess must be >= 1")


@dataclass(frozen=True)
class Primitive:
    shape: str
    material: Material = field(default_factory=Material)
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0  # sphere
    half_size: tuple[float, float, float] = (0.5, 0.5, 0.5)  # box
    yaw: float = 0.0  # box rotation about +y, radians

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.shape == "sphere" and self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        if self.shape == "box" and min(self.half_size) <= 0:
            raise ValueError("box half sizes must be positive")


@dataclass(frozen=True)
class Camera:
    position: tuple[float, float, float] = (0.0, 3.0, 5.0)
    target: tuple[float, float, float] = (0.0, 0.3, 0.0)
    fov_deg: float = 45.0

    def basis(self):
        eye = np.asarray(self.position, np.float64)
        fwd = np.asarray(self.target, np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return eye, fwd, right, up


@dataclass(frozen=True)
class SceneDesc:
    primitives: tuple[Primitive, ...]
    camera: Camera = field(default_factory=Camera)
    height: int = 128
    width: int = 128

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")
        if self.height <= 0 or self.width <= 0:
            raise ValueError("resolution must be positive")


@dataclass(frozen=True)
class LightSpec:
    kind: str
    position: tuple[float, float, float] | None = None
    direction: tuple[float, float, float] | None = None  # direction of travel
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    intensity: float = 1.0

    def __post_init__(self):
        if self.kind not in LIGHT_KINDS:
            raise ValueError(f"unknown light kind {self.kind!r}")
        if len(self.color) != 3 or min(self.color) < 0 or not all(map(math.isfinite, self.color)):
            raise ValueError(f"light colour must be a finite non-negative RGB triple, got {self.color}")
        if not (math.isfinite(self.intensity) and self.intensity >= 0):
            raise ValueError(f"light intensity must be finite and >= 0, got {self.intensity}")
        if self.kind == "point" and self.position is None:
            raise ValueError("point light needs a position")
        if self.kind == "directional":
            if self.direction is None:
                raise ValueError("directional light needs a direction")
            n = math.sqrt(sum(c * c for c in self.direction))
            if n == 0:
                raise ValueError("zero direction")
            object.__setattr__(self, "direction", tuple(float(c) / n for c in self.direction))

    def scaled(self, factor: float) -> "LightSpec":
        return replace(self, intensity=self.intensity * factor)


# ---------------------------------------------------------------------------
# the per-pixel scene


@dataclass(frozen=True, eq=False)
class Scene:
    """Rasterised geometry/material buffers of a SceneDesc (H x W x ... float32)."""

    desc: SceneDesc
    position: np.ndarray  # H x W x 3
    normal: np.ndarray  # H x W x 3
    albedo: np.ndarray  # 3 x H x W
    specular_tint: np.ndarray  # 3 x H x W
    shininess: np.ndarray  # H x W
    object_id: np.ndarray  # H x W, -1 = background

    @property
    def height(self) -> int:
        return self.desc.height

    @property
    def width(self) -> int:
        return self.desc.width


def _rot_y(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def intersect(prim: Primitive, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Nearest positive hit distance along each ray (inf where missed)."""
    n = dirs.shape[0]
    t = np.full(n, np.inf)
    if prim.shape == "plane":
        dy = dirs[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            tp = -(origins[:, 1] - prim.center[1]) / dy
        ok = (np.abs(dy) > 1e-12) & (tp > _T_EPS)
        t[ok] = tp[ok]
    elif prim.shape == "sphere":
        oc = origins - np.asarray(prim.center)
        b = np.einsum("ij,ij->i", oc, dirs)
        c = np.einsum("ij,ij->i", oc, oc) - prim.radius**2
        a = np.einsum("ij,ij->i", dirs, dirs)
        disc = b * b - a * c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = (-b - sq) / a
        t1 = (-b + sq) / a
        tt = np.where(t0 > _T_EPS, t0, np.where(t1 > _T_EPS, t1, np.inf))
        t = np.where(hit, tt, np.inf)
    else:
        rot = _rot_y(prim.yaw)
        lo_ = (origins - np.asarray(prim.center)) @ rot
        ld = dirs @ rot
        half = np.asarray(prim.half_size)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / ld
            ta = (-half - lo_) * inv
            tb = (half - lo_) * inv
        tmin = np.nanmax(np.minimum(ta, tb), axis=1)
        tmax = np.nanmin(np.maximum(ta, tb), axis=1)
        hit = (tmax >= tmin) & (tmax > _T_EPS)
        tt = np.where(tmin > _T_EPS, tmin, tmax)
        t = np.where(hit, tt, np.inf)
    return t


def _normal_and_uv(prim: Primitive, points: np.ndarray):
    if prim.shape == "plane":
        normal = np.tile([0.0, 1.0, 0.0], (len(points), 1))
        uv = points[:, [0, 2]]
    elif prim.shape == "sphere":
        d = points - np.asarray(prim.center)
        normal = d / np.linalg.norm(d, axis=1, keepdims=True)
        u = np.arctan2(normal[:, 2], normal[:, 0]) / (2 * math.pi) + 0.5
        v = np.arccos(np.clip(normal[:, 1], -1.0, 1.0)) / math.pi
        circ = 2 * math.pi * prim.radius
        uv = np.stack([u * circ, v * circ / 2], axis=1)
    else:
        rot = _rot_y(prim.yaw)
        half = np.asarray(prim.half_size)
        local = (points - np.asarray(prim.center)) @ rot
        rel = np.abs(local) / half
        axis = np.argmax(rel, axis=1)
        nl = np.zeros_like(local)
        nl[np.arange(len(local)), axis] = np.sign(local[np.arange(len(local)), axis])
        normal = nl @ rot.T
        others = np.array([[1, 2], [0, 2], [0, 1]])[axis]
        rows = np.arange(len(local))[:, None]
        uv = local[rows, others] + half[others]
    return normal, uv


def _value_noise(uv: np.ndarray, seed: int, size: int = 16) -> np.ndarray:
    lattice = np.random.default_rng(seed).random((size, size))
    x = np.mod(uv[:, 0], size)
    y = np.mod(uv[:, 1], size)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx = x - x0
    fy = y - y0
    fx = fx * fx * (3 - 2 * fx)
    fy = fy * fy * (3 - 2 * fy)
    x1 = (x0 + 1) % size
    y1 = (y0 + 1) % size
    top = lattice[y0, x0] * (1 - fx) + lattice[y0, x1] * fx
    bot = lattice[y1, x0] * (1 - fx) + lattice[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def texture_albedo(mat: Material, uv: np.ndarray) -> np.ndarray:
    c1 = np.asarray(mat.color)
    c2 = np.asarray(mat.color2)
    s = uv * mat.texture_scale
    if mat.texture == "solid":
        t = np.zeros(len(uv))
    elif mat.texture == "checker":
        t = (np.floor(s[:, 0]) + np.floor(s[:, 1])) % 2
    elif mat.texture == "stripes":
        t = np.floor(s[:, 0] + 0.35 * s[:, 1]) % 2
    else:
        t = _value_noise(s * 2.0, mat.texture_seed)
        t = t + 0.5 * _value_noise(s * 6.0, mat.texture_seed + 1)
        t = np.clip(t / 1.5, 0.0, 1.0)
    return c1[None] * (1 - t[:, None]) + c2[None] * t[:, None]


def camera_rays(camera: Camera, height: int, width: int):
    eye, fwd, right, up = camera.basis()
    tan_half = math.tan(math.radians(camera.fov_deg) / 2)
    aspect = width / height
    ys = (1 - 2 * (np.arange(height) + 0.5) / height) * tan_half
    xs = (2 * (np.arange(width) + 0.5) / width - 1) * tan_half * aspect
    d = fwd[None, None] + xs[None, :, None] * right[None, None] + ys[:, None, None] * up[None, None]
    d = d.reshape(-1, 3)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return eye, d


def build_scene(desc: SceneDesc) -> Scene:
    h, w = desc.height, desc.width
    eye, dirs = camera_rays(desc.camera, h, w)
    origins = np.broadcast_to(eye, dirs.shape)
    best_t = np.full(len(dirs), np.inf)
    best_id = np.full(len(dirs), -1)
    for i, prim in enumerate(desc.primitives):
        t = intersect(prim, origins, dirs)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_id[closer] = i
    n = len(dirs)
    pos = np.zeros((n, 3))
    nrm = np.tile([0.0, 0.0, 1.0], (n, 1))
    alb = np.zeros((n, 3))
    tint = np.zeros((n, 3))
    shin = np.ones(n)
    for i, prim in enumerate(desc.primitives):
        sel = best_id == i
        if not sel.any():
            continue
        p = eye + dirs[sel] * best_t[sel, None]
        nn, uv = _normal_and_uv(prim, p)
        pos[sel] = p
        nrm[sel] = nn
        alb[sel] = texture_albedo(prim.material, uv)
        tint[sel] = prim.material.specular_tint
        shin[sel] = prim.material.shininess
    return Scene(
        desc=desc,
        position=pos.reshape(h, w, 3).astype(np.float32),
        normal=nrm.reshape(h, w, 3).astype(np.float32),
        albedo=np.clip(alb, 0, 1).reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32),
        specular_tint=tint.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32),
        shininess=shin.reshape(h, w).astype(np.float32),
        object_id=best_id.reshape(h, w),
    )


# ---------------------------------------------------------------------------
# procedural generation


def _random_material(rng: np.random.Generator, ground: bool = False) -> Material:
    base = rng.uniform(0.15, 0.9, 3)
    if ground:
        base = base * 0.5 + 0.35 * rng.uniform(0.5, 1.0)
    alt = np.clip(base * rng.uniform(0.3, 0.7) + rng.uniform(-0.1, 0.1, 3), 0.05, 0.95)
    texture = TEXTURES[int(rng.integers(1, 4))] if ground else TEXTURES[int(rng.integers(0, 4))]
    metallic = rng.random() < 0.25
    if metallic:
        tint = np.clip(base * rng.uniform(0.6, 1.0), 0, 1)
        shin = float(rng.uniform(40, 160))
    else:
        tint = np.full(3, rng.uniform(0.02, 0.35))
        shin = float(rng.uniform(8, 96))
    return Material(
        color=tuple(np.clip(base, 0.05, 0.95).round(4)),
        color2=tuple(alt.round(4)),
        texture=texture,
        texture_scale=float(rng.uniform(1.0, 4.0) if not ground else rng.uniform(0.8, 2.5)),
        texture_seed=int(rng.integers(0, 2**31)),
        specular_tint=tuple(tint.round(4)),
        shininess=round(shin, 3),
    )


def generate_desc(seed: int, height: int = 128, width: int | None = None) -> SceneDesc:
    width = height if width is None else width
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5CE4E])
    prims = [Primitive("plane", _random_material(rng, ground=True))]
    n_obj = int(rng.integers(1, 6))
    for _ in range(n_obj):
        r = math.sqrt(rng.uniform(0, 1)) * 1.8
        a = rng.uniform(0, 2 * math.pi)
        x, z = r * math.cos(a), r * math.sin(a)
        mat = _random_material(rng)
        if rng.random() < 0.55:
            rad = float(rng.uniform(0.3, 0.8))
            prims.append(Primitive("sphere", mat, center=(x, rad, z), radius=rad))
        else:
            hs = tuple(float(v) for v in rng.uniform(0.2, 0.6, 3))
            prims.append(
                Primitive("box", mat, center=(x, hs[1], z), half_size=hs, yaw=float(rng.uniform(0, math.pi)))
            )
    dist = rng.uniform(4.5, 6.0)
    elev = math.radians(rng.uniform(35, 55))
    azim = rng.uniform(0, 2 * math.pi)
    cam = Camera(
        position=(dist * math.cos(elev) * math.sin(azim), dist * math.sin(elev), dist * math.cos(elev) * math.cos(azim)),
        target=(0.0, 0.3, 0.0),
        fov_deg=float(rng.uniform(40, 50)),
    )
    return SceneDesc(tuple(prims), cam, height, width)


def generate_scene(seed: int, height: int = 128, width: int | None = None) -> Scene:
    return build_scene(generate_desc(seed, height, width))


def _camera_azimuth(camera: Camera | None) -> float:
    if camera is None:
        return 0.0
    x, _, z = camera.position
    return math.atan2(x, z)


def _point_at(azim: float, elev_deg: float, dist: float, height_offset: float = 0.0):
    e = math.radians(elev_deg)
    return (
        dist * math.cos(e) * math.sin(azim),
        dist * math.sin(e) + height_offset,
        dist * math.cos(e) * math.cos(azim),
    )


def _dir_from(azim: float, elev_deg: float):
    x, y, z = _point_at(azim, elev_deg, 1.0)
    return (-x, -y, -z)


def preset_lighting(name: str, camera: Camera | None = None) -> list[LightSpec]:
    """The five named authoring presets; placement relative to the camera."""
    az = _camera_azimuth(camera)
    if name == "cool_side_flash":
        pos = _point_at(az + math.pi / 2, 25, 3.5)
        return [LightSpec("point", position=pos, color=kelvin_to_rgb(7500), intensity=1.3 * 3.5**2)]
    if name == "warm_overhead_flash":
        return [LightSpec("point", position=(0.0, 3.5, 0.0), color=kelvin_to_rgb(3200), intensity=1.2 * 3.2**2)]
    if name == "dim_overhead_spot":
        pos = (0.4, 2.8, 0.3)
        return [LightSpec("point", position=pos, color=kelvin_to_rgb(4200), intensity=0.35 * 2.5**2)]
    if name == "soft_frontal_sun":
        return [LightSpec("directional", direction=_dir_from(az, 40), color=kelvin_to_rgb(5200), intensity=0.9)]
    if name == "warm_interior_sun":
        return [
            LightSpec("directional", direction=_dir_from(az - 1.2, 22), color=kelvin_to_rgb(3000), intensity=1.1),
            LightSpec("ambient", color=kelvin_to_rgb(3600), intensity=0.08),
        ]
    raise KeyError(f"unknown preset {name!r}; choose from {PRESETS}")


POINT_IRRADIANCE = (0.5, 1.5)
DIRECTIONAL_INTENSITY = (0.5, 1.3)
AMBIENT_INTENSITY = (0.03, 0.2)


def sample_lighting(seed: int, camera: Camera | None = None, preset_prob: float = 0.2) -> list[LightSpec]:
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x11647])
    if rng.random() < preset_prob:
        return preset_lighting(PRESETS[int(rng.integers(len(PRESETS)))], camera)
    n = int(rng.integers(1, 4))
    lights: list[LightSpec] = []
    have_ambient = False
    for i in range(n):
        colour = kelvin_to_rgb(float(rng.uniform(2700, 7500)))
        u = rng.random()
        if i > 0 and u < 0.2 and not have_ambient:
            have_ambient = True
            lights.append(LightSpec("ambient", color=colour, intensity=float(rng.uniform(*AMBIENT_INTENSITY))))
        elif u < 0.6:
            dist = float(rng.uniform(2.5, 5.0))
            pos = _point_at(float(rng.uniform(0, 2 * math.pi)), float(rng.uniform(25, 80)), dist)
            irr = float(rng.uniform(*POINT_IRRADIANCE)) / n**0.5
            lights.append(LightSpec("point", position=pos, color=colour, intensity=irr * dist**2))
        else:
            d = _dir_from(float(rng.uniform(0, 2 * math.pi)), float(rng.uniform(20, 85)))
            inten = float(rng.uniform(*DIRECTIONAL_INTENSITY)) / n**0.5
            lights.append(LightSpec("directional", direction=d, color=colour, intensity=inten))
    return lights


# ---------------------------------------------------------------------------
# rendering


def _occluded(desc: SceneDesc, origins: np.ndarray, dirs: np.ndarray, t_max: np.ndarray) -> np.ndarray:
    blocked = np.zeros(len(dirs), dtype=bool)
    for prim in desc.primitives:
        t = intersect(prim, origins, dirs)
        blocked |= t < t_max
    return blocked


def light_terms(scene: Scene, light: LightSpec):
    """Per-pixel (irradiance E, n.l, n.h, visibility) for a non-ambient light (float64, flattened)."""
    p = scene.position.reshape(-1, 3).astype(np.float64)
    n = scene.normal.reshape(-1, 3).astype(np.float64)
    eye = np.asarray(scene.desc.camera.position, np.float64)
    colour = np.asarray(light.color) * light.intensity
    if light.kind == "point":
        to_l = np.asarray(light.position) - p
        dist2 = np.einsum("ij,ij->i", to_l, to_l)
        dist = np.sqrt(dist2)
        ldir = to_l / dist[:, None]
        irr = colour[None] / dist2[:, None]
        t_max = dist
    else:
        ldir = np.broadcast_to(-np.asarray(light.direction), p.shape)
        irr = np.broadcast_to(colour, p.shape)
        t_max = np.full(len(p), np.inf)
    ndl = np.maximum(np.einsum("ij,ij->i", n, ldir), 0.0)
    v = eye - p
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    hvec = ldir + v
    hvec /= np.maximum(np.linalg.norm(hvec, axis=1, keepdims=True), 1e-12)
    ndh = np.maximum(np.einsum("ij,ij->i", n, hvec), 0.0)
    vis = np.zeros(len(p))
    lit = (ndl > 0) & (scene.object_id.ravel() >= 0)
    if lit.any():
        origins = p[lit] + n[lit] * SHADOW_OFFSET
        vis[lit] = ~_occluded(scene.desc, origins, ldir[lit], t_max[lit])
    return irr, ndl, ndh, vis


@dataclass(frozen=True, eq=False)
class RenderResult:
    passes: RenderPasses
    beauty: np.ndarray  # 3 x H x W linear, unclipped, accumulated independently of the passes


def render(scene: Scene, lights: Sequence[LightSpec]) -> RenderResult:
    if not lights:
        raise ValueError("at least one light is required")
    h, w = scene.height, scene.width
    npx = h * w
    shin = scene.shininess.ravel().astype(np.float64)
    alb = scene.albedo.reshape(3, -1).T.astype(np.float64)
    tint = scene.specular_tint.reshape(3, -1).T.astype(np.float64)
    valid = (scene.object_id.ravel() >= 0)[:, None]
    d_direct = np.zeros((npx, 3))
    d_indirect = np.zeros((npx, 3))
    g_direct = np.zeros((npx, 3))
    beauty = np.zeros((npx, 3))
    norm = (shin + 8.0) / (8.0 * math.pi)
    for light in lights:
        if light.kind == "ambient":
            amb = np.asarray(light.color) * light.intensity * valid
            d_indirect += amb
            beauty += alb * amb
            continue
        irr, ndl, ndh, vis = light_terms(scene, light)
        diff = irr * (vis * ndl)[:, None]
        spec = irr * (vis * ndl * norm * np.power(ndh, shin))[:, None]
        d_direct += diff
        g_direct += spec
        beauty += alb * diff + tint * spec

    def img(a):
        return a.T.reshape(3, h, w).astype(np.float32)

    passes = RenderPasses(
        diffuse_color=scene.albedo,
        diffuse_direct=img(d_direct),
        diffuse_indirect=img(d_indirect),
        glossy_color=scene.specular_tint,
        glossy_direct=img(g_direct),
    )
    return RenderResult(passes, img(beauty))


def render_passes(scene: Scene, lights: Sequence[LightSpec]) -> RenderPasses:
    return render(scene, lights).passes


@dataclass(frozen=True, eq=False)
class Condition:
    """One lighting condition of a scene: passes, raw HDR triplet, display image."""

    passes: RenderPasses
    triplet: IntrinsicTriplet  # unclipped HDR intrinsics
    linear: np.ndarray  # pre-clip A*S + R
    image: ImageRGB  # sRGB-encoded, clipped


def render_condition(scene: Scene, lights: Sequence[LightSpec]) -> Condition:
    passes = render_passes(scene, lights)
    triplet = passes_to_intrinsics(passes)
    linear = triplet.albedo * triplet.shading + triplet.residual
    image = linear_to_srgb(ImageRGB(np.clip(linear, 0.0, 1.0), LINEAR))
    return Condition(passes, triplet, linear.astype(np.float32), image)


def render_pair(scene: Scene, lights_src: Sequence[LightSpec], lights_tgt: Sequence[LightSpec]):
    """Returns (I_S, I_T, rescaled target triplet)."""
    src = render_condition(scene, lights_src)
    tgt = render_condition(scene, lights_tgt)
    return src.image, tgt.image, rescale_triplet(tgt.triplet)


# ---------------------------------------------------------------------------
# scene / light description files


def _vec(v) -> str:
    return " ".join(repr(float(c)) for c in v)


def write_scene_file(desc: SceneDesc, path) -> None:
    e: dict[str, object] = {
        "resolution": f"{desc.height} {desc.width}",
        "camera.position": _vec(desc.camera.position),
        "camera.target": _vec(desc.camera.target),
        "camera.fov": repr(float(desc.camera.fov_deg)),
    }
    for i, p in enumerate(desc.primitives):
        k = f"object.{i}"
        m = p.material
        e[f"{k}.shape"] = p.shape
        e[f"{k}.center"] = _vec(p.center)
        if p.shape == "sphere":
            e[f"{k}.radius"] = repr(float(p.radius))
        if p.shape == "box":
            e[f"{k}.half_size"] = _vec(p.half_size)
            e[f"{k}.yaw"] = repr(float(p.yaw))
        e[f"{k}.color"] = _vec(m.color)
        e[f"{k}.color2"] = _vec(m.color2)
        e[f"{k}.texture"] = m.texture
        e[f"{k}.texture_scale"] = repr(float(m.texture_scale))
        e[f"{k}.texture_seed"] = str(m.texture_seed)
        e[f"{k}.specular_tint"] = _vec(m.specular_tint)
        e[f"{k}.shininess"] = repr(float(m.shininess))
    write_kv(path, e, comment="scene description")


def read_scene_file(path) -> SceneDesc:
    e = read_kv(path)
    try:
        h, w = (int(v) for v in e.pop("resolution").split())
        cam = Camera(
            position=parse_floats(e.pop("camera.position"), 3),
            target=parse_floats(e.pop("camera.target"), 3),
            fov_deg=float(e.pop("camera.fov")),
        )
        ids = sorted({int(k.split(".")[1]) for k in e if k.startswith("object.")})
        prims = []
        for i in ids:
            k = f"object.{i}"
            mat = Material(
                color=parse_floats(e.pop(f"{k}.color"), 3),
                color2=parse_floats(e.pop(f"{k}.color2", "0 0 0"), 3),
                texture=e.pop(f"{k}.texture", "solid"),
                texture_scale=float(e.pop(f"{k}.texture_scale", "1.0")),
                texture_seed=int(e.pop(f"{k}.texture_seed", "0")),
                specular_tint=parse_floats(e.pop(f"{k}.specular_tint", "0.04 0.04 0.04"), 3),
                shininess=float(e.pop(f"{k}.shininess", "32")),
            )
            shape = e.pop(f"{k}.shape")
            kw: dict = {"center": parse_floats(e.pop(f"{k}.center", "0 0 0"), 3)}
            if shape == "sphere":
                kw["radius"] = float(e.pop(f"{k}.radius"))
            if shape == "box":
                kw["half_size"] = parse_floats(e.pop(f"{k}.half_size"), 3)
                kw["yaw"] = float(e.pop(f"{k}.yaw", "0"))
            prims.append(Primitive(shape, mat, **kw))
    except KeyError as exc:
        raise ValueError(f"{path}: missing key {exc}") from exc
    if e:
        raise ValueError(f"{path}: unknown keys {sorted(e)}")
    return SceneDesc(tuple(prims), cam, h, w)


def write_lights_file(lights: Sequence[LightSpec], path) -> None:
    e: dict[str, object] = {}
    for i, light in enumerate(lights):
        k = f"light.{i}"
        e[f"{k}.kind"] = light.kind
        if light.position is not None:
            e[f"{k}.position"] = _vec(light.position)
        if light.direction is not None:
            e[f"{k}.direction"] = _vec(light.direction)
        e[f"{k}.color"] = _vec(light.color)
        e[f"{k}.intensity"] = repr(float(light.intensity))
    write_kv(path, e, comment="light rig")


def read_lights_file(path) -> list[LightSpec]:
    e = read_kv(path)
    ids = sorted({int(k.split(".")[1]) for k in e if k.startswith("light.")})
    lights = []
    try:
        for i in ids:
            k = f"light.{i}"
            pos = e.pop(f"{k}.position", None)
            d = e.pop(f"{k}.direction", None)
            lights.append(
                LightSpec(
                    e.pop(f"{k}.kind"),
                    position=parse_floats(pos, 3) if pos else None,
                    direction=parse_floats(d, 3) if d else None,
                    color=parse_floats(e.pop(f"{k}.color", "1 1 1"), 3),
                    intensity=float(e.pop(f"{k}.intensity", "1")),
                )
            )
    except KeyError as exc:
        raise ValueError(f"{path}: missing key {exc}") from exc
    if e:
        raise ValueError(f"{path}: unknown keys {sorted(e)}")
    if not lights:
        raise ValueError(f"{path}: no lights defined")
    return lights

