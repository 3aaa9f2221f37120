"""Image containers, colour transfer, resampling and file I/O."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

SRGB = "srgb"
LINEAR = "linear"

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported image files."""


def _frozen_f32(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float32, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FloatBuffer:
    """Generic C x H x W float32 buffer (passes, intrinsics, conditioning)."""

    data: np.ndarray

    def __post_init__(self):
        arr = _frozen_f32(self.data)
        if arr.ndim != 3:
            raise ValueError(f"FloatBuffer expects C x H x W data, got shape {arr.shape}")
        if min(arr.shape) <= 0:
            raise ValueError(f"FloatBuffer dimensions must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("FloatBuffer contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class ImageRGB:
    """3 x H x W float32 image tagged with its colour encoding."""

    data: np.ndarray
    space: str = SRGB

    def __post_init__(self):
        arr = _frozen_f32(self.data)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"ImageRGB expects 3 x H x W data, got shape {arr.shape}")
        if min(arr.shape) <= 0:
            raise ValueError(f"image dimensions must be positive, got {arr.shape}")
        if self.space not in (SRGB, LINEAR):
            raise ValueError(f"unknown colour space {self.space!r}")
        if not np.isfinite(arr).all():
            raise ValueError("image contains non-finite values")
        if self.space == SRGB and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("sRGB-encoded image values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


# ---------------------------------------------------------------------------
# sRGB transfer (IEC 61966-2-1)


def srgb_decode(values: np.ndarray) -> np.ndarray:
    """sRGB code values in [0, 1] -> linear radiance, elementwise."""
    v = np.asarray(values, dtype=np.float64)
    out = np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)
    return out.astype(np.float32)


def srgb_encode(values: np.ndarray) -> np.ndarray:
    """Linear values in [0, 1] -> sRGB code values, elementwise."""
    v = np.asarray(values, dtype=np.float64)
    out = np.where(v <= 0.0031308, v * 12.92, 1.055 * np.power(np.maximum(v, 0.0), 1.0 / 2.4) - 0.055)
    return out.astype(np.float32)


def srgb_to_linear(image: ImageRGB) -> ImageRGB:
    if image.space != SRGB:
        raise ValueError("image is already linear; refusing to decode twice")
    return ImageRGB(srgb_decode(image.data), LINEAR)


def linear_to_srgb(image: ImageRGB) -> ImageRGB:
    if image.space != LINEAR:
        raise ValueError("image is already sRGB-encoded; refusing to encode twice")
    if image.data.min() < 0.0 or image.data.max() > 1.0:
        raise ValueError("linear image must be clipped to [0, 1] before sRGB encoding")
    return ImageRGB(np.clip(srgb_encode(image.data), 0.0, 1.0), SRGB)


# ---------------------------------------------------------------------------
# Resampling


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) bilinear weights, half-pixel centres, edge clamp."""
    if n_in <= 0 or n_out <= 0:
        raise ValueError(f"sizes must be positive, got {n_in} -> {n_out}")
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize_bilinear(buffer: FloatBuffer, new_h: int, new_w: int) -> FloatBuffer:
    if new_h <= 0 or new_w <= 0:
        raise ValueError(f"target size must be positive, got {new_h}x{new_w}")
    if (new_h, new_w) == (buffer.height, buffer.width):
        return FloatBuffer(buffer.data)
    mh = interp_matrix(buffer.height, new_h)
    mw = interp_matrix(buffer.width, new_w)
    out = mh @ buffer.data.astype(np.float64) @ mw.T
    return FloatBuffer(out.astype(np.float32))


def resize_array(arr: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """resize_bilinear for a raw (C, H, W) array."""
    return resize_bilinear(FloatBuffer(arr), new_h, new_w).data


# ---------------------------------------------------------------------------
# PNG (8-bit RGB only)


def _png_header(raw: bytes) -> tuple[int, int]:
    if len(raw) < 33 or raw[:8] != _PNG_SIGNATURE or raw[12:16] != b"IHDR":
        raise ImageFormatError("not a PNG file")
    return raw[24], raw[25]


def load_png(path) -> ImageRGB:
    raw = Path(path).read_bytes()
    bit_depth, colour_type = _png_header(raw)
    if bit_depth != 8:
        raise ImageFormatError(f"unsupported bit depth {bit_depth} (8-bit RGB only)")
    if colour_type != 2:
        raise ImageFormatError(f"unsupported PNG colour type {colour_type} (RGB only)")
    try:
        with Image.open(path) as im:
            im.load()
            codes = np.asarray(im, dtype=np.uint8)
    except OSError as exc:
        raise ImageFormatError(f"cannot decode PNG {path}: {exc}") from exc
    if codes.ndim != 3 or codes.shape[2] != 3:
        raise ImageFormatError(f"non-RGB channel layout {codes.shape}")
    return ImageRGB(codes.transpose(2, 0, 1).astype(np.float32) / 255.0, SRGB)


def to_codes(data: np.ndarray) -> np.ndarray:
    """[0,1] floats -> uint8 with round-half-up."""
    return np.floor(np.asarray(data, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def save_png(image: ImageRGB, path) -> None:
    if not isinstance(image, ImageRGB):
        image = ImageRGB(image)
    if image.space != SRGB:
        raise ValueError("save_png expects an sRGB-encoded image")
    codes = to_codes(image.data).transpose(1, 2, 0)
    Image.fromarray(np.ascontiguousarray(codes)).save(path, format="PNG")


def save_png_array(data: np.ndarray, path) -> None:
    """Validate and write a raw 3 x H x W sRGB array."""
    save_png(ImageRGB(data, SRGB), path)


# ---------------------------------------------------------------------------
# PFM


def _read_token(fh) -> bytes:
    tok = b""
    while True:
        ch = fh.read(1)
        if not ch:
            break
        if ch.isspace():
            if tok:
                break
            continue
        tok += ch
    return tok


def load_pfm(path) -> FloatBuffer:
    with open(path, "rb") as fh:
        magic = _read_token(fh)
        if magic not in (b"PF", b"Pf"):
            raise ImageFormatError(f"bad PFM magic {magic!r}")
        try:
            width = int(_read_token(fh))
            height = int(_read_token(fh))
            scale = float(_read_token(fh))
        except ValueError as exc:
            raise ImageFormatError("malformed PFM header") from exc
        if width <= 0 or height <= 0:
            raise ImageFormatError(f"invalid PFM dimensions {width}x{height}")
        if scale == 0.0:
            raise ImageFormatError("PFM scale must be non-zero")
        channels = 3 if magic == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        payload = fh.read()
    expected = width * height * channels * 4
    if len(payload) != expected:
        raise ImageFormatError(
            f"PFM payload has {len(payload)} bytes, expected {expected} for {width}x{height}x{channels}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width, channels)
    arr = arr[::-1].transpose(2, 0, 1).astype(np.float32)
    return FloatBuffer(arr)


def save_pfm(buffer: FloatBuffer, path) -> None:
    if not isinstance(buffer, FloatBuffer):
        buffer = FloatBuffer(buffer)
    if buffer.channels not in (1, 3):
        raise ValueError(f"PFM stores 1 or 3 channels, got {buffer.channels}; use save_pfm_stack")
    magic = b"PF" if buffer.channels == 3 else b"Pf"
    header = magic + b"\n%d %d\n-1.0\n" % (buffer.width, buffer.height)
    body = buffer.data.transpose(1, 2, 0)[::-1].astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


def save_pfm_stack(buffer: FloatBuffer, directory, names: Sequence[str]) -> list[Path]:
    """Write a 3k-channel buffer as k consecutive 3-channel PFMs named ``names``."""
    if buffer.channels != 3 * len(names):
        raise ValueError(f"{buffer.channels} channels cannot be split into {len(names)} RGB files")
    directory = Path(directory)
    paths = []
    for i, name in enumerate(names):
        p = directory / name
        save_pfm(FloatBuffer(buffer.data[3 * i : 3 * i + 3]), p)
        paths.append(p)
    return paths


def load_pfm_stack(directory, names: Sequence[str]) -> FloatBuffer:
    parts = [load_pfm(Path(directory) / n).data for n in names]
    shapes = {p.shape[1:] for p in parts}
    if len(shapes) != 1:
        raise ImageFormatError(f"stack members disagree on size: {sorted(shapes)}")
    return FloatBuffer(np.concatenate(parts, axis=0))


# ---------------------------------------------------------------------------
# Key-value manifests

_KEY_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


def write_kv(path, entries: Mapping[str, object], comment: str | None = None) -> None:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    for key, value in entries.items():
        if not _KEY_RE.match(key):
            raise ValueError(f"invalid manifest key {key!r}")
        if isinstance(value, (list, tuple, np.ndarray)):
            value = " ".join(_fmt(v) for v in value)
        else:
            value = _fmt(value)
        if "\n" in value:
            raise ValueError(f"manifest value for {key!r} spans lines")
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_kv(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY_RE.match(key):
            raise ValueError(f"{path}:{lineno}: invalid key {key!r}")
        if key in entries:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def parse_floats(value: str, n: int | None = None) -> tuple[float, ...]:
    out = tuple(float(v) for v in value.split())
    if n is not None and len(out) != n:
        raise ValueError(f"expected {n} numbers, got {value!r}")
    if not all(math.isfinite(v) for v in out):
        raise ValueError(f"non-finite number in {value!r}")
    return out

