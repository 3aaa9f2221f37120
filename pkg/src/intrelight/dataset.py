"""On-disk paired multi-illumination dataset.

Layout::

    DIR/manifest.txt                  key = value summary, one entry per scene
    DIR/scenes/<id>/scene.txt         geometry / material description
    DIR/scenes/<id>/albedo.pfm        A, shared by every condition
    DIR/scenes/<id>/cond_<k>.png      sRGB display image of condition k
    DIR/scenes/<id>/cond_<k>.shading.pfm   raw HDR S
    DIR/scenes/<id>/cond_<k>.residual.pfm  raw HDR R
    DIR/scenes/<id>/cond_<k>.lights.txt    lights of condition k

Shading and residual are stored unscaled; the percentile rescale happens at
load time so the files keep the exact I = A*S + R relation.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imgcore import FloatBuffer, load_pfm, load_png, read_kv, save_pfm, save_png, write_kv
from .intrinsics import IntrinsicTriplet, build_conditioning, rescale_triplet
from .scenegen import (
    build_scene,
    generate_desc,
    read_lights_file,
    render_condition,
    sample_lighting,
    write_lights_file,
    write_scene_file,
)

MANIFEST = "manifest.txt"
FORMAT = "intrelight-dataset"
VERSION = 1


class DatasetError(ValueError):
    pass


def _seed(*words: int) -> int:
    return int(np.random.SeedSequence([w & 0xFFFFFFFF for w in words]).generate_state(1, np.uint64)[0])


def distinct_lighting(seed: int, scene: int, k: int, camera, seen: list, tries: int = 64):
    """Lighting for condition k that differs from every earlier condition of the scene."""
    for attempt in range(tries):
        lights = sample_lighting(_seed(seed, scene, k + 1, attempt), camera)
        if all(lights != other for other in seen):
            return lights
    raise DatasetError(f"could not draw {k + 1} distinct lighting conditions for scene {scene}")


def scene_id(i: int) -> str:
    return f"scene_{i:04d}"


def generate_dataset(out_dir, n_scenes: int, n_conditions: int, seed: int = 0, size: int = 64,
                     holdout: int = 0, force: bool = False) -> Path:
    """Render n_scenes x n_conditions and write them under out_dir.

    The last `holdout` scenes are marked as the test split.
    """
    if n_conditions < 2:
        raise DatasetError("pairing requires >= 2 conditions")
    if n_scenes < 1:
        raise DatasetError("need at least one scene")
    if not 0 <= holdout < n_scenes:
        raise DatasetError(f"holdout={holdout} must leave at least one training scene")
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise DatasetError(f"{out} exists and is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    entries: dict[str, object] = {
        "format": FORMAT,
        "version": VERSION,
        "seed": seed,
        "scenes": n_scenes,
        "conditions": n_conditions,
        "height": size,
        "width": size,
    }
    for i in range(n_scenes):
        sid = scene_id(i)
        sdir = out / "scenes" / sid
        sdir.mkdir(parents=True, exist_ok=True)
        desc = generate_desc(_seed(seed, i, 0), size)
        scene = build_scene(desc)
        write_scene_file(desc, sdir / "scene.txt")
        seen: list = []
        for k in range(n_conditions):
            lights = distinct_lighting(seed, i, k, desc.camera, seen)
            seen.append(lights)
            cond = render_condition(scene, lights)
            if k == 0:
                save_pfm(FloatBuffer(cond.triplet.albedo), sdir / "albedo.pfm")
            save_png(cond.image, sdir / f"cond_{k}.png")
            save_pfm(FloatBuffer(cond.triplet.shading), sdir / f"cond_{k}.shading.pfm")
            save_pfm(FloatBuffer(cond.triplet.residual), sdir / f"cond_{k}.residual.pfm")
            write_lights_file(lights, sdir / f"cond_{k}.lights.txt")
        entries[f"scene.{i}.id"] = sid
        entries[f"scene.{i}.split"] = "test" if i >= n_scenes - holdout else "train"
    write_kv(out / MANIFEST, entries, comment="paired multi-illumination scenes")
    return out


@dataclass(frozen=True, eq=False)
class SceneRecord:
    scene_id: str
    path: Path
    images: np.ndarray  # K x 3 x H x W, sRGB in [0, 1]
    conditioning: np.ndarray  # K x 9 x H x W, rescaled [A; S; R]

    @property
    def n_conditions(self) -> int:
        return len(self.images)


class Dataset:
    """All scenes of one split, held in memory."""

    def __init__(self, scenes: list[SceneRecord], root: Path | None = None, split: str = "all"):
        if not scenes:
            raise DatasetError(f"split {split!r} is empty")
        self.scenes = scenes
        self.root = root
        self.split = split

    def __len__(self) -> int:
        return len(self.scenes)

    @property
    def shape(self) -> tuple[int, int]:
        return self.scenes[0].images.shape[-2:]

    def pairs(self):
        """Every ordered (scene, source, target) triple with source != target."""
        for si, rec in enumerate(self.scenes):
            for a in range(rec.n_conditions):
                for b in range(rec.n_conditions):
                    if a != b:
                        yield si, a, b


def load_scene(sdir: Path, n_conditions: int) -> SceneRecord:
    albedo = load_pfm(sdir / "albedo.pfm").data
    images, conds = [], []
    for k in range(n_conditions):
        images.append(load_png(sdir / f"cond_{k}.png").data)
        triplet = IntrinsicTriplet(
            albedo,
            load_pfm(sdir / f"cond_{k}.shading.pfm").data,
            load_pfm(sdir / f"cond_{k}.residual.pfm").data,
        )
        conds.append(build_conditioning(rescale_triplet(triplet)).data)
    return SceneRecord(sdir.name, sdir, np.stack(images), np.stack(conds))


def load_dataset(root, split: str = "train") -> Dataset:
    """split is 'train', 'test' or 'all'."""
    root = Path(root)
    if not (root / MANIFEST).exists():
        raise DatasetError(f"no {MANIFEST} in {root}")
    man = read_kv(root / MANIFEST)
    if man.get("format") != FORMAT:
        raise DatasetError(f"{root} is not an {FORMAT} directory")
    if int(man.get("version", -1)) != VERSION:
        raise DatasetError(f"dataset version {man.get('version')} unsupported")
    n, k = int(man["scenes"]), int(man["conditions"])
    if k < 2:
        raise DatasetError("pairing requires >= 2 conditions")
    scenes = []
    for i in range(n):
        if split != "all" and man.get(f"scene.{i}.split", "train") != split:
            continue
        scenes.append(load_scene(root / "scenes" / man[f"scene.{i}.id"], k))
    return Dataset(scenes, root, split)


def condition_lights(record: SceneRecord, k: int):
    return read_lights_file(record.path / f"cond_{k}.lights.txt")
