"""Command-line entry point: intrelight <command> [options].

Exit codes: 0 success, 1 user error (bad config, paths, inputs), 2 internal error.
"""
from __future__ import annotations

import os

# PIXL_THREADS caps BLAS worker threads; it only takes effect before numpy loads
_threads = os.environ.get("PIXL_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
import traceback  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from .augment import AugmentConfig, RngStream, augment_array  # noqa: E402
from .autodiff import CheckpointError, no_grad  # noqa: E402
from .config import RunConfig  # noqa: E402
from .dataset import DatasetError, generate_dataset, load_dataset  # noqa: E402
from .imgcore import SRGB, ImageFormatError, ImageRGB, load_png, save_png, save_png_array  # noqa: E402
from .intrinsics import (  # noqa: E402
    ConditioningStack,
    build_conditioning,
    conditioning_from_passes,
    load_passes,
    passes_to_intrinsics,
    rescale_triplet,
)
from .metrics import evaluate, write_report  # noqa: E402
from .scenegen import build_scene, read_lights_file, read_scene_file, render_passes  # noqa: E402
from .train import NonFiniteLoss, load_checkpoint, train  # noqa: E402

USER_ERRORS = (ValueError, FileNotFoundError, NotADirectoryError, IsADirectoryError, PermissionError,
               KeyError, DatasetError, CheckpointError, ImageFormatError)


class UserError(Exception):
    pass


def cmd_gen_data(args) -> int:
    out = generate_dataset(args.out, args.scenes, args.conditions, args.seed, args.size, args.holdout, args.force)
    print(f"wrote {args.scenes} scenes x {args.conditions} conditions to {out}")
    return 0


def cmd_train(args) -> int:
    run = RunConfig.load(args.config)
    overrides = {}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
        overrides["warmup_steps"] = min(run.train.warmup_steps, args.iterations - 1)
    run = run.with_overrides(**overrides) if overrides else run
    data = args.data or run.dataset
    if not data:
        raise UserError("no dataset given (config 'dataset' or --data)")
    out = Path(args.out or run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run.save(out / "config.json")
    dataset = load_dataset(data, "train")
    state = None
    if args.resume:
        state, _ = load_checkpoint(args.resume, run.model)

    def progress(row):
        if row["step"] % max(1, args.print_every) == 0 or row["step"] == run.train.iterations:
            print(f"step {row['step']:>6}  loss {row['loss']:.5f}  grad {row['grad_norm']:.3f}  lr {row['lr']:.2e}",
                  flush=True)

    state, _ = train(dataset, run.model, run.train, out, state=state, progress=progress)
    print(f"checkpoint: {out / 'final.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    state, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data, args.split)
    report = evaluate(state.model, dataset, timing=not args.no_timing)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    csv_path, _ = write_report(report, out)
    print(report.summary())
    print(f"report: {csv_path}")
    return 0


def cmd_relight(args) -> int:
    state, _ = load_checkpoint(args.checkpoint)
    source = load_png(args.source)
    desc = read_scene_file(args.scene)
    lights = read_lights_file(args.lights)
    if (desc.height, desc.width) != source.data.shape[1:]:
        raise UserError(f"scene resolution {desc.height}x{desc.width} does not match source {source.data.shape[1:]}")
    # only the authored-light conditioning and the source enter the network
    cond = conditioning_from_passes(render_passes(build_scene(desc), lights))
    with no_grad():
        out = state.model(source.data, cond.data).data[0]
    save_png(ImageRGB(out, SRGB), args.out)
    print(f"wrote {args.out}")
    return 0


def _grid(rows: list[np.ndarray]) -> np.ndarray:
    """Stack rows of 3 x H x W images into one 3 x (rH) x (cW) image."""
    return np.concatenate([np.concatenate(r, axis=2) for r in rows], axis=1)


def cmd_augment_preview(args) -> int:
    stack = ConditioningStack.load(args.input)
    cfg = AugmentConfig.from_dict(json.loads(Path(args.augment).read_text())) if args.augment else AugmentConfig()
    stream = RngStream(args.seed)
    before = [stack.albedo, stack.shading, stack.residual]
    rows = [before]
    for i in range(args.samples):
        out, trace = augment_array(stack.data, cfg, stream, i)
        rows.append([out[0:3], out[3:6], out[6:9]])
        print(f"sample {i}: {'clean' if not trace.fired else ', '.join(trace.fired)}")
    save_png_array(np.clip(_grid(rows), 0.0, 1.0), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_compose(args) -> int:
    passes = load_passes(args.passes)
    triplet = passes_to_intrinsics(passes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    triplet.save(out)
    build_conditioning(rescale_triplet(triplet)).save(out)
    print(f"wrote triplet and conditioning to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="intrelight", description="Intrinsic-conditioned relighting toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a paired multi-illumination dataset")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--conditions", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64, help="square image size in pixels")
    p.add_argument("--holdout", type=int, default=0, help="mark the last N scenes as the test split")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train from a run-configuration file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="dataset directory (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--print-every", type=int, default=50)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="scale-corrected PSNR/SSIM on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "test", "all"))
    p.add_argument("--out")
    p.add_argument("--no-timing", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("relight", help="relight a source image under authored lights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--lights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_relight)

    p = sub.add_parser("augment-preview", help="before/after grid of conditioning corruptions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="input", required=True, help="directory with cond_*.pfm files")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--augment", help="JSON file with augmentation overrides")
    p.set_defaults(fn=cmd_augment_preview)

    p = sub.add_parser("compose", help="render passes -> intrinsic triplet + conditioning")
    p.add_argument("--passes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compose)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as err:
        # argparse exits 2 on bad usage; that is a user error here
        return 0 if err.code in (0, None) else 1
    try:
        return args.fn(args)
    except NonFiniteLoss as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (UserError, *USER_ERRORS) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
