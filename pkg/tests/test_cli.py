import csv
import json

import numpy as np
import pytest

from intrelight import cli
from intrelight.config import RunConfig
from intrelight.imgcore import load_pfm, load_png
from intrelight.intrinsics import PASS_NAMES, RenderPasses, load_passes, passes_to_intrinsics, save_passes
from intrelight.model import ModelConfig
from intrelight.train import TrainConfig

SMALL = {"d": 32, "L": 2, "heads": 2, "p": 8, "n_registers": 2, "readout_indices": [0, 1, 1, 1], "head_width": 16}


def _files(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, tiny_root):
    out = tmp_path_factory.mktemp("run")
    cfg = {"model": SMALL, "train": {"iterations": 3, "batch_size": 2, "warmup_steps": 1}, "dataset": str(tiny_root),
           "out_dir": str(out / "train")}
    (out / "run.json").write_text(json.dumps(cfg))
    assert cli.main(["train", "--config", str(out / "run.json"), "--iterations", "1"]) == 0
    return out


# -- gen-data -----------------------------------------------------------------


def test_gen_data_file_counts_and_determinism(tmp_path):
    args = ["gen-data", "--scenes", "2", "--conditions", "3", "--seed", "9", "--size", "16"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    a = tmp_path / "a"
    assert len(list(a.glob("scenes/*/cond_*.png"))) == 6
    assert len(list(a.glob("scenes/*/albedo.pfm"))) == 2
    assert (a / "manifest.txt").exists()
    files = _files(a)
    assert files == _files(tmp_path / "b")
    assert all((a / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)


def test_gen_data_errors(tmp_path, capsys):
    assert cli.main(["gen-data", "--scenes", "2", "--conditions", "1", "--out", str(tmp_path / "x")]) == 1
    assert "pairing requires" in capsys.readouterr().err
    full = tmp_path / "full"
    full.mkdir()
    (full / "keep.txt").write_text("x")
    assert cli.main(["gen-data", "--scenes", "1", "--conditions", "2", "--size", "16", "--out", str(full)]) == 1
    assert "not empty" in capsys.readouterr().err
    assert cli.main(["gen-data", "--scenes", "1", "--conditions", "2", "--size", "16", "--out", str(full), "--force"]) == 0


# -- train / eval / relight ----------------------------------------------------


def test_train_writes_checkpoint_and_config(run_dir):
    out = run_dir / "train"
    assert (out / "final.ckpt").exists()
    saved = RunConfig.load(out / "config.json")
    assert saved.model == ModelConfig.from_dict(SMALL)
    assert saved.train.iterations == 1
    assert len((out / "log.csv").read_text().splitlines()) == 2


def test_train_config_errors(tmp_path, tiny_root):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"depth": 3}}))
    assert cli.main(["train", "--config", str(bad)]) == 1
    bad.write_text("{not json")
    assert cli.main(["train", "--config", str(bad)]) == 1
    assert cli.main(["train", "--config", str(tmp_path / "missing.json")]) == 1
    nodata = tmp_path / "nodata.json"
    nodata.write_text(json.dumps({"model": SMALL}))
    assert cli.main(["train", "--config", str(nodata)]) == 1


def test_run_config_rejects_misplaced_sections():
    with pytest.raises(ValueError):
        RunConfig.from_dict({"train": {"augment": {}}})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"optimizer": {}})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"augment": {"p_apply": 2.0}})
    rc = RunConfig.from_dict({"model": SMALL, "train": {"iterations": 4, "warmup_steps": 1}, "augment": {"gamma_p": 0.1}})
    assert RunConfig.from_dict(rc.to_dict()) == rc
    assert rc.augment.gamma_p == 0.1 and rc.train == TrainConfig(iterations=4, warmup_steps=1, augment=rc.augment)


def test_resume_with_mismatched_model_fails(run_dir, tmp_path, tiny_root):
    other = dict(SMALL, n_registers=1)
    cfg = tmp_path / "other.json"
    cfg.write_text(json.dumps({"model": other, "train": {"iterations": 2, "warmup_steps": 0},
                               "dataset": str(tiny_root), "out_dir": str(tmp_path / "o")}))
    assert cli.main(["train", "--config", str(cfg), "--resume", str(run_dir / "train" / "final.ckpt")]) == 1


def test_eval_one_row_per_pair(run_dir, tiny_root, tiny_test):
    out = run_dir / "eval"
    assert cli.main(["eval", "--checkpoint", str(run_dir / "train" / "final.ckpt"), "--data", str(tiny_root),
                     "--out", str(out), "--no-timing"]) == 0
    with open(out / "eval.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(list(tiny_test.pairs())) == 6
    assert {r["scene"] for r in rows} == {tiny_test.scenes[0].scene_id}
    assert (out / "eval_summary.txt").exists()


def test_relight(run_dir, tiny_root):
    sdir = tiny_root / "scenes" / "scene_0000"
    out = run_dir / "relit.png"
    argv = ["relight", "--checkpoint", str(run_dir / "train" / "final.ckpt"), "--source", str(sdir / "cond_0.png"),
            "--scene", str(sdir / "scene.txt"), "--lights", str(sdir / "cond_1.lights.txt"), "--out", str(out)]
    assert cli.main(argv) == 0
    img = load_png(out).data
    assert img.shape == (3, 32, 32) and np.all(np.isfinite(img))
    argv[argv.index("--scene") + 1] = str(sdir / "nope.txt")
    assert cli.main(argv) == 1


# -- compose / augment-preview ------------------------------------------------


def test_compose_zero_passes(tmp_path):
    zero = np.zeros((3, 8, 8), np.float32)
    save_passes(RenderPasses(**{n: zero for n in PASS_NAMES}), tmp_path / "passes")
    assert cli.main(["compose", "--passes", str(tmp_path / "passes"), "--out", str(tmp_path / "out")]) == 0
    for name in ("albedo.pfm", "shading.pfm", "residual.pfm"):
        assert not np.any(load_pfm(tmp_path / "out" / name).data)


def test_compose_matches_library(tmp_path, rng):
    passes = RenderPasses(**{n: rng.uniform(0, 1.5, (3, 6, 10)).astype(np.float32) for n in PASS_NAMES})
    save_passes(passes, tmp_path / "passes")
    assert cli.main(["compose", "--passes", str(tmp_path / "passes"), "--out", str(tmp_path / "out")]) == 0
    ref = passes_to_intrinsics(load_passes(tmp_path / "passes"))
    for name, arr in zip(("albedo.pfm", "shading.pfm", "residual.pfm"), (ref.albedo, ref.shading, ref.residual)):
        assert np.array_equal(load_pfm(tmp_path / "out" / name).data, arr)
    assert (tmp_path / "out" / "cond_shading.pfm").exists()


def test_compose_missing_passes(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert cli.main(["compose", "--passes", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 1
    assert "diffuse_color" in capsys.readouterr().err


def test_augment_preview_deterministic(tmp_path, rng):
    passes = RenderPasses(**{n: rng.uniform(0, 1, (3, 16, 16)).astype(np.float32) for n in PASS_NAMES})
    save_passes(passes, tmp_path / "passes")
    assert cli.main(["compose", "--passes", str(tmp_path / "passes"), "--out", str(tmp_path / "stack")]) == 0
    outs = []
    for name, seed in (("a", 4), ("b", 4), ("c", 5)):
        assert cli.main(["augment-preview", "--seed", str(seed), "--in", str(tmp_path / "stack"),
                         "--out", str(tmp_path / f"{name}.png"), "--samples", "6"]) == 0
        outs.append((tmp_path / f"{name}.png").read_bytes())
    assert outs[0] == outs[1] and outs[0] != outs[2]
    assert load_png(tmp_path / "a.png").data.shape == (3, 16 * 7, 16 * 3)


def test_internal_errors_exit_2(monkeypatch, tmp_path):
    def boom(*a, **k):
        raise RuntimeError("invariant broken")

    monkeypatch.setattr(cli, "generate_dataset", boom)
    assert cli.main(["gen-data", "--scenes", "1", "--conditions", "2", "--out", str(tmp_path / "z")]) == 2


def test_usage_errors_exit_1():
    assert cli.main([]) == 1
    assert cli.main(["gen-data", "--scenes", "x"]) == 1
    assert cli.main(["--help"]) == 0
