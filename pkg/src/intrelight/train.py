"""Supervised training on paired multi-illumination data."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, RngStream, augment_array
from .autodiff import AdamWState, Tensor, adamw_step, clip_grad_norm, load_arrays, no_grad, ops, save_arrays
from .autodiff.checkpoint import CheckpointError
from .autodiff.nn import trunc_normal
from .dataset import Dataset, DatasetError
from .model import ModelConfig, PixlModel

# Philox stream ids for training-side randomness (augmentation uses 0..8)
PAIR_STREAM = 100
FLIP_STREAM = 101
ASPECT_STREAM = 102
PERCEPTUAL_SEED = 1234
LOG_FIELDS = ("step", "loss", "l1", "perceptual", "grad_norm", "lr")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    batch_size: int = 8
    peak_lr: float = 1e-3
    final_lr: float = 1e-4
    warmup_steps: int = 250
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.05
    lam: float = 0.2
    clip_norm: float = 1.0
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    dataset: str = ""
    eval_interval: int = 0
    checkpoint_interval: int = 0
    log_interval: int = 1
    hflip: bool = True
    random_aspect: bool = False
    aspect_range: tuple[float, float] = (0.33, 1.0)

    def __post_init__(self):
        if isinstance(self.augment, dict):
            object.__setattr__(self, "augment", AugmentConfig.from_dict(self.augment))
        for name in ("betas", "aspect_range"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.warmup_steps < self.iterations:
            raise ValueError(f"warmup_steps={self.warmup_steps} must be < iterations={self.iterations}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.clip_norm <= 0 or self.peak_lr < 0 or self.final_lr < 0:
            raise ValueError("clip_norm must be positive and learning rates non-negative")
        lo, hi = self.aspect_range
        if not 0 < lo <= hi <= 1:
            raise ValueError("aspect_range must satisfy 0 < lo <= hi <= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["augment"] = self.augment.to_dict()
        out["betas"] = list(self.betas)
        out["aspect_range"] = list(self.aspect_range)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


def lr_schedule(step: int, cfg) -> float:
    """Linear warmup from 0, then cosine decay to final_lr at `iterations`."""
    peak, final, warm, total = cfg.peak_lr, cfg.final_lr, cfg.warmup_steps, cfg.iterations
    if step < warm:
        return peak * step / warm
    if total == warm:
        return final
    frac = min(max((step - warm) / (total - warm), 0.0), 1.0)
    return final + 0.5 * (peak - final) * (1.0 + math.cos(math.pi * frac))


# ---------------------------------------------------------------------------
# batches


@dataclass
class Pair:
    scene: int
    source: int
    target: int
    I_S: np.ndarray
    C_T: np.ndarray
    I_T: np.ndarray


def sample_pair(dataset: Dataset, rng: np.random.Generator, augment: AugmentConfig | None = None,
                stream: RngStream | None = None, sample_id: int = 0) -> Pair:
    """Uniform scene, two distinct conditions, fair-coin role assignment."""
    si = int(rng.integers(len(dataset)))
    rec = dataset.scenes[si]
    if rec.n_conditions < 2:
        raise DatasetError(f"scene {rec.scene_id} has fewer than 2 conditions")
    a, b = sorted(int(v) for v in rng.choice(rec.n_conditions, size=2, replace=False))
    src, tgt = (a, b) if rng.random() < 0.5 else (b, a)
    cond = rec.conditioning[tgt]
    if augment is not None and augment.p_apply > 0:
        cond, _ = augment_array(cond, augment, stream or RngStream(0), sample_id)
    return Pair(si, src, tgt, rec.images[src], cond, rec.images[tgt])


@dataclass
class Batch:
    I_S: np.ndarray
    C_T: np.ndarray
    I_T: np.ndarray
    ids: list[tuple[str, int, int]]


def step_rng(seed: int, stream: int, step: int) -> np.random.Generator:
    return RngStream(seed).generator(step, stream)


def assemble_batch(dataset: Dataset, cfg: TrainConfig, step: int, p: int = 8) -> Batch:
    """Batch for a given step; depends only on (seed, step) so resumed runs match."""
    rng = step_rng(cfg.seed, PAIR_STREAM, step)
    stream = RngStream(cfg.seed)
    pairs = [
        sample_pair(dataset, rng, cfg.augment, stream, step * cfg.batch_size + i) for i in range(cfg.batch_size)
    ]
    I_S = np.stack([q.I_S for q in pairs])
    C_T = np.stack([q.C_T for q in pairs])
    I_T = np.stack([q.I_T for q in pairs])
    if cfg.hflip:
        flip = step_rng(cfg.seed, FLIP_STREAM, step).random(cfg.batch_size) < 0.5
        # one coin per sample, shared by source, target and conditioning
        I_S[flip] = I_S[flip][..., ::-1]
        I_T[flip] = I_T[flip][..., ::-1]
        C_T[flip] = C_T[flip][..., ::-1]
    if cfg.random_aspect:
        I_S, C_T, I_T = random_aspect_crop(I_S, C_T, I_T, step_rng(cfg.seed, ASPECT_STREAM, step), cfg.aspect_range, p)
    ids = [(dataset.scenes[q.scene].scene_id, q.source, q.target) for q in pairs]
    return Batch(np.ascontiguousarray(I_S), np.ascontiguousarray(C_T), np.ascontiguousarray(I_T), ids)


def random_aspect_crop(I_S, C_T, I_T, rng, aspect_range, p):
    """Crop the shorter side to aspect * longer side (rounded to the patch grid)."""
    h, w = I_S.shape[-2:]
    aspect = rng.uniform(*aspect_range)
    if rng.random() < 0.5:
        nh, nw = max(p, int(aspect * h) // p * p), w
    else:
        nh, nw = h, max(p, int(aspect * w) // p * p)
    y = int(rng.integers(h - nh + 1))
    x = int(rng.integers(w - nw + 1))
    sl = (Ellipsis, slice(y, y + nh), slice(x, x + nw))
    return I_S[sl], C_T[sl], I_T[sl]


# ---------------------------------------------------------------------------
# loss


class FeatureExtractor:
    """Frozen, seeded three-stage conv pyramid used as the perceptual stand-in."""

    def __init__(self, seed: int = PERCEPTUAL_SEED, widths=(16, 32, 64)):
        rng = np.random.default_rng(seed)
        self.weights = []
        cin = 3
        for cout in widths:
            std = math.sqrt(2.0 / (cin * 4))
            self.weights.append(Tensor(trunc_normal(rng, (cout, cin, 2, 2), std)))
            cin = cout

    def __call__(self, x):
        feats = []
        for w in self.weights:
            if x.shape[-1] % 2 or x.shape[-2] % 2:
                break
            x = ops.gelu(ops.conv2d(x, w, None, stride=2))
            feats.append(x)
        return feats


_EXTRACTOR: FeatureExtractor | None = None


def feature_extractor() -> FeatureExtractor:
    global _EXTRACTOR
    if _EXTRACTOR is None:
        _EXTRACTOR = FeatureExtractor()
    return _EXTRACTOR


def loss_terms(pred, target, lam: float = 0.2):
    """Returns (total, l1, perceptual) as Tensors."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = target.data if isinstance(target, Tensor) else np.asarray(target, np.float32)
    if pred.shape != target.shape:
        raise ValueError(f"loss: prediction {pred.shape} and target {target.shape} differ")
    l1 = ops.abs(pred - target).mean()
    if lam == 0:
        return l1, l1, Tensor(0.0)
    fx = feature_extractor()
    with no_grad():
        tf = [f.data for f in fx(Tensor(target))]
    pf = fx(pred)
    perc = None
    for a, b in zip(pf, tf):
        term = ops.abs(a - b).mean()
        perc = term if perc is None else perc + term
    perc = perc * (1.0 / len(pf)) if perc is not None else Tensor(0.0)
    return l1 + perc * lam, l1, perc


def loss(pred, target, lam: float = 0.2):
    return loss_terms(pred, target, lam)[0]


# ---------------------------------------------------------------------------
# state, step, checkpoints


@dataclass
class TrainState:
    model: PixlModel
    optim: AdamWState
    step: int = 0


def new_state(model_cfg: ModelConfig, cfg: TrainConfig) -> TrainState:
    model = PixlModel(model_cfg)
    return TrainState(model, AdamWState(betas=cfg.betas, weight_decay=cfg.weight_decay))


class NonFiniteLoss(FloatingPointError):
    def __init__(self, step, ids):
        super().__init__(f"non-finite loss at step {step}; batch ids {ids}")
        self.step = step
        self.ids = ids


def train_step(state: TrainState, batch: Batch, cfg: TrainConfig) -> dict:
    model = state.model
    lr = lr_schedule(state.step + 1, cfg)
    pred = model(batch.I_S, batch.C_T)
    total, l1, perc = loss_terms(pred, batch.I_T, cfg.lam)
    value = total.item()
    if not math.isfinite(value):
        raise NonFiniteLoss(state.step + 1, batch.ids)
    total.backward()
    params = model.named_parameters()
    norm = clip_grad_norm([p for _, p in model.named_parameters()], cfg.clip_norm)
    adamw_step(params, state.optim, lr)
    model.zero_grad()
    state.step += 1
    return {"step": state.step, "loss": value, "l1": l1.item(), "perceptual": perc.item(), "grad_norm": norm, "lr": lr}


def save_checkpoint(path, state: TrainState, extra: dict | None = None) -> None:
    cfg = state.model.cfg
    header = {
        "format": "intrelight-checkpoint",
        "model_config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "step": state.step,
        "optimizer": {
            "betas": list(state.optim.betas),
            "weight_decay": state.optim.weight_decay,
            "eps": state.optim.eps,
            "step": state.optim.step,
        },
        "extra": extra or {},
    }
    arrays = {}
    for name, p in state.model.named_parameters():
        arrays[f"param/{name}"] = p.data
    for name in state.optim.m:
        arrays[f"adam_m/{name}"] = state.optim.m[name]
        arrays[f"adam_v/{name}"] = state.optim.v[name]
    save_arrays(path, header, arrays)


def load_checkpoint(path, expected: ModelConfig | None = None) -> tuple[TrainState, dict]:
    header, arrays = load_arrays(path)
    if header.get("format") != "intrelight-checkpoint":
        raise CheckpointError(f"{path} is not a model checkpoint")
    cfg = ModelConfig.from_dict(header["model_config"])
    if cfg.hash() != header["config_hash"]:
        raise CheckpointError("checkpoint header config does not match its recorded hash")
    if expected is not None and expected.hash() != cfg.hash():
        raise CheckpointError(f"model config hash mismatch: checkpoint {cfg.hash()} vs expected {expected.hash()}")
    model = PixlModel(cfg)
    model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
    o = header["optimizer"]
    optim = AdamWState(betas=tuple(o["betas"]), weight_decay=o["weight_decay"], eps=o["eps"], step=o["step"])
    for k, v in arrays.items():
        if k.startswith("adam_m/"):
            optim.m[k[7:]] = v.copy()
        elif k.startswith("adam_v/"):
            optim.v[k[7:]] = v.copy()
    return TrainState(model, optim, int(header["step"])), header


# ---------------------------------------------------------------------------
# loop


def train(
    dataset: Dataset,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    out_dir=None,
    state: TrainState | None = None,
    until: int | None = None,
    eval_fn=None,
    progress=None,
) -> tuple[TrainState, list[dict]]:
    """Train from `state` (or fresh) up to step `until` (default cfg.iterations).

    Writes log.csv and checkpoints under out_dir when given.
    """
    state = new_state(model_cfg, cfg) if state is None else state
    until = cfg.iterations if until is None else min(until, cfg.iterations)
    out = Path(out_dir) if out_dir is not None else None
    log: list[dict] = []
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "log.csv"
        fresh = state.step == 0 or not log_path.exists()
        fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if fresh:
            writer.writeheader()
    try:
        while state.step < until:
            batch = assemble_batch(dataset, cfg, state.step, model_cfg.p)
            try:
                row = train_step(state, batch, cfg)
            except NonFiniteLoss as err:
                if out is not None:
                    (out / "nonfinite_batch.json").write_text(json.dumps({"step": err.step, "ids": err.ids}))
                raise
            log.append(row)
            if writer is not None and (state.step % cfg.log_interval == 0 or state.step == until):
                writer.writerow({k: row[k] for k in LOG_FIELDS})
                fh.flush()
            if progress is not None:
                progress(row)
            if out is not None and cfg.checkpoint_interval and state.step % cfg.checkpoint_interval == 0:
                save_checkpoint(out / f"step_{state.step:06d}.ckpt", state)
            if eval_fn is not None and cfg.eval_interval and state.step % cfg.eval_interval == 0:
                eval_fn(state)
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        save_checkpoint(out / "final.ckpt", state)
    return state, log

