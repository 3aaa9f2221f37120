"""Scale-corrected PSNR / SSIM evaluation and forward-pass timing."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import no_grad

PSNR_INF = float("inf")
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5
REPORT_FIELDS = ("scene", "source", "target", "psnr", "ssim", "scale_r", "scale_g", "scale_b",
                 "baseline_psnr", "baseline_ssim", "lpips")


def _check(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def scale_factors(pred, target) -> np.ndarray:
    """Per-channel least-squares alpha = <p, t> / <p, p>; 1 for zero-energy channels."""
    p, t = _check(pred, target)
    p2 = p.reshape(p.shape[0], -1)
    t2 = t.reshape(t.shape[0], -1)
    num = (p2 * t2).sum(axis=1)
    den = (p2 * p2).sum(axis=1)
    alpha = np.ones(len(den))
    ok = den > 0
    alpha[ok] = num[ok] / den[ok]
    return alpha


def scale_correct(pred, target, return_alpha: bool = False):
    """C x H x W prediction scaled toward the target per channel, then clipped to [0,1]."""
    alpha = scale_factors(pred, target)
    out = np.clip(np.asarray(pred, np.float64) * alpha[:, None, None], 0.0, 1.0)
    return (out, alpha) if return_alpha else out


def psnr(a, b) -> float:
    a, b = _check(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma * sigma))
    g /= g.sum()
    return g


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable correlation over the last two axes, valid positions only."""
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ g


def ssim(a, b) -> float:
    """Mean SSIM over channels and valid window positions (C x H x W, range 1)."""
    a, b = _check(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {a.shape[-2:]}")
    g = gaussian_window()
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    forward_time: float | None = None

    @property
    def mean_psnr(self) -> float:
        return _mean([r["psnr"] for r in self.rows])

    @property
    def mean_ssim(self) -> float:
        return _mean([r["ssim"] for r in self.rows])

    @property
    def baseline_psnr(self) -> float:
        return _mean([r["baseline_psnr"] for r in self.rows])

    @property
    def baseline_ssim(self) -> float:
        return _mean([r["baseline_ssim"] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k, "") for k in REPORT_FIELDS})

    def summary(self) -> str:
        t = "n/a" if self.forward_time is None else f"{self.forward_time:.3f}"
        lines = [
            f"{'method':<14}{'PSNR':>9}{'SSIM':>8}{'time (s)':>10}",
            f"{'copy-source':<14}{self.baseline_psnr:>9.2f}{self.baseline_ssim:>8.3f}{'':>10}",
            f"{'model':<14}{self.mean_psnr:>9.2f}{self.mean_ssim:>8.3f}{t:>10}",
            f"pairs: {len(self.rows)}",
        ]
        return "\n".join(lines)


def _mean(values) -> float:
    return float(np.mean(values)) if values else float("nan")


def time_forward(model, I_S, C_T, runs: int = 5, warmup: int = 2) -> float:
    """Mean wall-clock of `runs` forward passes after `warmup` untimed ones."""
    with no_grad():
        for _ in range(warmup):
            model(I_S, C_T)
        times = []
        for _ in range(runs):
            t = time.perf_counter()
            model(I_S, C_T)
            times.append(time.perf_counter() - t)
    return float(np.mean(times))


def predict(model, I_S, C_T, batch_size: int = 16) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(I_S), batch_size):
            out.append(model(I_S[i : i + batch_size], C_T[i : i + batch_size]).data)
    return np.concatenate(out)


def evaluate(model, dataset, timing: bool = True, pairs=None) -> EvalReport:
    """Scale-corrected metrics on every ordered pair, plus the copy-source baseline."""
    pairs = list(dataset.pairs()) if pairs is None else list(pairs)
    if not pairs:
        raise ValueError("evaluation split is empty")
    I_S = np.stack([dataset.scenes[s].images[a] for s, a, b in pairs])
    C_T = np.stack([dataset.scenes[s].conditioning[b] for s, a, b in pairs])
    I_T = np.stack([dataset.scenes[s].images[b] for s, a, b in pairs])
    preds = predict(model, I_S, C_T)
    report = EvalReport()
    for (s, a, b), src, pred, tgt in zip(pairs, I_S, preds, I_T):
        corr, alpha = scale_correct(pred, tgt, return_alpha=True)
        base = scale_correct(src, tgt)
        report.rows.append({
            "scene": dataset.scenes[s].scene_id,
            "source": a,
            "target": b,
            "psnr": psnr(corr, tgt),
            "ssim": ssim(corr, tgt),
            "scale_r": alpha[0],
            "scale_g": alpha[1],
            "scale_b": alpha[2],
            "baseline_psnr": psnr(base, tgt),
            "baseline_ssim": ssim(base, tgt),
            "lpips": "",
        })
    if timing:
        report.forward_time = time_forward(model, I_S[:1], C_T[:1])
    return report


def write_report(report: EvalReport, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "eval.csv")
    (out / "eval_summary.txt").write_text(report.summary() + "\n")
    return out / "eval.csv", out / "eval_summary.txt"
