"""Central finite-difference oracle for reverse-mode gradients."""
from __future__ import annotations

import numpy as np

from .tensor import no_grad


def numeric_grad(fn, tensor, coords, h: float = 1e-3) -> np.ndarray:
    """d fn() / d tensor at the given flat coordinates, by central differences."""
    flat = tensor.data.reshape(-1)
    out = np.empty(len(coords), dtype=np.float64)
    with no_grad():
        for i, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + h
            fp = float(fn().data)
            flat[c] = orig - h
            fm = float(fn().data)
            flat[c] = orig
            out[i] = (fp - fm) / (2.0 * h)
    return out


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, np.float64).ravel()
    n = np.asarray(numeric, np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(fn, tensors, h: float = 1e-3, max_coords: int = 64, rng=None) -> dict[str, float]:
    """Compare autodiff against finite differences for each tensor.

    fn() must rebuild the graph and return a scalar Tensor.  `tensors` is a
    dict name -> Tensor (requires_grad).  Large tensors are sampled at
    max_coords random coordinates.  Returns name -> norm-wise relative error.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in tensors.values():
        t.grad = None
    fn().backward()
    errors = {}
    for name, t in tensors.items():
        if t.size <= max_coords:
            coords = np.arange(t.size)
        else:
            coords = np.sort(rng.choice(t.size, size=max_coords, replace=False))
        analytic = np.zeros(len(coords)) if t.grad is None else t.grad.reshape(-1)[coords]
        errors[name] = rel_error(analytic, numeric_grad(fn, t, coords, h))
    return errors
