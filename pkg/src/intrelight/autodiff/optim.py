"""AdamW with decoupled weight decay, and global-norm gradient clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np



@dataclass
class AdamWState:
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.05
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def decays(name: str, param) -> bool:
    # norms, biases and 1-d embeddings are left undecayed
    return param.ndim >= 2


def adamw_step(named_params, state: AdamWState, lr: float) -> None:
    """One AdamW update, in place.

    p <- p - lr*wd*p ;  p <- p - lr * mhat / (sqrt(vhat) + eps)
    """
    state.step += 1
    b1, b2 = state.betas
    t = state.step
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in named_params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay and decays(name, p):
            p.data *= p.data.dtype.type(1.0 - lr * state.weight_decay)
        denom = np.sqrt(v / bc2) + state.eps
        p.data -= (p.data.dtype.type(lr / bc1) * m / denom).astype(p.data.dtype)


def grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.dot(p.grad.ravel().astype(np.float64), p.grad.ravel().astype(np.float64)))
    return math.sqrt(total)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most max_norm; return the pre-clip norm."""
    params = list(params)
    norm = grad_norm(params)
    if norm > max_norm:
        p_scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(p_scale)
    return norm
