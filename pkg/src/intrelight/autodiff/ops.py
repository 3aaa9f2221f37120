"""Differentiable operators.

Each function computes the forward value with numpy and registers a closure
that maps the output gradient to input gradients.  Shape errors name both
offending shapes.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..imgcore import interp_matrix
from .tensor import Tensor, as_tensor

_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.result(out, (a, b), backward, "div")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor.result(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, w, b=None) -> Tensor:
    """x[..., din] @ w[din, dout] + b[dout]."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ValueError(f"linear: bias {b.shape} does not match weight {w.shape}")
        out += b.data
        parents = (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=0) if b.requires_grad else None)
        return grads

    return Tensor.result(out.reshape(x.shape[:-1] + (w.shape[1],)), parents, backward, "linear")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return Tensor.result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ValueError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return Tensor.result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ValueError(f"concat: shapes {ref.shape} and {t.shape} differ off axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return Tensor.result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    out = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g) if _is_advanced(idx) else gx.__setitem__(idx, g)
        return (gx,)

    return Tensor.result(out, (x,), backward, "slice")


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def flip(x, axis: int) -> Tensor:
    x = as_tensor(x)
    return Tensor.result(np.flip(x.data, axis), (x,), lambda g: (np.flip(g, axis),), "flip")


# ---------------------------------------------------------------------------
# reductions and pointwise nonlinearities


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(g.dtype),)

    return Tensor.result(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis, keepdims), 1.0 / n)


def abs(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    return Tensor.result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp with zero gradient wherever the input lies outside (lo, hi)."""
    x = as_tensor(x)
    inside = (x.data > lo) & (x.data < hi)
    return Tensor.result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return Tensor.result(x.data * pos, (x,), lambda g: (g * pos,), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(x.data.dtype)
    return Tensor.result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def gelu(x) -> Tensor:
    """tanh-approximated GELU."""
    x = as_tensor(x)
    v = x.data
    ft = v.dtype.type
    v2 = v * v
    t = v2 * ft(0.044715)
    t += ft(1.0)
    t *= v
    t *= ft(_GELU_C)
    np.tanh(t, out=t)
    out = t + ft(1.0)
    out *= v
    out *= ft(0.5)

    def backward(g):
        # d/dv = 0.5(1+t) + 0.5 v (1-t^2) c (1 + 3k v^2)
        dinner = v2 * ft(3 * 0.044715)
        dinner += ft(1.0)
        dinner *= ft(_GELU_C)
        sech = t * t
        np.subtract(ft(1.0), sech, out=sech)
        sech *= v
        sech *= dinner
        sech += t
        sech += ft(1.0)
        sech *= ft(0.5)
        sech *= g
        return (sech,)

    return Tensor.result(out, (x,), backward, "gelu")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.result(out, (x,), backward, "softmax")


def layer_norm(x, weight, bias, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    d = x.shape[-1]
    if weight.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm: affine params {weight.shape}/{bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * weight.data + bias.data

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gh = g * weight.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gw, gb

    return Tensor.result(out, (x, weight, bias), backward, "layer_norm")


# ---------------------------------------------------------------------------
# attention and rotary embeddings


def _scalar(t, scale):
    return t.data.dtype.type(scale)


def scaled_dot_product_attention(q, k, v, scale: float | None = None) -> Tensor:
    """softmax(q k^T * scale) v over the last two axes; q,k,v are (..., N, dh)."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1] or q.shape[:-2] != k.shape[:-2]:
        raise ValueError(f"attention: incompatible q{q.shape} k{k.shape} v{v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1]) if scale is None else scale
    s = (q.data @ np.swapaxes(k.data, -1, -2)) * _scalar(q, scale)
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ v.data

    def backward(g):
        gv = np.swapaxes(p, -1, -2) @ g
        gp = g @ np.swapaxes(v.data, -1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True))
        gs *= _scalar(q, scale)
        gq = gs @ k.data
        gk = np.swapaxes(gs, -1, -2) @ q.data
        return gq, gk, gv

    return Tensor.result(out, (q, k, v), backward, "attention")


def rotary(x, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate consecutive feature pairs of x[..., N, dh] by per-(N, dh/2) angles."""
    x = as_tensor(x)
    half = x.shape[-1] // 2
    if x.shape[-1] % 2 or cos.shape != (x.shape[-2], half) or sin.shape != cos.shape:
        raise ValueError(f"rotary: tables {cos.shape} do not fit input {x.shape}")
    c = cos.astype(x.data.dtype)
    s = sin.astype(x.data.dtype)
    xp = x.data.reshape(x.shape[:-1] + (half, 2))
    e, o = xp[..., 0], xp[..., 1]
    out = np.stack([e * c - o * s, e * s + o * c], axis=-1).reshape(x.shape)

    def backward(g):
        gp = g.reshape(g.shape[:-1] + (half, 2))
        ge, go = gp[..., 0], gp[..., 1]
        return (np.stack([ge * c + go * s, go * c - ge * s], axis=-1).reshape(x.shape),)

    return Tensor.result(out, (x,), backward, "rotary")


# ---------------------------------------------------------------------------
# spatial ops on N x C x H x W


def pad2d(x, pad: int, mode: str = "zeros") -> Tensor:
    x = as_tensor(x)
    if pad == 0:
        return x
    if mode not in ("zeros", "edge"):
        raise ValueError(f"pad2d: unknown mode {mode!r}")
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(x.data, widths, mode="constant" if mode == "zeros" else "edge")
    h, w = x.shape[-2:]

    def backward(g):
        if mode == "zeros":
            return (np.ascontiguousarray(g[..., pad : pad + h, pad : pad + w]),)
        rows = g[..., pad : pad + h, :].copy()
        rows[..., 0, :] += g[..., :pad, :].sum(axis=-2)
        rows[..., -1, :] += g[..., pad + h :, :].sum(axis=-2)
        gx = rows[..., pad : pad + w].copy()
        gx[..., 0] += rows[..., :pad].sum(axis=-1)
        gx[..., -1] += rows[..., pad + w :].sum(axis=-1)
        return (gx,)

    return Tensor.result(out, (x,), backward, f"pad_{mode}")


def _patchify(x, kh, kw, stride):
    b, c, h, w = x.shape
    return kh == stride and kw == stride and h % kh == 0 and w % kw == 0


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int):
    """Rows are output pixels; columns ordered (c, kh, kw) for patchify, (kh, kw, c) otherwise."""
    b, c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    if _patchify(x, kh, kw, stride):
        cols = x.reshape(b, c, ho, kh, wo, kw).transpose(0, 2, 4, 1, 3, 5)
    else:
        # channels-last windows copy in contiguous runs of c
        xl = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        win = sliding_window_view(xl, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
        cols = win.transpose(0, 1, 2, 4, 5, 3)
    return cols.reshape(b * ho * wo, c * kh * kw), ho, wo


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, pad_mode: str = "zeros") -> Tensor:
    """Dense 2-D cross-correlation; weight is (Cout, Cin, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    if padding:
        x = pad2d(x, padding, pad_mode)
    b, c, h, w = x.shape
    cout, _, kh, kw = weight.shape
    if h < kh or w < kw:
        raise ValueError(f"conv2d: kernel {weight.shape[2:]} larger than padded input {x.shape[2:]}")
    patch = _patchify(x.data, kh, kw, stride)
    cols, ho, wo = _im2col(x.data, kh, kw, stride)
    wt = weight.data if patch else weight.data.transpose(0, 2, 3, 1)
    w2 = wt.reshape(cout, -1)
    out = cols @ w2.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ValueError(f"conv2d: bias {bias.shape} does not match {cout} output channels")
        out += bias.data
        parents.append(bias)
    out = out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = gx = None
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(wt.shape)
            gw = gw if patch else gw.transpose(0, 3, 1, 2)
        if x.requires_grad:
            gc = g2 @ w2
            if patch:
                gx = gc.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 1, 4, 2, 5).reshape(x.shape)
            else:
                gc = gc.reshape(b, ho, wo, kh, kw, c)
                gl = np.zeros((b, h, w, c), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gl[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += gc[:, :, :, i, j]
                gx = gl.transpose(0, 3, 1, 2)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0) if bias.requires_grad else None)
        return grads

    return Tensor.result(np.ascontiguousarray(out), parents, backward, "conv2d")


def depthwise_conv2d(x, weight, bias=None, padding: int = 0, pad_mode: str = "zeros") -> Tensor:
    """Per-channel 2-D cross-correlation, stride 1; weight is (C, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 3 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"depthwise_conv2d: input {x.shape} incompatible with weight {weight.shape}")
    if padding:
        x = pad2d(x, padding, pad_mode)
    c, kh, kw = weight.shape
    ho, wo = x.shape[2] - kh + 1, x.shape[3] - kw + 1
    xd = x.data
    wd = weight.data
    out = np.zeros((x.shape[0], c, ho, wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xd[:, :, i : i + ho, j : j + wo] * wd[:, i, j][None, :, None, None]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[None, :, None, None]
        parents.append(bias)

    def backward(g):
        gx = np.zeros_like(xd) if x.requires_grad else None
        gw = np.zeros_like(wd) if weight.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                if gw is not None:
                    gw[:, i, j] = np.einsum("bchw,bchw->c", g, xd[:, :, i : i + ho, j : j + wo])
                if gx is not None:
                    gx[:, :, i : i + ho, j : j + wo] += g * wd[:, i, j][None, :, None, None]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if bias.requires_grad else None)
        return grads

    return Tensor.result(out, parents, backward, "depthwise_conv2d")


def _up2_axis(x, axis):
    """Exact x2 half-pixel bilinear along one axis (edge clamped)."""
    n = x.shape[axis]
    lo = np.take(x, np.r_[0, np.arange(n - 1)], axis=axis)
    hi = np.take(x, np.r_[np.arange(1, n), n - 1], axis=axis)
    ft = x.dtype.type
    even = ft(0.75) * x + ft(0.25) * lo
    odd = ft(0.75) * x + ft(0.25) * hi
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(x.shape)
    shape[axis] *= 2
    return out.reshape(shape)


def _up2_axis_grad(g, axis):
    n = g.shape[axis] // 2
    shape = list(g.shape)
    shape[axis : axis + 1] = [n, 2]
    g = g.reshape(shape)
    ge = np.take(g, 0, axis=axis + 1)
    go = np.take(g, 1, axis=axis + 1)
    ft = g.dtype.type
    gx = ft(0.75) * (ge + go)
    q_e = ft(0.25) * ge
    q_o = ft(0.25) * go
    sl = lambda a, b: (slice(None),) * axis + (slice(a, b),)  # noqa: E731
    gx[sl(0, n - 1)] += q_e[sl(1, n)]
    gx[sl(0, 1)] += q_e[sl(0, 1)]
    gx[sl(1, n)] += q_o[sl(0, n - 1)]
    gx[sl(n - 1, n)] += q_o[sl(n - 1, n)]
    return gx


def upsample_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Half-pixel-centre bilinear resize of the last two axes."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    ax = x.ndim - 2
    if out_h == 2 * h and out_w == 2 * w:
        out = _up2_axis(_up2_axis(x.data, ax), ax + 1)
        return Tensor.result(out, (x,), lambda g: (_up2_axis_grad(_up2_axis_grad(g, ax + 1), ax),), "upsample_bilinear")
    mh = interp_matrix(h, out_h).astype(x.data.dtype)
    mw = interp_matrix(w, out_w).astype(x.data.dtype)
    out = mh @ x.data @ mw.T

    def backward(g):
        return (mh.T @ g @ mw,)

    return Tensor.result(out, (x,), backward, "upsample_bilinear")


def avg_pool2d(x, k: int) -> Tensor:
    x = as_tensor(x)
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"avg_pool2d: {x.shape} not divisible by {k}")
    out = x.data.reshape(b, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(g):
        gx = np.broadcast_to(g[:, :, :, None, :, None] / (k * k), (b, c, h // k, k, w // k, k))
        return (gx.reshape(x.shape).astype(g.dtype),)

    return Tensor.result(out, (x,), backward, "avg_pool2d")
