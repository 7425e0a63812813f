"""Differentiable ops: conv3d, leaky ReLU, nearest upsampling, add/scale/concat, MSE."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor, make_result, needs_grad


@dataclass
class Conv3dParams:
    """Weight ``(out_ch, in_ch, kz, ky, kx)``, bias ``(out_ch,)``; stride 1, zero padding."""

    weight: Tensor
    bias: Tensor
    padding: tuple[int, int, int] | None = None

    def __post_init__(self):
        ks = self.weight.shape[2:]
        if len(ks) != 3 or any(k % 2 == 0 for k in ks):
            raise ValueError(f"kernel dims must be three odd sizes, got {ks}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias must have one entry per output channel")
        if self.padding is None:
            self.padding = tuple(k // 2 for k in ks)


def _im2col(xt: np.ndarray, ks, out_sp) -> np.ndarray:
    """Columns ``(C, kvol, B, Z, Y, X)`` of a padded channel-major input ``(C, B, ...)``."""
    c, b = xt.shape[:2]
    kz, ky, kx = ks
    z, y, x = out_sp
    cols = np.empty((c, kz * ky * kx, b, z, y, x), dtype=xt.dtype)
    i = 0
    for dz in range(kz):
        for dy in range(ky):
            for dx in range(kx):
                cols[:, i] = xt[:, :, dz:dz + z, dy:dy + y, dx:dx + x]
                i += 1
    return cols


def conv3d(x: Tensor, p: Conv3dParams) -> Tensor:
    """Stride-1 cross-correlation (no kernel flip) with zero padding."""
    w, bias = p.weight, p.bias
    if x.data.ndim != 5:
        raise ValueError(f"conv3d expects (B, C, Z, Y, X), got {x.shape}")
    o, c = w.shape[:2]
    if x.shape[1] != c:
        raise ValueError(f"conv3d input has {x.shape[1]} channels, weight expects {c}")
    ks = w.shape[2:]
    pad = p.padding
    b = x.shape[0]
    sp = x.shape[2:]
    padded = tuple(n + 2 * q for n, q in zip(sp, pad))
    out_sp = tuple(n - k + 1 for n, k in zip(padded, ks))
    if min(out_sp) < 1:
        raise ValueError(f"input {x.shape} too small for kernel {ks} with padding {pad}")
    # channel-major padded copy keeps the im2col slices contiguous
    xt = np.zeros((c, b) + padded, dtype=x.dtype)
    inner = (slice(None), slice(None)) + tuple(slice(q, q + n) for q, n in zip(pad, sp))
    xt[inner] = x.data.transpose(1, 0, 2, 3, 4)
    cols = _im2col(xt, ks, out_sp)
    del xt
    kcols = cols.reshape(c * cols.shape[1], -1)
    w2 = w.data.reshape(o, -1)
    out = np.empty((b, o) + out_sp, dtype=np.result_type(x.data, w.data))
    out.transpose(1, 0, 2, 3, 4)[...] = (w2 @ kcols).reshape((o, b) + out_sp)
    out += bias.data.reshape(1, o, 1, 1, 1)

    def backward(g: np.ndarray) -> None:
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3, 4)).reshape(o, -1)
        if needs_grad(w):
            w.accumulate((gt @ kcols.T).reshape(w.shape))
        if needs_grad(bias):
            bias.accumulate(gt.sum(axis=1, dtype=np.float64).astype(bias.dtype))
        if needs_grad(x):
            dcols = (w2.T @ gt).reshape(cols.shape)
            dxt = np.zeros((c, b) + padded, dtype=x.dtype)
            kz, ky, kx = ks
            z, y, xx = out_sp
            i = 0
            for dz in range(kz):
                for dy in range(ky):
                    for dx in range(kx):
                        dxt[:, :, dz:dz + z, dy:dy + y, dx:dx + xx] += dcols[:, i]
                        i += 1
            x.accumulate(dxt[inner].transpose(1, 0, 2, 3, 4))

    return make_result(out, (x, w, bias), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def backward(g):
        x.accumulate(np.where(pos, g, slope * g))

    return make_result(out, (x,), backward)


def nn_upsample(x: Tensor, factor: int) -> Tensor:
    """Replicate every voxel ``factor``^3 times."""
    if factor not in (2, 3):
        raise ValueError(f"unsupported upsampling factor {factor}; use 2 or 3")
    d = x.data
    out = d.repeat(factor, axis=2).repeat(factor, axis=3).repeat(factor, axis=4)

    def backward(g):
        b, c, z, y, xx = d.shape
        x.accumulate(g.reshape(b, c, z, factor, y, factor, xx, factor).sum(axis=(3, 5, 7)))

    return make_result(out, (x,), backward)


def avg_pool3d(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping mean pooling; spatial dims must divide by ``factor``."""
    b, c, z, y, xx = x.shape
    if z % factor or y % factor or xx % factor:
        raise ValueError(f"spatial dims {x.shape[2:]} not divisible by {factor}")
    out = x.data.reshape(b, c, z // factor, factor, y // factor, factor, xx // factor, factor).mean(axis=(3, 5, 7))

    def backward(g):
        up = g.repeat(factor, axis=2).repeat(factor, axis=3).repeat(factor, axis=4)
        x.accumulate(up / factor**3)

    return make_result(out, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if needs_grad(a):
            a.accumulate(g)
        if needs_grad(b):
            b.accumulate(g)

    return make_result(a.data + b.data, (a, b), backward)


def scale(x: Tensor, alpha: float) -> Tensor:
    alpha = float(alpha)

    def backward(g):
        x.accumulate(alpha * g)

    return make_result(alpha * x.data, (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along the channel axis."""
    sizes = [t.shape[axis] for t in xs]
    out = np.concatenate([t.data for t in xs], axis=axis)

    def backward(g):
        start = 0
        for t, n in zip(xs, sizes):
            if needs_grad(t):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, start + n)
                t.accumulate(g[tuple(sl)])
            start += n

    return make_result(out, tuple(xs), backward)


def mse_loss(pred: Tensor, target: Tensor | np.ndarray) -> Tensor:
    """Mean of squared differences over all elements, as a 0-d tensor."""
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != tgt.shape:
        raise ValueError(f"mse_loss shape mismatch {pred.shape} vs {tgt.shape}")
    diff = pred.data - tgt
    n = diff.size
    value = np.sum(diff.astype(np.float64) ** 2) / n

    def backward(g):
        pred.accumulate((2.0 * float(g) / n) * diff)

    return make_result(np.asarray(value, dtype=pred.dtype), (pred,), backward)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements; convenient scalar objective for gradient checks."""

    def backward(g):
        x.accumulate(np.full_like(x.data, float(g)))

    return make_result(np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype), (x,), backward)
