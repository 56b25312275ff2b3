"""Forward and input-gradient kernels for the executable op subset.

All kernels are NHWC and batch-aware, written against numpy only. Each
forward returns (output, ctx); the matching backward consumes ctx and the
output gradient and returns the input gradient(s). Only gradients with
respect to activations are implemented — parameters are constants here.
"""

from __future__ import annotations

import math

import numpy as np


def apply_activation(y: np.ndarray, kind: str) -> np.ndarray:
    if kind == "NONE":
        return y
    if kind == "RELU":
        return np.maximum(y, 0)
    if kind == "RELU6":
        return np.clip(y, 0, 6)
    raise ValueError(f"unsupported fused activation {kind}")


def activation_grad_mask(pre: np.ndarray, kind: str) -> np.ndarray:
    if kind == "NONE":
        return np.ones_like(pre)
    if kind == "RELU":
        return (pre > 0).astype(pre.dtype)
    if kind == "RELU6":
        return ((pre > 0) & (pre < 6)).astype(pre.dtype)
    raise ValueError(f"unsupported fused activation {kind}")


def _pad_amounts(in_size: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Returns (out_size, pad_before, pad_after) per TFLite rules."""
    if padding == "SAME":
        out = math.ceil(in_size / stride)
        total = max((out - 1) * stride + k - in_size, 0)
        before = total // 2
        return out, before, total - before
    out = (in_size - k) // stride + 1
    return out, 0, 0


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    """Window extraction: padded [N,Hp,Wp,C] → [N,oh,ow,kh,kw,C]."""
    n, _, _, c = xp.shape
    cols = np.empty((n, oh, ow, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + oh * sh : sh, j : j + ow * sw : sw, :]
    return cols


def _col2im(gcols: np.ndarray, xp_shape, kh, kw, sh, sw, oh, ow) -> np.ndarray:
    gxp = np.zeros(xp_shape, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i : i + oh * sh : sh, j : j + ow * sw : sw, :] += gcols[:, :, :, i, j, :]
    return gxp


def _pad_input(x: np.ndarray, kh, kw, sh, sw, padding):
    n, h, w, c = x.shape
    oh, pt, pb = _pad_amounts(h, kh, sh, padding)
    ow, pl, pr = _pad_amounts(w, kw, sw, padding)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    return xp, oh, ow, (pt, pl, h, w)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: tuple[int, int], padding: str, activation: str):
    """w layout is TFLite's [out_c, kh, kw, in_c]."""
    out_c, kh, kw, _ = w.shape
    sh, sw = stride
    xp, oh, ow, crop = _pad_input(x, kh, kw, sh, sw, padding)
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
    n = x.shape[0]
    wmat = w.reshape(out_c, -1)
    pre = cols.reshape(n * oh * ow, -1) @ wmat.T + b
    pre = pre.reshape(n, oh, ow, out_c)
    ctx = (xp.shape, wmat, (kh, kw, sh, sw, oh, ow), crop, pre)
    return apply_activation(pre, activation), ctx


def conv2d_backward(ctx, gy: np.ndarray, activation: str) -> np.ndarray:
    xp_shape, wmat, dims, crop, pre = ctx
    kh, kw, sh, sw, oh, ow = dims
    gy = gy * activation_grad_mask(pre, activation)
    n = gy.shape[0]
    gcols = (gy.reshape(n * oh * ow, -1) @ wmat).reshape(n, oh, ow, kh, kw, -1)
    gxp = _col2im(gcols, xp_shape, kh, kw, sh, sw, oh, ow)
    pt, pl, h, w = crop
    return gxp[:, pt : pt + h, pl : pl + w, :]


def depthwise_conv2d(x, w, b, stride, padding, multiplier: int, activation: str):
    """w layout is TFLite's [1, kh, kw, in_c * multiplier]."""
    _, kh, kw, _ = w.shape
    sh, sw = stride
    c_in = x.shape[3]
    xp, oh, ow, crop = _pad_input(x, kh, kw, sh, sw, padding)
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)  # [N,oh,ow,kh,kw,Cin]
    wr = w.reshape(kh, kw, c_in, multiplier)
    pre = np.einsum("nhwijc,ijcm->nhwcm", cols, wr).reshape(x.shape[0], oh, ow, c_in * multiplier) + b
    ctx = (xp.shape, wr, (kh, kw, sh, sw, oh, ow), crop, pre)
    return apply_activation(pre, activation), ctx


def depthwise_conv2d_backward(ctx, gy, activation: str):
    xp_shape, wr, dims, crop, pre = ctx
    kh, kw, sh, sw, oh, ow = dims
    gy = gy * activation_grad_mask(pre, activation)
    n = gy.shape[0]
    c_in, mult = wr.shape[2], wr.shape[3]
    gym = gy.reshape(n, oh, ow, c_in, mult)
    gcols = np.einsum("nhwcm,ijcm->nhwijc", gym, wr)
    gxp = _col2im(gcols, xp_shape, kh, kw, sh, sw, oh, ow)
    pt, pl, h, w = crop
    return gxp[:, pt : pt + h, pl : pl + w, :]


def fully_connected(x, w, b, activation: str):
    """w layout is TFLite's [out, in]; trailing input dims are flattened."""
    x2 = x.reshape(-1, w.shape[1])
    pre = x2 @ w.T + b
    ctx = (x.shape, w, pre)
    return apply_activation(pre, activation), ctx


def fully_connected_backward(ctx, gy, activation: str):
    x_shape, w, pre = ctx
    gy = gy * activation_grad_mask(pre, activation)
    return (gy @ w).reshape(x_shape)


def max_pool(x, filter_hw, stride, padding, activation: str):
    kh, kw = filter_hw
    sh, sw = stride
    neg = np.finfo(x.dtype).min
    n, h, w, c = x.shape
    oh, pt, pb = _pad_amounts(h, kh, sh, padding)
    ow, pl, pr = _pad_amounts(w, kw, sw, padding)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=neg)
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow).reshape(n, oh, ow, kh * kw, c)
    arg = cols.argmax(axis=3)
    pre = np.take_along_axis(cols, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    ctx = (xp.shape, arg, (kh, kw, sh, sw, oh, ow), (pt, pl, h, w), pre)
    return apply_activation(pre, activation), ctx


def max_pool_backward(ctx, gy, activation: str):
    xp_shape, arg, dims, crop, pre = ctx
    kh, kw, sh, sw, oh, ow = dims
    gy = gy * activation_grad_mask(pre, activation)
    n, _, _, c = gy.shape
    gcols = np.zeros((n, oh, ow, kh * kw, c), dtype=gy.dtype)
    np.put_along_axis(gcols, arg[:, :, :, None, :], gy[:, :, :, None, :], axis=3)
    gxp = _col2im(gcols.reshape(n, oh, ow, kh, kw, c), xp_shape, kh, kw, sh, sw, oh, ow)
    pt, pl, h, w = crop
    return gxp[:, pt : pt + h, pl : pl + w, :]


def avg_pool(x, filter_hw, stride, padding, activation: str):
    """Average excludes padded cells, matching TFLite semantics."""
    kh, kw = filter_hw
    sh, sw = stride
    n, h, w, c = x.shape
    oh, pt, pb = _pad_amounts(h, kh, sh, padding)
    ow, pl, pr = _pad_amounts(w, kw, sw, padding)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
    valid = np.zeros((1, h + pt + pb, w + pl + pr, 1), dtype=x.dtype)
    valid[:, pt : pt + h, pl : pl + w, :] = 1
    counts = _im2col(valid, kh, kw, sh, sw, oh, ow).sum(axis=(3, 4))  # [1,oh,ow,1]
    pre = cols.sum(axis=(3, 4)) / counts
    ctx = (xp.shape, counts, (kh, kw, sh, sw, oh, ow), (pt, pl, h, w), pre)
    return apply_activation(pre, activation), ctx


def avg_pool_backward(ctx, gy, activation: str):
    xp_shape, counts, dims, crop, pre = ctx
    kh, kw, sh, sw, oh, ow = dims
    gy = gy * activation_grad_mask(pre, activation)
    share = gy / counts
    gcols = np.broadcast_to(share[:, :, :, None, None, :], (gy.shape[0], oh, ow, kh, kw, gy.shape[3]))
    gxp = _col2im(np.ascontiguousarray(gcols), xp_shape, kh, kw, sh, sw, oh, ow)
    pt, pl, h, w = crop
    return gxp[:, pt : pt + h, pl : pl + w, :]


def softmax(x: np.ndarray, beta: float = 1.0):
    z = beta * x
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return y, (y, beta)


def softmax_backward(ctx, gy):
    y, beta = ctx
    dot = (gy * y).sum(axis=-1, keepdims=True)
    return beta * y * (gy - dot)


def reshape(x, new_shape):
    return x.reshape(new_shape), x.shape


def reshape_backward(ctx, gy):
    return gy.reshape(ctx)


def add(x1, x2, activation: str):
    pre = x1 + x2
    ctx = (x1.shape, x2.shape, pre)
    return apply_activation(pre, activation), ctx


def add_backward(ctx, gy, activation: str):
    s1, s2, pre = ctx
    gy = gy * activation_grad_mask(pre, activation)
    return _unbroadcast(gy, s1), _unbroadcast(gy, s2)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def quantize_roundtrip(x: np.ndarray, scale: float, zero_point: int, qmin: int, qmax: int):
    """Simulated requantization: value → nearest representable value."""
    q = np.round(x / scale + zero_point)
    in_range = (q >= qmin) & (q <= qmax)
    y = (np.clip(q, qmin, qmax) - zero_point) * np.asarray(scale, dtype=x.dtype)
    return y.astype(x.dtype), in_range


def quantize_backward(ctx, gy):
    in_range = ctx
    return gy * in_range.astype(gy.dtype)  # straight-through inside the range
