"""Differentiable image ops: convolutions, pooling, activations, loss.

Convolution is cross-correlation (no kernel flip). Forward passes lower the
work onto matrix multiplies via im2col so training runs at BLAS speed;
backward passes scatter gradients with a fixed kernel-offset loop order, so
results are reproducible bit-for-bit across runs.

Layout conventions: activations are [B, C, H, W]; conv kernels are
[Cout, Cin, k, k]; transposed-conv kernels are [Cin, Cout, k, k].
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, apply_op


def _require_4d(t: Tensor, op: str) -> tuple[int, int, int, int]:
    if t.data.ndim != 4:
        raise ShapeError(f"{op}: expected a 4-D [B,C,H,W] tensor, got shape {t.shape}")
    return t.data.shape


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    *,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation of [B,Cin,H,W] with [Cout,Cin,k,k] kernels.

    Output spatial dims are (H + 2*padding - k)//stride + 1. Differentiable
    with respect to input, kernel, and bias.
    """
    B, Cin, H, W = _require_4d(x, "conv2d")
    if kernel.data.ndim != 4 or kernel.data.shape[2] != kernel.data.shape[3]:
        raise ShapeError(f"conv2d: kernel must be [Cout,Cin,k,k], got {kernel.shape}")
    Cout, Ck, k, _ = kernel.data.shape
    if Ck != Cin:
        raise ShapeError(f"conv2d: input has {Cin} channels but kernel expects {Ck}")
    if bias is not None and bias.data.shape != (Cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({Cout},)")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")

    Hp, Wp = H + 2 * padding, W + 2 * padding
    if k > Hp or k > Wp:
        raise ShapeError(f"conv2d: kernel size {k} exceeds padded input {Hp}x{Wp}")
    Ho = (Hp - k) // stride + 1
    Wo = (Wp - k) // stride + 1

    xd = x.data
    if padding > 0:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xd, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B * Ho * Wo, Cin * k * k
    )
    kmat = kernel.data.reshape(Cout, -1)
    out_mat = cols @ kmat.T
    if bias is not None:
        out_mat += bias.data
    out = np.ascontiguousarray(out_mat.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def make_backward(needs):
        def fn(g):
            gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(
                B * Ho * Wo, Cout
            )
            gx = gk = gb = None
            if needs[0]:
                dwin = (gmat @ kmat).reshape(B, Ho, Wo, Cin, k, k)
                dwin = dwin.transpose(0, 3, 1, 2, 4, 5)
                gxp = np.zeros((B, Cin, Hp, Wp), dtype=g.dtype)
                for u in range(k):
                    for v in range(k):
                        gxp[
                            :, :, u : u + Ho * stride : stride, v : v + Wo * stride : stride
                        ] += dwin[:, :, :, :, u, v]
                if padding > 0:
                    gx = np.ascontiguousarray(
                        gxp[:, :, padding : padding + H, padding : padding + W]
                    )
                else:
                    gx = gxp
            if needs[1]:
                gk = (gmat.T @ cols).reshape(Cout, Cin, k, k)
            if bias is not None and needs[2]:
                gb = gmat.sum(axis=0)
            return (gx, gk) if bias is None else (gx, gk, gb)

        return fn

    return apply_op(out, inputs, make_backward)


def conv_transpose2d(x: Tensor, kernel: Tensor, *, stride: int = 1) -> Tensor:
    """Transposed 2-D convolution of [B,Cin,H,W] with [Cin,Cout,k,k] kernels.

    Output spatial dims are (H-1)*stride + k; with k = stride = 2 this is an
    exact 2x upsampling. The backward pass with respect to the input is the
    matching strided cross-correlation.
    """
    B, Cin, H, W = _require_4d(x, "conv_transpose2d")
    if kernel.data.ndim != 4 or kernel.data.shape[2] != kernel.data.shape[3]:
        raise ShapeError(
            f"conv_transpose2d: kernel must be [Cin,Cout,k,k], got {kernel.shape}"
        )
    Ck, Cout, k, _ = kernel.data.shape
    if Ck != Cin:
        raise ShapeError(
            f"conv_transpose2d: input has {Cin} channels but kernel expects {Ck}"
        )
    if stride < 1:
        raise ValueError(f"conv_transpose2d: stride must be >= 1, got {stride}")

    Ho = (H - 1) * stride + k
    Wo = (W - 1) * stride + k
    xmat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(B * H * W, Cin)
    kmat = kernel.data.reshape(Cin, Cout * k * k)
    prod = (xmat @ kmat).reshape(B, H, W, Cout, k, k).transpose(0, 3, 1, 2, 4, 5)
    out = np.zeros((B, Cout, Ho, Wo), dtype=prod.dtype)
    for u in range(k):
        for v in range(k):
            out[:, :, u : u + H * stride : stride, v : v + W * stride : stride] += prod[
                :, :, :, :, u, v
            ]

    def make_backward(needs):
        def fn(g):
            gwin = sliding_window_view(g, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
            gmat = np.ascontiguousarray(gwin.transpose(0, 2, 3, 1, 4, 5)).reshape(
                B * H * W, Cout * k * k
            )
            gx = gk = None
            if needs[0]:
                gx = np.ascontiguousarray(
                    (gmat @ kmat.T).reshape(B, H, W, Cin).transpose(0, 3, 1, 2)
                )
            if needs[1]:
                gk = (xmat.T @ gmat).reshape(Cin, Cout, k, k)
            return (gx, gk)

        return fn

    return apply_op(out, (x, kernel), make_backward)


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; H and W must divide by the window.

    Gradient is routed to the first maximum in row-major window order, which
    keeps tie handling deterministic.
    """
    B, C, H, W = _require_4d(x, "maxpool2d")
    if H % window or W % window:
        raise ShapeError(
            f"maxpool2d: spatial dims {H}x{W} not divisible by window {window}"
        )
    Ho, Wo = H // window, W // window
    tiles = (
        x.data.reshape(B, C, Ho, window, Wo, window)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(B, C, Ho, Wo, window * window)
    )
    idx = tiles.argmax(axis=-1)
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def make_backward(needs):
        def fn(g):
            routed = np.zeros((B, C, Ho, Wo, window * window), dtype=g.dtype)
            np.put_along_axis(routed, idx[..., None], g[..., None], axis=-1)
            gx = (
                routed.reshape(B, C, Ho, Wo, window, window)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(B, C, H, W)
            )
            return (gx,)

        return fn

    return apply_op(np.ascontiguousarray(out), (x,), make_backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two [B,C,H,W] tensors along the channel axis."""
    Ba, Ca, Ha, Wa = _require_4d(a, "concat_channels")
    Bb, Cb, Hb, Wb = _require_4d(b, "concat_channels")
    if (Ba, Ha, Wa) != (Bb, Hb, Wb):
        raise ShapeError(
            f"concat_channels: batch/spatial dims differ: {a.shape} vs {b.shape}"
        )
    out = np.concatenate([a.data, b.data], axis=1)

    def make_backward(needs):
        def fn(g):
            ga = np.ascontiguousarray(g[:, :Ca]) if needs[0] else None
            gb = np.ascontiguousarray(g[:, Ca:]) if needs[1] else None
            return (ga, gb)

        return fn

    return apply_op(out, (a, b), make_backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def make_backward(needs):
        def fn(g):
            return (g * mask,)

        return fn

    return apply_op(np.maximum(x.data, 0), (x,), make_backward)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # Split by sign so exp never overflows.
    s = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))), np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    s = s.astype(xd.dtype)

    def make_backward(needs):
        def fn(g):
            return (g * s * (1.0 - s),)

        return fn

    return apply_op(s, (x,), make_backward)


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over the channel axis of a [B,C,H,W] tensor."""
    _require_4d(x, "softmax_channels")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def make_backward(needs):
        def fn(g):
            return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

        return fn

    return apply_op(s, (x,), make_backward)


def cross_entropy_loss(logits: Tensor, target) -> Tensor:
    """Mean per-pixel categorical cross-entropy against integer class maps.

    `logits` is [B,C,H,W]; `target` is [B,H,W] of class indices in [0, C).
    Softmax is applied internally (pass raw logits). Returns a scalar tensor.
    """
    B, C, H, W = _require_4d(logits, "cross_entropy_loss")
    if C < 2:
        raise ShapeError(f"cross_entropy_loss: need at least 2 classes, got {C}")
    t = np.asarray(target.data if isinstance(target, Tensor) else target)
    if not np.issubdtype(t.dtype, np.integer):
        t = t.astype(np.int64)
    if t.shape != (B, H, W):
        raise ShapeError(
            f"cross_entropy_loss: target shape {t.shape} != {(B, H, W)}"
        )
    if t.min() < 0 or t.max() >= C:
        raise ValueError(
            f"cross_entropy_loss: class indices must lie in [0, {C}), "
            f"got range [{t.min()}, {t.max()}]"
        )

    xd = logits.data
    m = xd.max(axis=1)
    shifted = xd - m[:, None]
    lse = np.log(np.exp(shifted).sum(axis=1)) + m
    picked = np.take_along_axis(xd, t[:, None], axis=1)[:, 0]
    n_pixels = B * H * W
    loss = np.asarray((lse - picked).mean(), dtype=xd.dtype)

    def make_backward(needs):
        def fn(g):
            e = np.exp(shifted)
            p = e / e.sum(axis=1, keepdims=True)
            scale = g / n_pixels
            gl = p * scale
            idx = t[:, None]
            np.put_along_axis(
                gl, idx, np.take_along_axis(gl, idx, axis=1) - scale, axis=1
            )
            return (gl,)

        return fn

    return apply_op(loss, (logits,), make_backward)
