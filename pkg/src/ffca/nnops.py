"""Minimal convolution primitives used by the refinement and fusion stages.

All routines are pure functions on (C, H, W) float32 arrays, implemented as
shift-and-accumulate matrix products so memory stays O(input) even at the
832x1024 benchmark size.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError


def leaky_relu(x: np.ndarray, slope: float = 0.1) -> np.ndarray:
    return np.where(x >= 0, x, np.float32(slope) * x)


def conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    groups: int = 1,
) -> np.ndarray:
    """Grouped 2D convolution with zero 'same' padding (odd kernels).

    ``weight`` has shape (Cout, Cin/groups, kh, kw).
    """
    cin, h, w = x.shape
    cout, cing, kh, kw = weight.shape
    if cin != cing * groups:
        raise InputError(
            f"conv2d: input channels {cin} != {cing} * groups {groups}"
        )
    if cout % groups:
        raise InputError("conv2d: output channels must divide by groups")
    ph, pw = kh // 2, kw // 2
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w + 2 * pw - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    cog = cout // groups
    out = np.empty((cout, ho * wo), dtype=np.float32)
    for g in range(groups):
        xg = xp[g * cing : (g + 1) * cing]
        acc = np.zeros((cog, ho * wo), dtype=np.float32)
        wg = weight[g * cog : (g + 1) * cog]
        for di in range(kh):
            for dj in range(kw):
                tap = xg[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride]
                acc += wg[:, :, di, dj] @ tap.reshape(cing, -1)
        out[g * cog : (g + 1) * cog] = acc
    return out.reshape(cout, ho, wo) + bias[:, None, None]


def conv2d_transpose(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    stride: int = 2,
    groups: int = 1,
) -> np.ndarray:
    """Grouped transposed convolution that exactly doubles the spatial dims.

    Implemented as zero-stuffing followed by a regular convolution; the
    kernel (k=4, s=2) is stored in the orientation of that equivalent
    forward convolution.
    """
    cin, h, w = x.shape
    cout, cing, kh, kw = weight.shape
    if kh != 2 * stride or kw != 2 * stride:
        raise InputError("conv2d_transpose expects kernel size 2*stride")
    if cin != cing * groups or cout % groups:
        raise InputError("conv2d_transpose: bad channel/group configuration")
    pad = kh - 1 - (kh - stride) // 2  # output pad 1 -> conv pad 2 for k=4,s=2
    stuffed = np.zeros((cin, (h - 1) * stride + 1, (w - 1) * stride + 1), dtype=x.dtype)
    stuffed[:, ::stride, ::stride] = x
    xp = np.pad(stuffed, ((0, 0), (pad, pad), (pad, pad)))
    ho, wo = h * stride, w * stride
    cog = cout // groups
    out = np.empty((cout, ho * wo), dtype=np.float32)
    for g in range(groups):
        xg = xp[g * cing : (g + 1) * cing]
        acc = np.zeros((cog, ho * wo), dtype=np.float32)
        wg = weight[g * cog : (g + 1) * cog]
        for di in range(kh):
            for dj in range(kw):
                tap = xg[:, di : di + ho, dj : dj + wo]
                acc += wg[:, :, di, dj] @ tap.reshape(cing, -1)
        out[g * cog : (g + 1) * cog] = acc
    return out.reshape(cout, ho, wo) + bias[:, None, None]


def depthwise_conv3(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Per-channel 3x3 convolution, zero 'same' padding. weight: (C, 3, 3)."""
    c, h, w = x.shape
    if weight.shape != (c, 3, 3):
        raise InputError(f"depthwise weight must be ({c},3,3), got {weight.shape}")
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros_like(x)
    for di in range(3):
        for dj in range(3):
            out += weight[:, di, dj][:, None, None] * xp[:, di : di + h, dj : dj + w]
    return out + bias[:, None, None]


def upsample_nearest2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
