"""Staged feature fusion: shuffle blocks plus lightweight upsampling, run
from the coarsest level down to a full-resolution residual that is added to
the baseline reconstruction.

Stage i consumes the previous stage's output together with the aligned
feature pair at level i and emits features at level i-1 resolution; stage 1
emits the 3-channel image-domain residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .nnops import conv2d, depthwise_conv3, leaky_relu, upsample_nearest2
from .tensor import ImagePlane
from .weights import NetworkWeights


@dataclass(frozen=True)
class FusionState:
    """Output of one fusion stage, one upsample ahead of its level."""

    level: int
    samples: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.samples)):
            raise InputError("fusion state contains non-finite samples")


def channel_shuffle(t: np.ndarray, groups: int) -> np.ndarray:
    """Interleave channel groups (the transpose permutation); values untouched."""
    x = np.asarray(t)
    if x.ndim != 3:
        raise InputError("feature map must be (C,H,W)")
    c = x.shape[0]
    if groups < 1 or c % groups:
        raise InputError(f"channels {c} not divisible by groups {groups}")
    return (
        x.reshape(groups, c // groups, x.shape[1], x.shape[2])
        .transpose(1, 0, 2, 3)
        .reshape(c, x.shape[1], x.shape[2])
        .copy()
    )


def fff_stage(prev, h_x_i: np.ndarray, h_y_ss_i: np.ndarray,
              weights: NetworkWeights, level: int) -> FusionState:
    """One fusion stage: concat -> shuffle block -> 2x lightweight upsample."""
    if level not in (1, 2, 3, 4):
        raise InputError("stage level must be 1..4")
    a = np.asarray(h_x_i, dtype=np.float32)
    b = np.asarray(h_y_ss_i, dtype=np.float32)
    if a.shape != b.shape or a.ndim != 3:
        raise InputError(f"stage inputs must match: {a.shape} vs {b.shape}")
    if level == 4:
        if prev is not None:
            raise InputError("stage 4 takes no previous state")
        parts = [a, b]
    else:
        if prev is None:
            raise InputError(f"stage {level} needs the stage {level + 1} output")
        if prev.samples.shape[1:] != a.shape[1:]:
            raise InputError(
                f"previous state dims {prev.samples.shape[1:]} do not match "
                f"level {level} dims {a.shape[1:]}"
            )
        parts = [prev.samples, a, b]
    x = np.concatenate(parts, axis=0)

    g = weights.groups

    def p(name):
        w = weights.get(f"fff.stage{level}.{name}.weight")
        return w, weights.get(f"fff.stage{level}.{name}.bias")

    w_dw, b_dw = p("dw")
    if w_dw.shape[0] != x.shape[0]:
        raise InputError(
            f"layer fff.stage{level}.dw.weight: expected {x.shape[0]} channels, "
            f"got {w_dw.shape[0]}"
        )
    x = channel_shuffle(x, g)
    x = leaky_relu(depthwise_conv3(x, w_dw, b_dw))
    w_pw, b_pw = p("pw")
    if w_pw.shape[1] != x.shape[0]:
        raise InputError(f"layer fff.stage{level}.pw.weight: channel mismatch")
    x = leaky_relu(conv2d(x, w_pw, b_pw))

    x = upsample_nearest2(x)
    w_ud, b_ud = p("up_dw")
    if w_ud.shape[0] != x.shape[0]:
        raise InputError(f"layer fff.stage{level}.up_dw.weight: channel mismatch")
    x = leaky_relu(depthwise_conv3(x, w_ud, b_ud))
    w_up, b_up = p("up_pw")
    if w_up.shape[1] != x.shape[0]:
        raise InputError(f"layer fff.stage{level}.up_pw.weight: channel mismatch")
    x = conv2d(x, w_up, b_up)
    return FusionState(level=level, samples=x)


def run_fff(pyr_x_levels, aligned_levels, weights: NetworkWeights) -> np.ndarray:
    """Chain stages 4 -> 1; returns the 3-channel image-domain residual."""
    state = None
    for i in (4, 3, 2, 1):
        state = fff_stage(state, pyr_x_levels[i - 1], aligned_levels[i - 1], weights, i)
    return state.samples


def fuse_reconstruct(x_hat: ImagePlane, phi_1: np.ndarray) -> ImagePlane:
    """Final output: baseline reconstruction plus residual, clamped to [0,1]."""
    r = np.asarray(phi_1, dtype=np.float32)
    if r.shape != x_hat.samples.shape:
        raise InputError(
            f"residual dims {r.shape} do not match image {x_hat.samples.shape}"
        )
    return ImagePlane(np.clip(x_hat.samples + r, 0.0, 1.0))
