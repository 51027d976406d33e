"""Fine alignment: multi-scale cost volumes, the hourglass score network,
soft disparity readout, significant-channel selection, and sparse
horizontal warping.

Only levels 1..3 enter the cost volumes (the coarsest level carries too
little disparity information); the warp touches only channels whose
main/side difference crosses the threshold, freezing the rest bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .nnops import conv2d, conv2d_transpose, leaky_relu
from .tensor import avg_pool2
from .weights import NetworkWeights, refinement_layer_table, validate_weights

COST_VOLUME_LEVELS = (1, 2, 3)


@dataclass(frozen=True)
class CostVolume:
    """Channel concatenation h_x || h_y* at one pyramid level."""

    level: int
    samples: np.ndarray

    @property
    def feature_channels(self) -> int:
        return self.samples.shape[0] // 2


def build_cost_volume(h_x_i: np.ndarray, h_y_star_i: np.ndarray, level: int) -> CostVolume:
    """Concatenate main and coarsely aligned side features along channels."""
    if level not in COST_VOLUME_LEVELS:
        raise InputError(f"cost volumes exist for levels {COST_VOLUME_LEVELS}, got {level}")
    a = np.asarray(h_x_i, dtype=np.float32)
    b = np.asarray(h_y_star_i, dtype=np.float32)
    if a.shape != b.shape or a.ndim != 3:
        raise InputError(f"cost volume inputs must match: {a.shape} vs {b.shape}")
    return CostVolume(level=level, samples=np.concatenate([a, b], axis=0))


@dataclass(frozen=True)
class ChannelSelection:
    """Significant-channel set G with its threshold and norm mode."""

    channels: tuple
    mu: float
    mode: str
    total: int

    def __post_init__(self):
        ch = tuple(sorted(int(c) for c in self.channels))
        if ch and (ch[0] < 0 or ch[-1] >= self.total):
            raise InputError("selected channels out of range")
        object.__setattr__(self, "channels", ch)

    @property
    def complement(self) -> tuple:
        sel = set(self.channels)
        return tuple(c for c in range(self.total) if c not in sel)

    def __len__(self) -> int:
        return len(self.channels)


def select_channels(
    h_x_i: np.ndarray, h_y_star_i: np.ndarray, mu: float, mode: str = "rms"
) -> ChannelSelection:
    """Channels whose main/side difference norm reaches the threshold.

    ``rms`` compares sqrt(mean((a-b)^2)) per channel, making mu
    resolution-independent; ``raw_l2`` uses the plain Euclidean norm.
    """
    a = np.asarray(h_x_i, dtype=np.float64)
    b = np.asarray(h_y_star_i, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    if mode == "rms":
        norms = np.sqrt(sq.mean(axis=(1, 2)))
    elif mode == "raw_l2":
        norms = np.sqrt(sq.sum(axis=(1, 2)))
    else:
        raise InputError(f"unknown selection mode {mode!r}")
    sel = tuple(int(g) for g in np.flatnonzero(norms >= mu))
    return ChannelSelection(channels=sel, mu=float(mu), mode=mode, total=a.shape[0])


@dataclass(frozen=True)
class DisparityField:
    """Hypothesis scores at level 1 plus per-level continuous maps."""

    score_volume: np.ndarray
    hypotheses: tuple
    dp: dict

    def __post_init__(self):
        if self.score_volume.shape[0] != len(self.hypotheses):
            raise InputError("score volume depth must equal hypothesis count")


def hourglass_forward(volumes, weights: NetworkWeights) -> np.ndarray:
    """Forward pass of the grouped hourglass network.

    Takes the cost volumes for levels 1..3 and emits a (D, H1, W1) score
    volume. Deterministic: same volumes and weights give bit-identical
    scores.
    """
    vols = {v.level: v for v in volumes}
    if sorted(vols) != list(COST_VOLUME_LEVELS):
        raise InputError(f"need cost volumes for levels {COST_VOLUME_LEVELS}")
    c2 = vols[1].samples.shape[0]
    if c2 != 2 * weights.channels:
        raise InputError(
            f"cost volume channels {c2} do not match weights C={weights.channels}"
        )
    for i in (2, 3):
        prev = vols[i - 1].samples.shape[1:]
        cur = vols[i].samples.shape[1:]
        if (prev[0] != 2 * cur[0]) or (prev[1] != 2 * cur[1]):
            raise InputError("cost volumes must come from one pyramid (halving dims)")
        if vols[i].samples.shape[0] != c2:
            raise InputError("cost volumes must share the channel count")
    validate_weights(
        weights,
        refinement_layer_table(weights.channels, weights.num_hypotheses,
                               weights.groups, weights.hidden),
    )
    g = weights.groups
    act = leaky_relu

    def p(name):
        return weights.get(f"refine.{name}.weight"), weights.get(f"refine.{name}.bias")

    feats = {}
    for i in COST_VOLUME_LEVELS:
        w, b = p(f"level{i}.proj")
        x = act(conv2d(vols[i].samples, w, b, groups=g))
        for j in (1, 2):
            w1, b1 = p(f"level{i}.block{j}.conv1")
            w2, b2 = p(f"level{i}.block{j}.conv2")
            y = conv2d(act(conv2d(x, w1, b1, groups=g)), w2, b2, groups=g)
            x = act(x + y)
        feats[i] = x

    w, b = p("down1")
    e2 = conv2d(feats[1], w, b, stride=2, groups=g) + feats[2]
    w, b = p("fuse2")
    e2 = act(conv2d(act(e2), w, b, groups=g))
    w, b = p("down2")
    e3 = conv2d(e2, w, b, stride=2, groups=g) + feats[3]
    w, b = p("fuse3")
    e3 = act(conv2d(act(e3), w, b, groups=g))

    w, b = p("up2")
    d2 = act(conv2d_transpose(e3, w, b, stride=2, groups=g) + e2)
    w, b = p("up1")
    d1 = act(conv2d_transpose(d2, w, b, stride=2, groups=g) + feats[1])
    w, b = p("head")
    return conv2d(d1, w, b, groups=1)


def soft_disparity(score_volume: np.ndarray, hypotheses) -> np.ndarray:
    """Softmax-weighted average of the hypothesis values per position."""
    hyp = np.asarray(hypotheses, dtype=np.float64)
    if hyp.ndim != 1 or hyp.size < 1:
        raise InputError("need at least one disparity hypothesis")
    s = np.asarray(score_volume, dtype=np.float64)
    if s.ndim != 3 or s.shape[0] != hyp.size:
        raise InputError(
            f"score volume {s.shape} does not match {hyp.size} hypotheses"
        )
    s = s - s.max(axis=0, keepdims=True)
    e = np.exp(s)
    probs = e / e.sum(axis=0, keepdims=True)
    return np.tensordot(hyp, probs, axes=(0, 0))


def downsample_disparity(dp_1: np.ndarray, i: int) -> np.ndarray:
    """Average-pool dp_1 down to level i, halving values per level.

    Disparity is measured in cells of the current level, so each 2x pooling
    step also halves the value.
    """
    if i not in (2, 3, 4):
        raise InputError("target level must be in {2, 3, 4}")
    dp = np.asarray(dp_1, dtype=np.float64)
    for _ in range(i - 1):
        dp = avg_pool2(dp) * 0.5
    return dp


def sparse_warp(h_y_star: np.ndarray, dp_i: np.ndarray, selection, direction: int = 1) -> np.ndarray:
    """Horizontally warp only the selected channels; freeze the rest.

    Selected channels sample at column ``w + direction * dp`` with bilinear
    interpolation and edge clamping. Integer disparities reduce to exact
    index shifts; unselected channels are copied bit-exactly.
    """
    x = np.asarray(h_y_star)
    if x.ndim != 3:
        raise InputError("feature map must be (C,H,W)")
    c, h, w = x.shape
    dp = np.asarray(dp_i, dtype=np.float64)
    if dp.shape != (h, w):
        raise InputError(f"disparity dims {dp.shape} do not match map {h}x{w}")
    if direction not in (1, -1):
        raise InputError("direction must be +1 or -1")
    if isinstance(selection, ChannelSelection):
        if selection.total != c:
            raise InputError("selection built for a different channel count")
        sel = selection.channels
    else:
        sel = tuple(sorted(int(g) for g in selection))
        if sel and (sel[0] < 0 or sel[-1] >= c):
            raise InputError("selected channels out of range")

    out = x.copy()
    if not sel:
        return out
    cols = np.clip(np.arange(w, dtype=np.float64)[None, :] + direction * dp, 0.0, w - 1.0)
    c0 = np.floor(cols).astype(np.int64)
    c1 = np.minimum(c0 + 1, w - 1)
    frac = cols - c0
    rows = np.arange(h)[:, None]
    for g in sel:
        ch = x[g]
        g0 = ch[rows, c0]
        g1 = ch[rows, c1]
        blended = (1.0 - frac) * g0 + frac * g1
        out[g] = np.where(frac == 0.0, g0, blended).astype(x.dtype)
    return out
