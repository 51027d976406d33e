"""Benchmark harness: races the row-restricted matcher against the greedy
full-search baseline and times the refinement and fusion forward passes.

Defaults to the 128x416x512 feature anchor (an 832x1024 image). FLOP
figures cover the cascade stages only and are not comparable to
whole-codec numbers.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .config import PipelineConfig
from .errors import InputError, InternalError
from .fusion import run_fff
from .matcher import SearchWindow, match_full_oracle, match_row_restricted
from .refine import build_cost_volume, hourglass_forward
from .weights import (
    count_parameters,
    fff_layer_table,
    random_weights,
    refinement_layer_table,
)

ANCHOR_DIMS = (128, 416, 512)


@dataclass
class BenchReport:
    feature_dims: tuple
    patch_size: int
    d_max: int
    slack: int
    repeats: int
    candidates_per_patch_oracle: int
    candidates_per_patch_row: int
    candidates_per_patch_oracle_all_levels: int
    reduction_factor: float
    t_match_row_s: float
    t_match_oracle_s: float
    matcher_speedup: float
    t_refine_s: float
    t_fff_s: float
    refine_params: int
    fff_params: int
    cascade_gflops: float
    flops_note: str = (
        "cascade stages only (matcher + refinement + fusion); not comparable "
        "to end-to-end codec FLOP counts"
    )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def summary(self) -> str:
        c, h, w = self.feature_dims
        lines = [
            f"feature dims        {c}x{h}x{w} (B={self.patch_size}, "
            f"d_max={self.d_max}, slack={self.slack}, repeats={self.repeats})",
            f"candidates/patch    oracle {self.candidates_per_patch_oracle:,} | "
            f"row-restricted {self.candidates_per_patch_row} | "
            f"oracle all-levels {self.candidates_per_patch_oracle_all_levels:,}",
            f"analytic reduction  {self.reduction_factor:,.1f}x",
            f"match (row)         {self.t_match_row_s:.3f} s",
        ]
        if self.t_match_oracle_s > 0:
            lines.append(f"match (oracle)      {self.t_match_oracle_s:.3f} s")
            lines.append(f"measured speedup    {self.matcher_speedup:,.1f}x")
        lines += [
            f"refinement forward  {self.t_refine_s:.3f} s "
            f"({self.refine_params / 1e6:.3f}M params)",
            f"fusion forward      {self.t_fff_s:.3f} s "
            f"({self.fff_params / 1e6:.3f}M params)",
            f"cascade compute     ~{self.cascade_gflops:,.1f} GFLOP ({self.flops_note})",
        ]
        return "\n".join(lines)


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _matcher_gflops(c, h, w, b) -> float:
    v = w - b + 1
    n = w // b
    return 2.0 * (h // b) * n * v * (c * b * b) / 1e9


def _refine_gflops(c, h1, w1, groups, hidden, d) -> float:
    total = 0.0
    for i in (1, 2, 3):
        hw = (h1 >> (i - 1)) * (w1 >> (i - 1))
        total += 2.0 * hidden * (2 * c // groups) * 9 * hw  # projection
        total += 4 * 2.0 * hidden * (hidden // groups) * 9 * hw  # residual blocks
    for lvl in (2, 3):  # down + fuse at the target level
        hw = (h1 >> (lvl - 1)) * (w1 >> (lvl - 1))
        total += 2 * 2.0 * hidden * (hidden // groups) * 9 * hw
    for lvl in (2, 1):  # transposed upsampling emits at the target level
        hw = (h1 >> (lvl - 1)) * (w1 >> (lvl - 1))
        total += 2.0 * hidden * (hidden // groups) * 16 * hw
    total += 2.0 * d * hidden * h1 * w1  # head
    return total / 1e9


def _fff_gflops(c, h1, w1) -> float:
    total = 0.0
    for i in (4, 3, 2, 1):
        hw = (h1 >> (i - 1)) * (w1 >> (i - 1))
        cin = 2 * c if i == 4 else 3 * c
        cout = c if i > 1 else 3
        total += 2.0 * cin * 9 * hw
        total += 2.0 * c * cin * hw
        total += 2.0 * c * 9 * 4 * hw
        total += 2.0 * cout * c * 4 * hw
    return total / 1e9


def run_bench(config: PipelineConfig | None = None, dims: tuple = ANCHOR_DIMS,
              repeats: int = 3, include_oracle: bool = True, seed: int = 0) -> BenchReport:
    """Time the cascade stages on random features of the given dims."""
    config = config or PipelineConfig()
    c, h1, w1 = dims
    b = config.B
    if repeats < 1:
        raise InputError("repeats must be >= 1")
    if h1 % b or w1 % b or h1 % 8 or w1 % 8:
        raise InputError("feature dims must divide by the patch size and by 8")
    if config.d_max + config.slack >= w1:
        raise InputError("search window exceeds the bench feature width")

    rng = np.random.default_rng(seed)
    h_x1 = (rng.standard_normal((c, h1, w1)) * 0.5).astype(np.float32)
    h_y1 = (rng.standard_normal((c, h1, w1)) * 0.5).astype(np.float32)
    win = SearchWindow(d_max=config.d_max, slack=config.slack, direction=config.direction)

    t_row = _median_time(lambda: match_row_restricted(h_x1, h_y1, b, win), repeats)
    t_oracle = 0.0
    if include_oracle:
        t_oracle = _median_time(lambda: match_full_oracle(h_x1, h_y1, b), repeats)

    cand_oracle = (h1 - b + 1) * (w1 - b + 1)
    cand_row = config.d_max + config.slack + 1
    cand_all = 0
    for i in (1, 2, 3, 4):
        bi = max(b >> (i - 1), 1)
        hi, wi = h1 >> (i - 1), w1 >> (i - 1)
        cand_all += (hi - bi + 1) * (wi - bi + 1)
    reduction = cand_oracle / cand_row
    if reduction != (h1 - b + 1) * (w1 - b + 1) / (config.d_max + config.slack + 1):
        raise InternalError("analytic reduction factor disagrees with candidate counts")

    # refinement forward on random cost volumes from one synthetic pyramid
    weights = random_weights(c, config.num_hypotheses, seed=seed,
                             groups=config.groups, hidden=config.hidden_width)
    vols = []
    pyr_x = []
    aligned = []
    for i in (1, 2, 3, 4):
        hi, wi = h1 >> (i - 1), w1 >> (i - 1)
        xi = (rng.standard_normal((c, hi, wi)) * 0.5).astype(np.float32)
        yi = (rng.standard_normal((c, hi, wi)) * 0.5).astype(np.float32)
        pyr_x.append(xi)
        aligned.append(yi)
        if i <= 3:
            vols.append(build_cost_volume(xi, yi, i))
    t_refine = _median_time(lambda: hourglass_forward(vols, weights), repeats)
    t_fff = _median_time(lambda: run_fff(pyr_x, aligned, weights), repeats)

    gflops = (
        _matcher_gflops(c, h1, w1, b)
        + _refine_gflops(c, h1, w1, config.groups, config.hidden_width, config.num_hypotheses)
        + _fff_gflops(c, h1, w1)
    )

    return BenchReport(
        feature_dims=(c, h1, w1),
        patch_size=b,
        d_max=config.d_max,
        slack=config.slack,
        repeats=repeats,
        candidates_per_patch_oracle=cand_oracle,
        candidates_per_patch_row=cand_row,
        candidates_per_patch_oracle_all_levels=cand_all,
        reduction_factor=reduction,
        t_match_row_s=t_row,
        t_match_oracle_s=t_oracle,
        matcher_speedup=(t_oracle / t_row) if t_oracle > 0 else 0.0,
        t_refine_s=t_refine,
        t_fff_s=t_fff,
        refine_params=count_parameters(
            refinement_layer_table(c, config.num_hypotheses, config.groups, config.hidden_width)
        ),
        fff_params=count_parameters(fff_layer_table(c, config.groups)),
        cascade_gflops=gflops,
    )
