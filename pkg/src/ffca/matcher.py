"""Coarse stereo alignment: row-restricted patch matching on level-1
features, a greedy full-search baseline, index rescaling for levels 2..4,
and side-feature rearrangement.

Matching minimizes cosine distance between non-overlapping target patches
and stride-1 candidate windows of the side map. Row-restricted search scans
only the target's own row band within a bounded disparity range; the greedy
baseline scans the whole map and exists for benchmarks and comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

_ZERO_NORM_EPS = 1e-12


@dataclass(frozen=True)
class SearchWindow:
    """Disparity search bounds, in cells of the level being matched.

    ``direction=+1`` means side content sits at smaller column indices than
    in the main view (left main, right side); ``slack`` allows a few cells
    against the disparity direction to absorb rectification error.
    """

    d_max: int = 64
    slack: int = 4
    direction: int = 1

    def __post_init__(self):
        if self.d_max < 0 or self.slack < 0:
            raise InputError("d_max and slack must be >= 0")
        if self.direction not in (1, -1):
            raise InputError("direction must be +1 or -1")


@dataclass(frozen=True)
class MatchIndexMap:
    """Per-patch match (m,n) -> (u,v) with cosine-distance scores."""

    u: np.ndarray
    v: np.ndarray
    rho: np.ndarray
    level: int
    patch_size: int

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.int64)
        v = np.asarray(self.v, dtype=np.int64)
        rho = np.asarray(self.rho, dtype=np.float64)
        if u.shape != v.shape or u.shape != rho.shape or u.ndim != 2:
            raise InputError("u, v, rho must share one (M, N) shape")
        if not np.all(np.isfinite(rho)):
            raise InputError("match scores must be finite")
        for arr in (u, v, rho):
            arr.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "rho", rho)

    @property
    def grid_shape(self) -> tuple:
        return self.u.shape

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("m,n,u,v,rho\n")
            m_rows, n_cols = self.u.shape
            for m in range(m_rows):
                for n in range(n_cols):
                    f.write(
                        f"{m},{n},{self.u[m, n]},{self.v[m, n]},{float(self.rho[m, n])!r}\n"
                    )


def cosine_distance(a, b) -> float:
    """1 - <a,b>/(|a||b|); flat (near-zero-norm) inputs score 1.0."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise InputError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise InputError("patches must be non-empty")
    sa = float(np.dot(a, a))
    sb = float(np.dot(b, b))
    if math.sqrt(sa) < _ZERO_NORM_EPS or math.sqrt(sb) < _ZERO_NORM_EPS:
        return 1.0
    return 1.0 - float(np.dot(a, b)) / math.sqrt(sa * sb)


def _check_match_inputs(h_x: np.ndarray, h_y: np.ndarray, B: int):
    if h_x.ndim != 3 or h_y.ndim != 3:
        raise InputError("feature maps must be (C,H,W)")
    if h_x.shape != h_y.shape:
        raise InputError(f"shape mismatch: {h_x.shape} vs {h_y.shape}")
    _, h, w = h_x.shape
    if B < 1 or B > h or B > w:
        raise InputError(f"patch size {B} out of range for {h}x{w} map")
    if h % B or w % B:
        raise InputError(f"patch size {B} must divide map dims {h}x{w}")


def _band_matrix(h: np.ndarray, u: int, B: int, dtype) -> np.ndarray:
    """Row band u stacked as a (C*B, W) column matrix.

    Column w holds the feature column (all channels, all B band rows) at
    map column w; any B consecutive columns form one flattened window.
    """
    c, _, w = h.shape
    return h[:, u : u + B, :].astype(dtype, copy=False).reshape(c * B, w)


def _target_columns(band_k: np.ndarray, n_cols: int, B: int) -> np.ndarray:
    """Targets of one band as (B, N, C*B): slice j holds target column j.

    Contiguous per slice so every product in :func:`_band_dots` stays on
    the BLAS fast path.
    """
    l = band_k.shape[0]
    return np.ascontiguousarray(
        band_k.reshape(l, n_cols, B).transpose(2, 1, 0)
    )


def _band_dots(targets_jnl: np.ndarray, band_k: np.ndarray) -> np.ndarray:
    """Inner products of every target with every stride-1 window.

    The dot of target n with the window at v decomposes over column
    offsets j into (N, W) matrix products of target columns against the
    band matrix.
    """
    B, n, _ = targets_jnl.shape
    w = band_k.shape[1]
    v = w - B + 1
    dots = np.zeros((n, v), dtype=np.result_type(targets_jnl, band_k))
    for j in range(B):
        m = targets_jnl[j] @ band_k
        dots += m[:, j : j + v]
    return dots


def _window_sqnorms(band_k: np.ndarray, B: int) -> np.ndarray:
    colsq = np.einsum("lw,lw->w", band_k, band_k)
    cs = np.concatenate([[0.0], np.cumsum(colsq, dtype=np.float64)])
    return cs[B:] - cs[:-B]


def _score_rows(dots: np.ndarray, st: np.ndarray, sw: np.ndarray) -> np.ndarray:
    """Cosine distances from dot products and squared norms."""
    denom = np.sqrt(st[:, None] * sw[None, :])
    scores = 1.0 - dots / np.where(denom > 0.0, denom, 1.0)
    flat = (np.sqrt(st)[:, None] < _ZERO_NORM_EPS) | (
        np.sqrt(sw)[None, :] < _ZERO_NORM_EPS
    )
    return np.where(flat, 1.0, scores)


def candidate_span(n: int, B: int, win: SearchWindow, width: int) -> tuple:
    """Inclusive column interval [lo, hi] searched for target column n.

    The raw span is v = n*B - direction*d for d in [-slack, d_max]; clamping
    to the map collapses out-of-range candidates onto the boundary.
    """
    anchor = n * B
    if win.direction == 1:
        lo_raw, hi_raw = anchor - win.d_max, anchor + win.slack
    else:
        lo_raw, hi_raw = anchor - win.slack, anchor + win.d_max
    return max(0, lo_raw), min(width - B, hi_raw)


def _pick(sub_scores: np.ndarray, lo: int, anchor: int) -> tuple:
    """Index of the best candidate: min score, then min |d|, then min v."""
    mv = sub_scores.min()
    cand = lo + np.flatnonzero(sub_scores == mv)
    order = np.lexsort((cand, np.abs(cand - anchor)))
    return int(cand[order[0]]), float(mv)


def match_row_restricted(
    h_x1: np.ndarray, h_y1: np.ndarray, B: int, win: SearchWindow
) -> MatchIndexMap:
    """Match every target patch against its own row band of the side map.

    All candidates of one row are scored in a single batched inner-product
    pass; the winning score is then recomputed through the scalar
    :func:`cosine_distance` path so the stored rho is bit-identical to a
    per-candidate scan.
    """
    h_x1 = np.asarray(h_x1)
    h_y1 = np.asarray(h_y1)
    _check_match_inputs(h_x1, h_y1, B)
    _, h, w = h_x1.shape
    if win.d_max + win.slack >= w:
        raise InputError("search window exceeds map width")
    m_rows, n_cols = h // B, w // B

    u_out = np.empty((m_rows, n_cols), dtype=np.int64)
    v_out = np.empty((m_rows, n_cols), dtype=np.int64)
    rho_out = np.empty((m_rows, n_cols), dtype=np.float64)

    for m in range(m_rows):
        kx = _band_matrix(h_x1, m * B, B, np.float64)
        ky = _band_matrix(h_y1, m * B, B, np.float64)
        # targets are the non-overlapping column blocks of the target band
        dots = _band_dots(_target_columns(kx, n_cols, B), ky)
        st = _window_sqnorms(kx, B)[::B]
        sw = _window_sqnorms(ky, B)
        scores = _score_rows(dots, st, sw)
        for n in range(n_cols):
            lo, hi = candidate_span(n, B, win, w)
            v_best, _ = _pick(scores[n, lo : hi + 1], lo, n * B)
            u_out[m, n] = m * B
            v_out[m, n] = v_best
            rho_out[m, n] = cosine_distance(
                h_x1[:, m * B : (m + 1) * B, n * B : (n + 1) * B],
                h_y1[:, m * B : (m + 1) * B, v_best : v_best + B],
            )
    return MatchIndexMap(u=u_out, v=v_out, rho=rho_out, level=1, patch_size=B)


def match_full_oracle(h_x1: np.ndarray, h_y1: np.ndarray, B: int) -> MatchIndexMap:
    """Greedy full-search baseline: every window of the side map competes.

    Ties break toward smaller u, then smaller v. Interior scoring runs in
    float32 for throughput (this routine exists to be raced against
    :func:`match_row_restricted`); winning scores are recomputed in the
    scalar float64 path.
    """
    h_x1 = np.asarray(h_x1)
    h_y1 = np.asarray(h_y1)
    _check_match_inputs(h_x1, h_y1, B)
    _, h, w = h_x1.shape
    m_rows, n_cols = h // B, w // B

    # stack targets of all rows as (B, M*N, C*B), row-major in (m, n)
    targets_jnl = np.concatenate(
        [
            _target_columns(_band_matrix(h_x1, m * B, B, np.float32), n_cols, B)
            for m in range(m_rows)
        ],
        axis=1,
    )
    st = np.concatenate(
        [
            _window_sqnorms(_band_matrix(h_x1, m * B, B, np.float32), B)[::B]
            for m in range(m_rows)
        ]
    ).astype(np.float32)

    best_score = np.full(m_rows * n_cols, np.inf, dtype=np.float32)
    best_u = np.zeros(m_rows * n_cols, dtype=np.int64)
    best_v = np.zeros(m_rows * n_cols, dtype=np.int64)

    for u in range(h - B + 1):
        ky = _band_matrix(h_y1, u, B, np.float32)
        dots = _band_dots(targets_jnl, ky)
        sw = _window_sqnorms(ky, B).astype(np.float32)
        scores = _score_rows(dots, st, sw).astype(np.float32)
        v_min = np.argmin(scores, axis=1)  # first occurrence: smallest v
        s_min = scores[np.arange(scores.shape[0]), v_min]
        better = s_min < best_score  # strict: earlier (smaller) u wins ties
        best_score[better] = s_min[better]
        best_u[better] = u
        best_v[better] = v_min[better]

    rho = np.empty(m_rows * n_cols, dtype=np.float64)
    for idx in range(m_rows * n_cols):
        m, n = divmod(idx, n_cols)
        u, v = int(best_u[idx]), int(best_v[idx])
        rho[idx] = cosine_distance(
            h_x1[:, m * B : (m + 1) * B, n * B : (n + 1) * B],
            h_y1[:, u : u + B, v : v + B],
        )
    return MatchIndexMap(
        u=best_u.reshape(m_rows, n_cols),
        v=best_v.reshape(m_rows, n_cols),
        rho=rho.reshape(m_rows, n_cols),
        level=1,
        patch_size=B,
    )


def rescale_indices(map1: MatchIndexMap, i: int, scale_mode: str = "divide") -> MatchIndexMap:
    """Reuse level-1 match indices at level ``i`` in {2, 3, 4}.

    Default halves indices and patch size per level (floor division), which
    keeps coordinates consistent with the pyramid's shrinking dims. The
    ``multiply`` mode applies the opposite scaling for comparison; its
    indices generally fall outside smaller maps.
    """
    if map1.level != 1:
        raise InputError("rescale_indices expects a level-1 map")
    if i not in (2, 3, 4):
        raise InputError("target level must be in {2, 3, 4}")
    factor = 2 ** (i - 1)
    if map1.patch_size % factor:
        raise InputError(
            f"patch size {map1.patch_size} not divisible by {factor}"
        )
    if scale_mode == "divide":
        u, v, b = map1.u // factor, map1.v // factor, map1.patch_size // factor
    elif scale_mode == "multiply":
        u, v, b = map1.u * factor, map1.v * factor, map1.patch_size // factor
    else:
        raise InputError(f"unknown scale_mode {scale_mode!r}")
    return MatchIndexMap(u=u, v=v, rho=map1.rho, level=i, patch_size=b)


def rearrange_side(h_y_i: np.ndarray, map_i: MatchIndexMap) -> np.ndarray:
    """Rebuild the side map so patch (m,n) holds its matched window."""
    h_y_i = np.asarray(h_y_i)
    if h_y_i.ndim != 3:
        raise InputError("feature map must be (C,H,W)")
    b = map_i.patch_size
    m_rows, n_cols = map_i.grid_shape
    _, h, w = h_y_i.shape
    if m_rows * b != h or n_cols * b != w:
        raise InputError(
            f"match grid {m_rows}x{n_cols} (B={b}) does not tile {h}x{w} map"
        )
    if map_i.u.min() < 0 or map_i.v.min() < 0 or map_i.u.max() > h - b or map_i.v.max() > w - b:
        raise InputError("match indices out of range for this level")
    out = np.empty_like(h_y_i)
    for m in range(m_rows):
        for n in range(n_cols):
            u, v = map_i.u[m, n], map_i.v[m, n]
            out[:, m * b : (m + 1) * b, n * b : (n + 1) * b] = h_y_i[
                :, u : u + b, v : v + b
            ]
    return out
