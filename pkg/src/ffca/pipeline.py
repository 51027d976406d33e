"""End-to-end orchestration: stereo bundles, the decode cascade, synthetic
fixtures, and rate-distortion evaluation.

A bundle carries the lossily coded main view plus the losslessly stored
side view; the side image never influences the main bitstream (the encoder
never reads it). All cascade work happens at decode time.
"""

from __future__ import annotations

import json
import sys
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .codec import Bitstream, QualityLevel, bpp, decode_image, encode_image
from .config import PipelineConfig
from .errors import FormatError, InputError
from .fusion import fuse_reconstruct, run_fff
from .matcher import (
    MatchIndexMap,
    SearchWindow,
    match_row_restricted,
    rearrange_side,
    rescale_indices,
)
from .metrics import RDPoint, feature_d2, ms_ssim, psnr
from .refine import (
    build_cost_volume,
    downsample_disparity,
    hourglass_forward,
    select_channels,
    soft_disparity,
    sparse_warp,
)
from .tensor import (
    ImagePlane,
    crop_to,
    extract_pyramid,
    image_from_pnm_bytes,
    image_to_pnm_bytes,
    pad_replicate,
    read_image,
)
from .weights import NetworkWeights

BUNDLE_MAGIC = b"FFCZ"
BUNDLE_VERSION = 1


# ---------------------------------------------------------------------------
# Bundle container
# ---------------------------------------------------------------------------

def write_bundle(path, main_stream: Bitstream, side: ImagePlane | None,
                 config: PipelineConfig) -> None:
    body = bytearray()
    main_bytes = main_stream.to_bytes()
    body += len(main_bytes).to_bytes(4, "little")
    body += main_bytes
    if side is not None:
        ppm = image_to_pnm_bytes(side)
        body.append(1)
        body += len(ppm).to_bytes(4, "little")
        body += ppm
    else:
        body.append(0)
    cfg = config.to_json().encode("utf-8")
    body += len(cfg).to_bytes(4, "little")
    body += cfg
    with open(path, "wb") as f:
        f.write(BUNDLE_MAGIC)
        f.write(bytes([BUNDLE_VERSION]))
        f.write(bytes(body))
        f.write((zlib.crc32(bytes(body)) & 0xFFFFFFFF).to_bytes(4, "little"))


def read_bundle(path):
    """Returns (main Bitstream, side image or None, config echo dict)."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 9 or data[:4] != BUNDLE_MAGIC:
        raise FormatError("not a bundle file")
    if data[4] != BUNDLE_VERSION:
        raise FormatError(f"unsupported bundle version {data[4]}")
    body = data[5:-4]
    crc = int.from_bytes(data[-4:], "little")
    if crc != (zlib.crc32(body) & 0xFFFFFFFF):
        raise FormatError("bundle CRC mismatch")
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise FormatError("truncated bundle")
        chunk = body[pos : pos + n]
        pos += n
        return chunk

    main_len = int.from_bytes(take(4), "little")
    main_stream = Bitstream.from_bytes(take(main_len))
    side = None
    if take(1)[0]:
        side_len = int.from_bytes(take(4), "little")
        side = image_from_pnm_bytes(take(side_len))
    cfg_len = int.from_bytes(take(4), "little")
    try:
        cfg = json.loads(take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"bad config echo: {e}") from None
    return main_stream, side, cfg


def encode_bundle(main: ImagePlane, side: ImagePlane, quality: int, out_path,
                  config: PipelineConfig | None = None, include_side: bool = True) -> Bitstream:
    """Code the main view and store the side view losslessly.

    The encoder never reads the side image's content: the main bitstream is
    a pure function of (main, quality).
    """
    config = config or PipelineConfig()
    if (main.height, main.width) != (side.height, side.width):
        raise InputError(
            f"stereo pair dims differ: {main.height}x{main.width} vs "
            f"{side.height}x{side.width}"
        )
    stream = encode_image(main, QualityLevel(quality))
    write_bundle(out_path, stream, side if include_side else None, config)
    return stream


# ---------------------------------------------------------------------------
# Decode cascade
# ---------------------------------------------------------------------------

@dataclass
class LevelStats:
    level: int
    d2_raw: float
    d2_coarse: float
    d2_fine: float
    selected: int


@dataclass
class DecodeResult:
    x_hat: ImagePlane
    x_out: ImagePlane
    index_map: MatchIndexMap
    dp1: np.ndarray | None
    stats: list = field(default_factory=list)
    fused: bool = False


def _pad_to_patch(level_map: np.ndarray, b: int):
    padded, dims = pad_replicate(level_map, b)
    return padded, dims


def _effective_window(config: PipelineConfig, width: int, b: int) -> SearchWindow:
    # keep the window inside the (possibly small) padded level-1 map
    slack = min(config.slack, max(0, width - b - 1))
    d_max = min(config.d_max, max(0, width - 1 - slack))
    return SearchWindow(d_max=d_max, slack=slack, direction=config.direction)


def run_cascade(x_hat: ImagePlane, side: ImagePlane, config: PipelineConfig,
                weights: NetworkWeights | None = None) -> DecodeResult:
    """Coarse-to-fine alignment and fusion against a decoded main view.

    Without weights the cascade still matches and rearranges (the debug
    artifacts are produced) but the fusion is the identity: x_out == x_hat.
    """
    if (x_hat.height, x_hat.width) != (side.height, side.width):
        raise InputError("main and side dims differ")
    pyr_x = extract_pyramid(x_hat, config.channels, role="main_hat")
    pyr_y = extract_pyramid(side, config.channels, role="side_lossless")

    # Match at level 1 on maps padded to a patch-size multiple, then reuse
    # rescaled indices everywhere; rearranged maps are trimmed back.
    b1 = config.B
    x1p, _ = _pad_to_patch(pyr_x.level(1), b1)
    y1p, _ = _pad_to_patch(pyr_y.level(1), b1)
    win = _effective_window(config, x1p.shape[2], b1)
    map1 = match_row_restricted(x1p, y1p, b1, win)

    aligned = []
    stats = []
    for i in (1, 2, 3, 4):
        bi = b1 // (2 ** (i - 1))
        if bi < 1:
            raise InputError(f"patch size {b1} too small for level {i}")
        map_i = map1 if i == 1 else rescale_indices(map1, i, config.index_scale_mode)
        yi = pyr_y.level(i)
        yi_p, dims_i = _pad_to_patch(yi, bi)
        coarse = crop_to(rearrange_side(yi_p, map_i), dims_i)
        aligned.append(coarse)
        xi = pyr_x.level(i)
        stats.append(
            LevelStats(
                level=i,
                d2_raw=feature_d2(xi, yi),
                d2_coarse=feature_d2(xi, coarse),
                d2_fine=feature_d2(xi, coarse),
                selected=0,
            )
        )

    if weights is None:
        return DecodeResult(
            x_hat=x_hat, x_out=x_hat, index_map=map1, dp1=None, stats=stats, fused=False
        )

    if weights.channels != config.channels:
        raise InputError(
            f"weights built for C={weights.channels}, config has C={config.channels}"
        )
    volumes = [
        build_cost_volume(pyr_x.level(i), aligned[i - 1], i) for i in (1, 2, 3)
    ]
    scores = hourglass_forward(volumes, weights)
    dp1 = soft_disparity(scores, config.hypotheses)

    fine = []
    selection1 = None
    for i in (1, 2, 3, 4):
        if i == 4:
            fine.append(aligned[3])  # coarsest level passes through unwarped
            continue
        dp_i = dp1 if i == 1 else downsample_disparity(dp1, i)
        if config.reuse_channel_selection and selection1 is not None:
            sel = selection1
        else:
            sel = select_channels(pyr_x.level(i), aligned[i - 1], config.mu, config.select_mode)
            if i == 1:
                selection1 = sel
        warped = sparse_warp(aligned[i - 1], dp_i, sel, config.direction)
        fine.append(warped)
        stats[i - 1].d2_fine = feature_d2(pyr_x.level(i), warped)
        stats[i - 1].selected = len(sel)

    residual = run_fff(list(pyr_x.levels), fine, weights)
    residual = crop_to(residual, (x_hat.height, x_hat.width))
    x_out = fuse_reconstruct(x_hat, residual.astype(np.float32))
    return DecodeResult(
        x_hat=x_hat, x_out=x_out, index_map=map1, dp1=dp1, stats=stats, fused=True
    )


def decode_bundle(bundle_path, config: PipelineConfig | None = None,
                  weights: NetworkWeights | None = None,
                  side_path=None) -> DecodeResult:
    """Decode a bundle end to end. ``side_path`` supplies the side view when
    the bundle was written with --side-external."""
    stream, side, cfg_echo = read_bundle(bundle_path)
    if config is None:
        config = PipelineConfig.from_dict(cfg_echo)
    if side is None:
        if side_path is None:
            raise InputError("bundle has no embedded side view; pass side_path")
        side = read_image(side_path)
    x_hat = decode_image(stream)
    return run_cascade(x_hat, side, config, weights)


def dump_debug(result: DecodeResult, out_dir) -> None:
    """Write the index map CSV, a disparity PGM, and per-stage d2 CSV."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    result.index_map.to_csv(os.path.join(out_dir, "index_map_level1.csv"))
    with open(os.path.join(out_dir, "d2_stages.csv"), "w") as f:
        f.write("level,d2_raw,d2_coarse,d2_fine,selected\n")
        for s in result.stats:
            f.write(f"{s.level},{s.d2_raw!r},{s.d2_coarse!r},{s.d2_fine!r},{s.selected}\n")
    dp1 = result.dp1 if result.dp1 is not None else np.zeros((1, 1))
    # fixed affine code: 16 counts per cell, centred at 128
    pgm = np.clip(np.rint(dp1 * 16.0 + 128.0), 0, 255).astype(np.uint8)
    header = b"P5\n%d %d\n255\n" % (pgm.shape[1], pgm.shape[0])
    with open(os.path.join(out_dir, "disparity_level1.pgm"), "wb") as f:
        f.write(header + pgm.tobytes())


# ---------------------------------------------------------------------------
# Synthetic fixtures
# ---------------------------------------------------------------------------

SYNTH_KINDS = ("noise", "gradient", "checkerboard")


def synth_pair(kind: str, height: int, width: int, shift: int, seed: int = 0,
               period: int = 16, direction: int = 1):
    """Constructed stereo pair: side = main translated by ``shift`` columns
    (replicated-edge fill), plus the constant ground-truth disparity map.

    ``shift`` must be even so the level-1 feature shift is integral.
    """
    if height % 16 or width % 16:
        raise InputError("synthetic dims must be divisible by 16")
    if shift % 2:
        raise InputError("shift must be even")
    if not 0 <= shift < width:
        raise InputError("shift must satisfy 0 <= shift < width")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, height), np.linspace(0.0, 1.0, width), indexing="ij"
    )
    if kind == "noise":
        base = rng.standard_normal((3, height, width))
        base = ndimage.gaussian_filter(base, sigma=(0, 2.0, 2.0), mode="nearest")
        lo = base.min(axis=(1, 2), keepdims=True)
        hi = base.max(axis=(1, 2), keepdims=True)
        main = 0.1 + 0.8 * (base - lo) / np.maximum(hi - lo, 1e-9)
    elif kind == "gradient":
        coef = rng.uniform(-1.0, 1.0, size=(3, 4))
        planes = [
            c0 * xx + c1 * yy + c2 * xx * yy + c3 * np.sin(6.0 * np.pi * (xx + 0.37 * yy))
            for c0, c1, c2, c3 in coef
        ]
        base = np.stack(planes)
        lo = base.min(axis=(1, 2), keepdims=True)
        hi = base.max(axis=(1, 2), keepdims=True)
        main = 0.1 + 0.8 * (base - lo) / np.maximum(hi - lo, 1e-9)
    elif kind == "checkerboard":
        rows = (np.arange(height) // period)[:, None]
        cols = (np.arange(width) // period)[None, :]
        cells = ((rows + cols) % 2).astype(np.float64)
        main = np.stack([0.25 + 0.5 * cells] * 3)
    else:
        raise InputError(f"unknown fixture kind {kind!r}; choose from {SYNTH_KINDS}")

    main = main.astype(np.float32)
    src = np.arange(width) + direction * shift
    src = np.clip(src, 0, width - 1)
    side = main[:, :, src]
    gt = np.full((height, width), shift, dtype=np.int64)
    return ImagePlane(main), ImagePlane(side), gt


def write_disparity_pgm(path, disparity: np.ndarray) -> None:
    d = np.asarray(disparity)
    if d.min() < 0 or d.max() > 255:
        raise InputError("disparity PGM supports values 0..255")
    arr = d.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        f.write(arr.tobytes())


# ---------------------------------------------------------------------------
# Rate-distortion evaluation
# ---------------------------------------------------------------------------

def crop_car_hood(image: ImagePlane) -> ImagePlane:
    """Trim 64/256/128 pixels from top/bottom/sides (driving-dataset crop)."""
    h, w = image.height, image.width
    if h <= 64 + 256 or w <= 2 * 128:
        raise InputError(f"image {h}x{w} too small for the car-hood crop")
    return ImagePlane(image.samples[:, 64 : h - 256, 128 : w - 128])


def evaluate_pair(main: ImagePlane, side: ImagePlane, quality: int,
                  config: PipelineConfig, weights: NetworkWeights | None = None):
    """One (pair, quality) evaluation: returns (baseline RDPoint, fused RDPoint)."""
    stream = encode_image(main, QualityLevel(quality))
    rate = bpp(stream, (main.height, main.width))
    x_hat = decode_image(stream)
    result = run_cascade(x_hat, side, config, weights)
    lam = config.lambdas[quality]
    fallback = config.ms_ssim_single_scale_fallback
    d2_level1 = result.stats[0].d2_coarse

    def point(img):
        return RDPoint.make(
            bpp=rate,
            psnr_db=psnr(img, main),
            msssim=ms_ssim(img, main, fallback_single_scale=fallback),
            d2=d2_level1,
            lam=lam,
            alpha=config.alpha,
            d1_mode=config.d1_mode,
        )

    return point(result.x_hat), point(result.x_out)


def evaluate_pairs(pairs, qualities, config: PipelineConfig,
                   weights: NetworkWeights | None = None, on_error=None):
    """Evaluate labelled stereo pairs over a quality sweep.

    ``pairs`` yields (label, main ImagePlane, side ImagePlane). Returns two
    lists of (label, RDPoint): baseline and fused. Per-pair errors are
    reported through ``on_error`` (default: stderr) and skipped.
    """
    baseline_rows = []
    fused_rows = []
    for label, main, side in pairs:
        try:
            for q in qualities:
                base_pt, fused_pt = evaluate_pair(main, side, q, config, weights)
                row_label = f"{label}:q{q}"
                baseline_rows.append((row_label, base_pt))
                fused_rows.append((row_label, fused_pt))
        except (InputError, FormatError) as e:
            message = f"skipping pair {label!r}: {e}"
            if on_error is not None:
                on_error(message)
            else:
                print(message, file=sys.stderr)
    return baseline_rows, fused_rows
