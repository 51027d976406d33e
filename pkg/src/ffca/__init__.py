"""Decoder-side coarse-to-fine stereo feature alignment.

A deterministic, trained-weight-free implementation of the alignment
cascade: row-restricted patch matching on feature pyramids, hourglass
disparity refinement with sparse channel warping, staged feature fusion,
plus a toy DCT/range-coder image codec and rate-distortion tooling.
"""

from .bench import ANCHOR_DIMS, BenchReport, run_bench
from .codec import (
    QUALITY_STEPS,
    Bitstream,
    QualityLevel,
    bpp,
    decode_image,
    encode_image,
)
from .config import DEFAULT_HYPOTHESES, DEFAULT_LAMBDAS, PipelineConfig, load_config, save_config
from .errors import FfcaError, FormatError, InputError, InternalError
from .fusion import FusionState, channel_shuffle, fff_stage, fuse_reconstruct, run_fff
from .matcher import (
    MatchIndexMap,
    SearchWindow,
    cosine_distance,
    match_full_oracle,
    match_row_restricted,
    rearrange_side,
    rescale_indices,
)
from .metrics import (
    RDCurve,
    RDPoint,
    bd_metrics,
    bd_report,
    feature_d2,
    loss_eval,
    ms_ssim,
    psnr,
    write_bd_json,
    write_rd_csv,
)
from .pipeline import (
    DecodeResult,
    decode_bundle,
    dump_debug,
    encode_bundle,
    evaluate_pair,
    evaluate_pairs,
    read_bundle,
    run_cascade,
    synth_pair,
    write_bundle,
)
from .rangecoder import rc_decode_bytes, rc_encode_bytes, rc_roundtrip
from .refine import (
    ChannelSelection,
    CostVolume,
    DisparityField,
    build_cost_volume,
    downsample_disparity,
    hourglass_forward,
    select_channels,
    soft_disparity,
    sparse_warp,
)
from .tensor import (
    FeaturePyramid,
    ImagePlane,
    PatchGrid,
    avg_pool2,
    crop_to,
    extract_pyramid,
    pad_replicate,
    patch_grid,
    read_feature_fixture,
    read_image,
    write_feature_fixture,
    write_image,
)
from .weights import (
    NetworkWeights,
    count_parameters,
    describe_weights,
    fff_layer_table,
    load_weights,
    random_weights,
    refinement_layer_table,
    save_weights,
    validate_weights,
    zero_weights,
)

__version__ = "0.1.0"
