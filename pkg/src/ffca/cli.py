"""Command-line interface: encode, decode, eval, bench, synth,
describe-weights.

Exit codes: 0 success, 2 input error, 3 format error, 4 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import sys

from .bench import ANCHOR_DIMS, run_bench
from .config import PipelineConfig, load_config
from .errors import FormatError, InputError, InternalError
from .metrics import RDCurve, bd_report, write_bd_json, write_rd_csv
from .pipeline import (
    crop_car_hood,
    decode_bundle,
    dump_debug,
    encode_bundle,
    evaluate_pairs,
    synth_pair,
    write_disparity_pgm,
)
from .tensor import read_image, write_image
from .weights import (
    describe_weights,
    full_layer_table,
    load_weights,
    validate_weights,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FORMAT = 3
EXIT_INTERNAL = 4


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "quality", None) is not None:
        cfg.quality = args.quality
        cfg.validate()
    return cfg


def _load_weights_arg(args, cfg: PipelineConfig):
    path = getattr(args, "weights", None) or cfg.weights_path
    return load_weights(path) if path else None


def _cmd_encode(args) -> int:
    cfg = _load_cfg(args)
    main = read_image(args.main)
    side = read_image(args.side)
    if args.crop_car_hood:
        main = crop_car_hood(main)
        side = crop_car_hood(side)
    encode_bundle(main, side, cfg.quality, args.output, cfg,
                  include_side=not args.side_external)
    print(f"wrote {args.output} (quality {cfg.quality}, "
          f"side {'external' if args.side_external else 'embedded'})")
    return EXIT_OK


def _cmd_decode(args) -> int:
    cfg = load_config(args.config) if args.config else None
    weights = None
    if args.weights:
        weights = load_weights(args.weights)
    result = decode_bundle(args.bundle, cfg, weights, side_path=args.side_external)
    write_image(args.output, result.x_out)
    if args.dump_debug:
        dump_debug(result, args.dump_debug)
    mode = "fused" if result.fused else "identity fusion (no weights)"
    print(f"wrote {args.output} ({mode})")
    for s in result.stats:
        print(f"  level {s.level}: d2 raw {s.d2_raw:.6g} -> coarse {s.d2_coarse:.6g}"
              f" -> fine {s.d2_fine:.6g} (selected {s.selected})")
    return EXIT_OK


def _parse_pairs(specs):
    for spec in specs:
        parts = spec.split(",")
        if len(parts) != 2:
            raise InputError(f"pair spec {spec!r} must be 'main.ppm,side.ppm'")
        yield parts[0], parts[1]


def _cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    weights = _load_weights_arg(args, cfg)
    qualities = [int(q) for q in args.qualities.split(",") if q.strip()]

    def load_pairs():
        for main_path, side_path in _parse_pairs(args.pairs):
            main = read_image(main_path)
            side = read_image(side_path)
            if args.crop_car_hood:
                main = crop_car_hood(main)
                side = crop_car_hood(side)
            yield main_path, main, side

    baseline, fused = evaluate_pairs(load_pairs(), qualities, cfg, weights)
    if not baseline:
        raise InputError("no pairs evaluated")
    base_csv = f"{args.output}_baseline.csv"
    fused_csv = f"{args.output}_fused.csv"
    write_rd_csv(base_csv, baseline)
    write_rd_csv(fused_csv, fused)
    print(f"wrote {base_csv} and {fused_csv} ({len(baseline)} points each)")
    if args.bd_report:
        ref = RDCurve(tuple(p for _, p in sorted(baseline, key=lambda r: r[1].bpp)))
        test = RDCurve(tuple(p for _, p in sorted(fused, key=lambda r: r[1].bpp)))
        report = bd_report(ref, test, reference="baseline", test="fused")
        write_bd_json(args.bd_report, report)
        print(f"wrote {args.bd_report}: bd_rate {report['bd_rate_percent']:+.2f}% "
              f"bd_psnr {report['bd_psnr_db']:+.3f} dB")
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = _load_cfg(args)
    dims = tuple(int(v) for v in args.size.split("x"))
    if len(dims) != 3:
        raise InputError("--size must be CxHxW, e.g. 128x416x512")
    report = run_bench(cfg, dims=dims, repeats=args.repeats,
                       include_oracle=not args.skip_oracle)
    print(report.summary())
    if args.output:
        with open(args.output, "w") as f:
            f.write(report.to_json() + "\n")
        print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    h, w = (int(v) for v in args.dims.split("x"))
    main, side, gt = synth_pair(args.kind, h, w, args.shift, seed=args.seed,
                                period=args.period)
    write_image(f"{args.output}_main.ppm", main)
    write_image(f"{args.output}_side.ppm", side)
    write_disparity_pgm(f"{args.output}_disparity.pgm", gt)
    print(f"wrote {args.output}_main.ppm / _side.ppm / _disparity.pgm "
          f"({args.kind}, shift {args.shift})")
    return EXIT_OK


def _cmd_describe_weights(args) -> int:
    cfg = _load_cfg(args)
    print(describe_weights(cfg.channels, cfg.num_hypotheses, cfg.groups, cfg.hidden_width))
    if args.weights:
        weights = load_weights(args.weights)
        validate_weights(
            weights,
            full_layer_table(weights.channels, weights.num_hypotheses,
                             weights.groups, weights.hidden),
        )
        print(f"\n{args.weights}: {len(weights.tensors)} tensors, layout valid "
              f"(C={weights.channels}, D={weights.num_hypotheses})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ffca",
        description="Feature-domain coarse-to-fine stereo alignment pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="code the main view, bundle the pair")
    p.add_argument("main")
    p.add_argument("side")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--quality", type=int, default=None)
    p.add_argument("--config")
    p.add_argument("--side-external", action="store_true",
                   help="do not embed the side view in the bundle")
    p.add_argument("--crop-car-hood", action="store_true")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decode a bundle with cascade alignment")
    p.add_argument("bundle")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config")
    p.add_argument("--weights")
    p.add_argument("--side-external", metavar="PATH",
                   help="side view image for bundles without one embedded")
    p.add_argument("--dump-debug", metavar="DIR")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("eval", help="rate-distortion sweep over stereo pairs")
    p.add_argument("pairs", nargs="+", metavar="MAIN,SIDE")
    p.add_argument("-o", "--output", required=True, help="CSV path prefix")
    p.add_argument("--qualities", default="0,1,2,3,4,5,6,7")
    p.add_argument("--quality", type=int, default=None, help=argparse.SUPPRESS)
    p.add_argument("--config")
    p.add_argument("--weights")
    p.add_argument("--bd-report", metavar="JSON")
    p.add_argument("--crop-car-hood", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="time matcher/refinement/fusion stages")
    p.add_argument("--size", default="x".join(str(v) for v in ANCHOR_DIMS),
                   help="feature dims CxHxW (default: %(default)s)")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--quality", type=int, default=None, help=argparse.SUPPRESS)
    p.add_argument("--config")
    p.add_argument("--skip-oracle", action="store_true")
    p.add_argument("-o", "--output", help="also write the report as JSON")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic stereo pair")
    p.add_argument("kind", choices=("noise", "gradient", "checkerboard"))
    p.add_argument("-o", "--output", required=True, help="output path prefix")
    p.add_argument("--dims", default="256x512", help="HxW (default %(default)s)")
    p.add_argument("--shift", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--period", type=int, default=16)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("describe-weights", help="print the expected layer table")
    p.add_argument("--config")
    p.add_argument("--quality", type=int, default=None, help=argparse.SUPPRESS)
    p.add_argument("--weights", help="validate this weights file against the table")
    p.set_defaults(func=_cmd_describe_weights)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except (InternalError, AssertionError) as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
