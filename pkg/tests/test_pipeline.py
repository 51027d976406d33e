import json

import numpy as np
import pytest

from ffca.codec import Bitstream
from ffca.config import PipelineConfig, load_config, save_config
from ffca.errors import FormatError, InputError
from ffca.matcher import SearchWindow, match_row_restricted
from ffca.metrics import RDCurve, bd_metrics
from ffca.pipeline import (
    crop_car_hood,
    decode_bundle,
    dump_debug,
    encode_bundle,
    evaluate_pairs,
    read_bundle,
    run_cascade,
    synth_pair,
    write_bundle,
)
from ffca.tensor import ImagePlane, extract_pyramid, read_image, write_image
from ffca.weights import random_weights, save_weights

CFG = PipelineConfig(channels=16, d_max=24, slack=2)


class TestConfig:
    def test_defaults_match_reported_settings(self):
        cfg = PipelineConfig()
        assert cfg.B == 16
        assert cfg.mu == 0.5
        assert cfg.alpha == 0.1

    def test_hypotheses_default(self):
        assert PipelineConfig().hypotheses == (-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)

    def test_validation(self):
        with pytest.raises(InputError):
            PipelineConfig(alpha=1.5)
        with pytest.raises(InputError):
            PipelineConfig(channels=6, groups=4)
        with pytest.raises(InputError):
            PipelineConfig(select_mode="l1")
        with pytest.raises(InputError):
            PipelineConfig(lambdas=(1.0, 2.0))

    def test_file_roundtrip(self, tmp_path):
        cfg = PipelineConfig(channels=32, mu=0.75, d_max=48,
                             select_mode="raw_l2", reuse_channel_selection=True)
        path = tmp_path / "cfg.txt"
        save_config(path, cfg)
        back = load_config(path)
        assert back == cfg

    def test_file_comments_and_errors(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("# comment\nB = 8\nmu = 0.25  # inline\n")
        cfg = load_config(path)
        assert cfg.B == 8 and cfg.mu == 0.25
        path.write_text("no_such_key = 3\n")
        with pytest.raises(InputError):
            load_config(path)


class TestSynth:
    def test_zero_shift_identical(self):
        main, side, gt = synth_pair("noise", 64, 64, 0, seed=0)
        assert np.array_equal(main.samples, side.samples)
        assert np.all(gt == 0)

    def test_side_is_translated_main(self):
        main, side, _ = synth_pair("noise", 64, 128, 16, seed=1)
        assert np.array_equal(side.samples[:, :, :-16], main.samples[:, :, 16:])

    def test_kinds(self):
        for kind in ("noise", "gradient", "checkerboard"):
            main, side, _ = synth_pair(kind, 64, 64, 8, seed=2)
            assert main.samples.shape == (3, 64, 64)

    def test_validation(self):
        with pytest.raises(InputError):
            synth_pair("noise", 60, 64, 8)  # dims not /16
        with pytest.raises(InputError):
            synth_pair("noise", 64, 64, 7)  # odd shift
        with pytest.raises(InputError):
            synth_pair("noise", 64, 64, 64)  # shift >= width
        with pytest.raises(InputError):
            synth_pair("blobs", 64, 64, 8)

    def test_coarse_matcher_recovers_shift(self):
        main, side, _ = synth_pair("noise", 64, 128, 16, seed=3)
        px = extract_pyramid(main, 16)
        py = extract_pyramid(side, 16)
        out = match_row_restricted(px.level(1), py.level(1), 16,
                                   SearchWindow(d_max=24, slack=2))
        expect = np.arange(4)[None, :] * 16 - 8
        interior = out.v[:, 1:3]
        assert np.array_equal(interior, np.broadcast_to(expect[:, 1:3], interior.shape))


class TestBundle:
    def make_pair(self, seed=0):
        return synth_pair("noise", 64, 128, 16, seed=seed)[:2]

    def test_roundtrip(self, tmp_path):
        main, side = self.make_pair()
        path = tmp_path / "pair.ffcz"
        stream = encode_bundle(main, side, 4, path, CFG)
        back_stream, back_side, cfg_echo = read_bundle(path)
        assert back_stream.to_bytes() == stream.to_bytes()
        assert np.allclose(back_side.samples, side.samples, atol=1 / 255)
        assert cfg_echo["B"] == 16 and cfg_echo["channels"] == 16

    def test_dims_must_match(self, tmp_path):
        main, _ = self.make_pair()
        other = ImagePlane(np.zeros((3, 64, 64), np.float32))
        with pytest.raises(InputError):
            encode_bundle(main, other, 4, tmp_path / "x.ffcz", CFG)

    def test_crc_detects_corruption(self, tmp_path):
        main, side = self.make_pair()
        path = tmp_path / "pair.ffcz"
        encode_bundle(main, side, 4, path, CFG)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            read_bundle(path)

    def test_side_external(self, tmp_path):
        main, side = self.make_pair()
        path = tmp_path / "pair.ffcz"
        encode_bundle(main, side, 4, path, CFG, include_side=False)
        _, embedded, _ = read_bundle(path)
        assert embedded is None
        with pytest.raises(InputError):
            decode_bundle(path, CFG)
        side_path = tmp_path / "side.ppm"
        write_image(side_path, side)
        result = decode_bundle(path, CFG, side_path=side_path)
        assert result.x_out.samples.shape == main.samples.shape

    def test_encoder_never_reads_side(self, tmp_path):
        # the defining distributed-coding property: the main bitstream is
        # byte-identical no matter which side view accompanies it
        main, side_a = self.make_pair(seed=5)
        _, side_b, _ = synth_pair("gradient", 64, 128, 32, seed=9)
        s1 = encode_bundle(main, side_a, 4, tmp_path / "a.ffcz", CFG)
        s2 = encode_bundle(main, side_b, 4, tmp_path / "b.ffcz", CFG)
        assert s1.to_bytes() == s2.to_bytes()


class TestCascade:
    def test_identity_pair_no_weights(self, tmp_path):
        main, _, _ = synth_pair("noise", 64, 128, 0, seed=4)
        path = tmp_path / "p.ffcz"
        encode_bundle(main, main, 6, path, CFG)
        result = decode_bundle(path, CFG)
        assert not result.fused
        assert np.array_equal(result.x_out.samples, result.x_hat.samples)
        # identical views: the matcher must return the identity mapping and
        # the only residual feature difference is codec noise
        n_cols = result.index_map.v.shape[1]
        assert np.array_equal(result.index_map.v,
                              np.arange(n_cols)[None, :].repeat(result.index_map.u.shape[0], 0) * 16)
        for s in result.stats:
            assert abs(s.d2_coarse - s.d2_raw) < 1e-12

    def test_shift_pair_alignment_gain(self, tmp_path):
        main, side, _ = synth_pair("noise", 64, 128, 16, seed=5)
        path = tmp_path / "p.ffcz"
        encode_bundle(main, side, 6, path, CFG)
        result = decode_bundle(path, CFG)
        assert result.stats[0].d2_coarse < result.stats[0].d2_raw

    def test_decode_deterministic_with_weights(self, tmp_path):
        main, side, _ = synth_pair("noise", 64, 128, 16, seed=6)
        path = tmp_path / "p.ffcz"
        encode_bundle(main, side, 5, path, CFG)
        weights = random_weights(16, 8, seed=2)
        r1 = decode_bundle(path, CFG, weights)
        r2 = decode_bundle(path, CFG, weights)
        assert r1.fused
        assert np.array_equal(r1.x_out.samples, r2.x_out.samples)
        assert np.array_equal(r1.dp1, r2.dp1)

    def test_weights_channel_mismatch(self, tmp_path):
        main, side, _ = synth_pair("noise", 64, 128, 16, seed=7)
        path = tmp_path / "p.ffcz"
        encode_bundle(main, side, 5, path, CFG)
        with pytest.raises(InputError):
            decode_bundle(path, CFG, random_weights(8, 8, seed=0))

    def test_non_divisible_dims_handled(self):
        # 72x120 image: level-1 features are 40x64, padded to 48x64 for B=16
        rng = np.random.default_rng(8)
        from scipy import ndimage

        base = ndimage.gaussian_filter(rng.standard_normal((3, 72, 120)), (0, 2, 2))
        main = ImagePlane(((base - base.min()) / (base.max() - base.min())).astype(np.float32))
        side = ImagePlane(main.samples[:, :, np.minimum(np.arange(120) + 8, 119)])
        result = run_cascade(main, side, CFG)
        assert result.x_out.samples.shape == (3, 72, 120)
        assert result.stats[0].d2_coarse <= result.stats[0].d2_raw

    def test_dump_debug(self, tmp_path):
        main, side, _ = synth_pair("noise", 64, 128, 8, seed=9)
        result = run_cascade(main, side, CFG, random_weights(16, 8, seed=3))
        out = tmp_path / "dbg"
        dump_debug(result, out)
        assert (out / "index_map_level1.csv").exists()
        assert (out / "d2_stages.csv").exists()
        assert (out / "disparity_level1.pgm").read_bytes().startswith(b"P5")
        lines = (out / "d2_stages.csv").read_text().strip().splitlines()
        assert lines[0] == "level,d2_raw,d2_coarse,d2_fine,selected"
        assert len(lines) == 5


class TestEvaluate:
    def small_cfg(self):
        return PipelineConfig(channels=16, d_max=24, slack=2,
                              ms_ssim_single_scale_fallback=True)

    def test_quality_sweep_rates_increase(self):
        cfg = self.small_cfg()
        main, side, _ = synth_pair("noise", 64, 128, 8, seed=10)
        baseline, fused = evaluate_pairs(
            [("pair0", main, side)], range(8), cfg
        )
        assert len(baseline) == len(fused) == 8
        rates = [p.bpp for _, p in baseline]
        assert all(b > a for a, b in zip(rates, rates[1:]))
        psnrs = [p.psnr_db for _, p in baseline]
        assert all(b >= a for a, b in zip(psnrs, psnrs[1:]))

    def test_identity_fusion_matches_baseline_bd(self):
        cfg = self.small_cfg()
        main, side, _ = synth_pair("noise", 64, 128, 8, seed=11)
        baseline, fused = evaluate_pairs([("p", main, side)], range(4, 8), cfg)
        ref = RDCurve(tuple(p for _, p in baseline))
        test = RDCurve(tuple(p for _, p in fused))
        bd_rate, bd_psnr = bd_metrics(ref, test)
        assert abs(bd_rate) < 1e-9
        assert abs(bd_psnr) < 1e-9

    def test_bad_pair_skipped(self):
        cfg = self.small_cfg()
        main, side, _ = synth_pair("noise", 64, 128, 8, seed=12)
        bad = ImagePlane(np.zeros((3, 64, 64), np.float32))
        errors = []
        baseline, fused = evaluate_pairs(
            [("bad", main, bad), ("good", main, side)],
            [4], cfg, on_error=errors.append,
        )
        assert len(errors) == 1 and "bad" in errors[0]
        assert len(baseline) == 1
        assert baseline[0][0].startswith("good")


class TestCropCarHood:
    def test_crop_dims(self):
        img = ImagePlane(np.zeros((3, 1024, 2048), np.float32))
        out = crop_car_hood(img)
        assert (out.height, out.width) == (1024 - 64 - 256, 2048 - 256)

    def test_too_small(self):
        with pytest.raises(InputError):
            crop_car_hood(ImagePlane(np.zeros((3, 300, 200), np.float32)))


class TestCli:
    def test_synth_encode_decode_flow(self, tmp_path):
        from ffca.cli import main

        cfg_path = tmp_path / "cfg.txt"
        save_config(cfg_path, CFG)
        prefix = str(tmp_path / "fix")
        assert main(["synth", "noise", "-o", prefix, "--dims", "64x128",
                     "--shift", "16", "--seed", "1"]) == 0
        bundle = str(tmp_path / "pair.ffcz")
        assert main(["encode", f"{prefix}_main.ppm", f"{prefix}_side.ppm",
                     "-o", bundle, "--config", str(cfg_path), "--quality", "4"]) == 0
        out = str(tmp_path / "out.ppm")
        assert main(["decode", bundle, "-o", out,
                     "--dump-debug", str(tmp_path / "dbg")]) == 0
        img = read_image(out)
        assert (img.height, img.width) == (64, 128)
        assert (tmp_path / "dbg" / "index_map_level1.csv").exists()

    def test_decode_uses_config_echo(self, tmp_path):
        # decode with no --config flag: settings come from the bundle echo
        main_img, side, _ = synth_pair("noise", 64, 128, 8, seed=13)
        bundle = tmp_path / "p.ffcz"
        encode_bundle(main_img, side, 3, bundle, CFG)
        stream, _, echo = read_bundle(bundle)
        assert PipelineConfig.from_dict(echo) == CFG
        result = decode_bundle(bundle)
        assert result.x_out.samples.shape == (3, 64, 128)

    def test_exit_codes(self, tmp_path):
        from ffca.cli import main

        # missing input file -> 2
        assert main(["decode", str(tmp_path / "nope.ffcz"), "-o", "x.ppm"]) == 2
        # corrupt bundle -> 3
        bad = tmp_path / "bad.ffcz"
        bad.write_bytes(b"FFCZ" + bytes(40))
        assert main(["decode", str(bad), "-o", str(tmp_path / "x.ppm")]) == 3
        # bad quality -> 2
        assert main(["synth", "noise", "-o", str(tmp_path / "f"),
                     "--dims", "17x16", "--shift", "0"]) == 2

    def test_describe_weights_validates(self, tmp_path):
        from ffca.cli import main

        cfg_path = tmp_path / "cfg.txt"
        save_config(cfg_path, CFG)
        wpath = tmp_path / "w.ffcw"
        save_weights(wpath, random_weights(16, 8, seed=0))
        assert main(["describe-weights", "--config", str(cfg_path),
                     "--weights", str(wpath)]) == 0
        # weights with a wrong shape are rejected
        broken = random_weights(16, 8, seed=0)
        broken.tensors["refine.head.weight"] = np.zeros((8, 8, 1, 1), np.float32)
        save_weights(wpath, broken)
        assert main(["describe-weights", "--config", str(cfg_path),
                     "--weights", str(wpath)]) == 2

    def test_eval_cli(self, tmp_path):
        from ffca.cli import main

        cfg = PipelineConfig(channels=16, d_max=24, slack=2,
                             ms_ssim_single_scale_fallback=True)
        cfg_path = tmp_path / "cfg.txt"
        save_config(cfg_path, cfg)
        prefix = str(tmp_path / "fix")
        main(["synth", "noise", "-o", prefix, "--dims", "64x128", "--shift", "8"])
        out_prefix = str(tmp_path / "rd")
        bd_path = str(tmp_path / "bd.json")
        assert main(["eval", f"{prefix}_main.ppm,{prefix}_side.ppm",
                     "-o", out_prefix, "--qualities", "3,4,5,6",
                     "--config", str(cfg_path), "--bd-report", bd_path]) == 0
        header = (tmp_path / "rd_baseline.csv").read_text().splitlines()[0]
        assert header == "label,bpp,psnr_db,ms_ssim,d2,loss"
        report = json.loads((tmp_path / "bd.json").read_text())
        assert set(report) == {"reference", "test", "bd_rate_percent",
                               "bd_psnr_db", "overlap"}


class TestBitstreamSelfContained:
    def test_bundle_decodes_without_original(self, tmp_path):
        main, side, _ = synth_pair("gradient", 64, 128, 8, seed=14)
        path = tmp_path / "p.ffcz"
        encode_bundle(main, side, 5, path, CFG)
        result = decode_bundle(path)
        assert result.x_out.samples.shape == main.samples.shape
