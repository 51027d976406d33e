import json

import pytest

from ffca.bench import BenchReport, run_bench
from ffca.config import PipelineConfig
from ffca.errors import InputError

SMALL = PipelineConfig(channels=8, d_max=16, slack=2)


class TestBench:
    def test_small_run_fields(self):
        report = run_bench(SMALL, dims=(8, 32, 64), repeats=1)
        assert report.candidates_per_patch_oracle == (32 - 16 + 1) * (64 - 16 + 1)
        assert report.candidates_per_patch_row == 16 + 2 + 1
        assert report.reduction_factor == report.candidates_per_patch_oracle / 19
        assert report.matcher_speedup == report.t_match_oracle_s / report.t_match_row_s
        assert report.t_refine_s > 0 and report.t_fff_s > 0
        assert report.refine_params > 0 and report.fff_params > 0

    def test_all_level_candidate_count(self):
        report = run_bench(SMALL, dims=(8, 32, 64), repeats=1, include_oracle=False)
        expect = 0
        for i in range(4):
            b = max(16 >> i, 1)
            h, w = 32 >> i, 64 >> i
            expect += (h - b + 1) * (w - b + 1)
        assert report.candidates_per_patch_oracle_all_levels == expect

    def test_non_timing_fields_independent_of_repeats(self):
        r1 = run_bench(SMALL, dims=(8, 32, 64), repeats=1, include_oracle=False)
        r2 = run_bench(SMALL, dims=(8, 32, 64), repeats=2, include_oracle=False)
        for name in (
            "candidates_per_patch_oracle",
            "candidates_per_patch_row",
            "candidates_per_patch_oracle_all_levels",
            "reduction_factor",
            "refine_params",
            "fff_params",
            "cascade_gflops",
        ):
            assert getattr(r1, name) == getattr(r2, name), name

    def test_skip_oracle(self):
        report = run_bench(SMALL, dims=(8, 32, 64), repeats=1, include_oracle=False)
        assert report.t_match_oracle_s == 0.0
        assert report.matcher_speedup == 0.0

    def test_json_roundtrip(self):
        report = run_bench(SMALL, dims=(8, 32, 64), repeats=1, include_oracle=False)
        data = json.loads(report.to_json())
        assert data["patch_size"] == 16
        assert "analytic reduction" in report.summary()

    def test_anchor_analytic_counts(self):
        # closed-form candidate arithmetic at the benchmark anchor size
        cfg = PipelineConfig()
        h1, w1, b = 416, 512, cfg.B
        oracle = (h1 - b + 1) * (w1 - b + 1)
        assert oracle == 199_297
        row = cfg.d_max + cfg.slack + 1
        assert row == 69
        assert oracle / row == pytest.approx(2888.36, abs=0.01)

    def test_bad_dims_rejected(self):
        with pytest.raises(InputError):
            run_bench(SMALL, dims=(8, 30, 64), repeats=1)
        with pytest.raises(InputError):
            run_bench(SMALL, dims=(8, 32, 64), repeats=0)

    def test_window_capped_by_width(self):
        cfg = PipelineConfig(channels=8, d_max=64, slack=4)
        with pytest.raises(InputError):
            run_bench(cfg, dims=(8, 32, 64), repeats=1)
