"""Benchmark harness: timing rules, correctness gates, CSV schema and series export."""

import numpy as np
import pytest

from dualrec.bench import (CSV_COLUMNS, MIN_REPS, MIN_WARMUPS, BenchResult, bench_model_step,
                           bench_positional, bench_temporal, plotdata, random_timestamps,
                           read_csv, temporal_cases, time_call, verify_model_gradients,
                           verify_temporal, write_csv)
from dualrec.model import ModelConfig
from dualrec.positional import BlockSparseMap, flops_count, generate_sparse_mask, materialize
from dualrec.temporal import relative_intervals_int


class TestTimeCall:
    def test_minimums_enforced(self):
        with pytest.raises(ValueError):
            time_call(lambda: None, reps=MIN_REPS - 1)
        with pytest.raises(ValueError):
            time_call(lambda: None, warmups=MIN_WARMUPS - 1)

    def test_call_count_and_order(self):
        calls = []
        med, p90 = time_call(lambda: calls.append(1), reps=31, warmups=6)
        assert len(calls) == 37
        assert 0.0 <= med <= p90


class TestTemporalBench:
    def test_verification_rejects_bad_encoder(self):
        rng = np.random.default_rng(0)
        T_int = relative_intervals_int(random_timestamps(2, 16, rng))
        T = T_int.astype(float)
        cases = temporal_cases(T, T_int, rng)
        verify_temporal(cases, T)
        cases["bucket"] = lambda: np.full(T.shape, np.nan)
        with pytest.raises(AssertionError, match="bucket"):
            verify_temporal(cases, T)

    def test_latency_grows_with_n(self):
        results = bench_temporal(n_grid=(32, 256, 1000), batch_grid=(2,))
        by_case = {}
        for r in results:
            by_case.setdefault(r.case, []).append(r.median_ms)
        assert set(by_case) == {"exp_power", "exp_power_unconverted", "bucket", "inverse"}
        for case, meds in by_case.items():
            assert meds == sorted(meds), case
        assert all(r.repetitions >= MIN_REPS and r.warmups >= MIN_WARMUPS for r in results)


class TestModelBench:
    def test_gradients_verified_first(self):
        assert verify_model_gradients(seed=1, samples=20) <= 1e-4

    def test_forward_faster_than_training_step(self):
        configs = [ModelConfig(n=16, d=16, d_ffn=32, vocab=50, num_negatives=16),
                   ModelConfig(n=32, d=16, d_ffn=32, vocab=50, num_negatives=16)]
        results = bench_model_step(configs, batch=4)
        for fwd, step in zip(results[::2], results[1::2]):
            assert (fwd.case, step.case) == ("forward", "forward_backward")
            assert fwd.median_ms < step.median_ms


class TestPositionalBench:
    def test_counts_and_reduction_reported(self):
        results = bench_positional(n_grid=(64, 128), tau=0.6, s=8, d=8)
        sparse = [r for r in results if r.case == "positional_sparse"]
        assert len(sparse) == 2 and all(r.flops_reduction_percent > 0 for r in sparse)
        assert all(r.flops_reduction_percent == 0.0 for r in results if r.case == "positional_dense")

    def test_sparse_wall_clock_at_least_quarter_faster(self):
        dense, sparse = bench_positional(n_grid=(1024,), tau=0.6, s=8, d=64)
        print(f"dense {dense.median_ms:.2f} ms sparse {sparse.median_ms:.2f} ms "
              f"counted cut {sparse.flops_reduction_percent:.1f}%")
        assert sparse.median_ms <= 0.75 * dense.median_ms

    def test_block_multiplies_equal_counted_prediction(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=1024)
        mask = generate_sparse_mask(materialize(w, 1024), 8, 0.6)
        kept, dense, _ = flops_count(1024, 8, mask)
        assert BlockSparseMap.from_weights(w, 1024, mask).block_multiplies == kept < dense


class TestCsv:
    def results(self):
        return [BenchResult("exp_power", 128, 8, 30, 5, 1.25, 1.5),
                BenchResult("exp_power", 64, 8, 30, 5, 0.5, 0.75),
                BenchResult("positional_sparse", 64, 1, 30, 5, 0.1, 0.2, 62.5)]

    def test_schema_stable(self, tmp_path):
        write_csv(self.results(), tmp_path / "b.csv")
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS) == "case,n,batch,median_ms,p90_ms,flops_reduction"
        assert lines[1] == "exp_power,128,8,1.250000,1.500000,"
        assert lines[3].endswith(",62.5000")
        assert [r["case"] for r in read_csv(tmp_path / "b.csv")] == ["exp_power", "exp_power", "positional_sparse"]

    def test_foreign_columns_rejected(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_csv(tmp_path / "x.csv")

    def test_plotdata_series(self, tmp_path):
        write_csv(self.results(), tmp_path / "b.csv")
        written = plotdata(tmp_path / "b.csv", tmp_path / "series")
        assert [p.rsplit("/", 1)[1] for p in written] == ["exp_power_b8.tsv", "positional_sparse_b1.tsv"]
        assert (tmp_path / "series" / "exp_power_b8.tsv").read_text() == (
            "n\tmedian_ms\tp90_ms\n64\t0.500000\t0.750000\n128\t1.250000\t1.500000\n")
