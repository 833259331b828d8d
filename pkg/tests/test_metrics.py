"""Metric battery: hand-computed correlations, planted lag shifts, SSIM
against a direct formula evaluation, connectivity properties, Monte Carlo
noise bounds, band decomposition, and group-difference recovery."""

import numpy as np
import pytest

from neuroforge.errors import InvalidArgumentError, UndefinedCorrelationError
from neuroforge.metrics import (
    MetricReport,
    absolute_lag_scan,
    band_decompose,
    fc_similarity,
    functional_connectivity,
    group_difference_map,
    lagged_correlation,
    noise_baseline,
    pearson,
    region_grid_shape,
    ssim_map,
)
from neuroforge.signal import MultichannelTimeSeries


class TestPearson:
    def test_self_and_negation(self):
        x = np.random.default_rng(0).standard_normal(50)
        assert pearson(x, x) == pytest.approx(1.0)
        assert pearson(x, -x) == pytest.approx(-1.0)

    def test_hand_computed(self):
        assert pearson([1, 2, 3, 4], [1, 2, 3, 5]) == pytest.approx(0.98270, abs=1e-5)

    def test_constant_raises(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(UndefinedCorrelationError):
            pearson([1.0, 2.0, 3.0], [4.0, 4.0, 4.0])

    def test_length_checks(self):
        with pytest.raises(InvalidArgumentError):
            pearson([1.0, 2.0], [1.0, 2.0])
        with pytest.raises(InvalidArgumentError):
            pearson([1.0, 2.0, 3.0], [1.0, 2.0])


class TestLaggedCorrelation:
    def test_planted_shift_recovery(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(600)
        for k in (-50, -7, 0, 3, 50):
            y = np.roll(x, k)  # y[t] = x[t - k]
            result = lagged_correlation(x[60:-60], y[60:-60], 55)
            assert result.peak_lag == -k

    def test_white_noise_bounded(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            x = rng.standard_normal(500)
            y = rng.standard_normal(500)
            result = lagged_correlation(x, y, 10)
            assert np.nanmax(np.abs(result.curve)) < 0.2

    def test_normalized_curve_peaks_at_one(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(300)
        result = lagged_correlation(x, np.roll(x, 4), 10)
        assert np.nanmax(np.abs(result.normalized_curve)) == pytest.approx(1.0)
        assert result.lags[np.nanargmax(result.curve)] == result.peak_lag

    def test_too_short_rejected(self):
        with pytest.raises(InvalidArgumentError):
            lagged_correlation(np.arange(20.0), np.arange(20.0), 10)

    def test_all_constant_raises(self):
        with pytest.raises(UndefinedCorrelationError):
            lagged_correlation(np.ones(100), np.ones(100), 5)

    def test_absolute_scan_uses_common_window(self):
        rng = np.random.default_rng(4)
        base = rng.standard_normal(120)
        lead = MultichannelTimeSeries(("a",), 1.0, 0.0, base[None, :100])
        follow = MultichannelTimeSeries(("b",), 1.0, 6.0, base[None, :100])
        # follow's content at absolute t equals lead's content at t - 6
        _, peak_s = absolute_lag_scan(lead, follow, 10.0)
        assert peak_s == -6.0


class TestSsim:
    def test_identity_and_symmetry(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((4, 5))
        b = rng.standard_normal((4, 5))
        assert ssim_map(a, a) == pytest.approx(1.0)
        assert ssim_map(a, b) == pytest.approx(ssim_map(b, a), abs=1e-12)

    def test_range(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            a = rng.standard_normal((5, 5))
            b = rng.standard_normal((5, 5))
            assert -1.0 <= ssim_map(a, b) <= 1.0

    def test_brute_force_formula(self):
        # Constant map vs the same constant plus noise: every local window has
        # zero variance on one side, so the formula collapses to a closed form
        # evaluated independently here.
        rng = np.random.default_rng(7)
        c = 2.0
        a = np.full((5, 5), c)
        noise = 0.5 * rng.standard_normal((5, 5))
        b = a + noise
        window, k1, k2 = 3, 0.01, 0.03
        got = ssim_map(a, b, window=window, k1=k1, k2=k2)
        data_range = max(a.max(), b.max()) - min(a.min(), b.min())
        c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
        vals = []
        for i in range(3):
            for j in range(3):
                wb = b[i : i + window, j : j + window].ravel()
                mu_a, mu_b = c, wb.mean()
                var_a, var_b = 0.0, wb.var()
                cov = 0.0
                vals.append(
                    ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                    / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
                )
        assert got == pytest.approx(np.mean(vals), abs=1e-10)

    def test_window_validation(self):
        a = np.zeros((3, 3))
        with pytest.raises(InvalidArgumentError):
            ssim_map(a, a, window=5)
        with pytest.raises(InvalidArgumentError):
            ssim_map(a, a, window=2)

    def test_region_grid_shape(self):
        assert region_grid_shape(12) == (3, 4)
        assert region_grid_shape(16) == (4, 4)
        assert region_grid_shape(24) == (4, 6)


class TestConnectivity:
    def test_duplicated_region(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal(200)
        fc = functional_connectivity(np.stack([x, x, rng.standard_normal(200)]))
        assert fc.matrix[0, 1] == pytest.approx(1.0)

    def test_symmetric_unit_diagonal(self):
        rng = np.random.default_rng(9)
        fc = functional_connectivity(rng.standard_normal((6, 300)))
        np.testing.assert_array_equal(fc.matrix, fc.matrix.T)
        np.testing.assert_array_equal(np.diag(fc.matrix), np.ones(6))

    def test_independent_noise_low_offdiagonal(self):
        rng = np.random.default_rng(10)
        fc = functional_connectivity(rng.standard_normal((8, 1000)))
        iu = np.triu_indices(8, k=1)
        assert np.mean(np.abs(fc.matrix[iu])) < 0.05

    def test_constant_region_excluded(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((3, 100))
        x[1] = 4.2
        fc = functional_connectivity(x)
        assert fc.excluded == (1,)
        assert np.all(np.isnan(fc.matrix[1, [0, 2]]))
        assert np.isfinite(fc.matrix[0, 2])

    def test_fc_similarity_identity_and_shuffle(self):
        rng = np.random.default_rng(12)
        base = rng.standard_normal((12, 400))
        mix = np.eye(12) + 0.4 * rng.standard_normal((12, 12))
        fc = functional_connectivity(mix @ base)
        assert fc_similarity(fc, fc) == pytest.approx(1.0)
        shuffles = []
        for _ in range(30):
            m = fc.matrix.copy()
            iu = np.triu_indices(12, k=1)
            vals = m[iu]
            perm = rng.permutation(vals.size)
            m[iu] = vals[perm]
            m.T[iu] = m[iu]
            from neuroforge.metrics import ConnectivityResult

            shuffled = ConnectivityResult(matrix=m, excluded=())
            shuffles.append(abs(fc_similarity(fc, shuffled)))
        assert np.mean(shuffles) < 0.2

    def test_mismatched_exclusions_rejected(self):
        rng = np.random.default_rng(13)
        a = functional_connectivity(rng.standard_normal((4, 100)))
        x = rng.standard_normal((4, 100))
        x[2] = 0.0
        b = functional_connectivity(x)
        with pytest.raises(InvalidArgumentError):
            fc_similarity(a, b)


class TestBandDecompose:
    def _epoch(self, rate, n, data=None):
        rng = np.random.default_rng(14)
        d = rng.standard_normal((2, n)) if data is None else data
        return MultichannelTimeSeries(("a", "b"), rate, 0.0, d)

    def test_alpha_sinusoid_lands_in_alpha(self):
        rate = 250.0
        t = np.arange(int(20 * rate)) / rate
        x = np.sin(2 * np.pi * 10.0 * t)
        epoch = MultichannelTimeSeries(("a",), rate, 0.0, x[None])
        out = band_decompose(epoch)
        powers = {b: float((s.data**2).sum()) for b, s in out.bands.items()}
        total = sum(powers.values())
        assert powers["alpha"] / total >= 0.95

    def test_zero_in_zero_out(self):
        epoch = self._epoch(250.0, 1000, np.zeros((2, 1000)))
        out = band_decompose(epoch)
        for series in out.bands.values():
            assert np.max(np.abs(series.data)) < 1e-12

    def test_band_edges_contract(self):
        out = band_decompose(self._epoch(250.0, 1000))
        assert out.band_edges["delta"] == (1.0, 4.0)
        assert out.band_edges["theta"] == (4.0, 8.0)
        assert out.band_edges["alpha"] == (8.0, 13.0)
        assert out.band_edges["beta"] == (13.0, 30.0)
        assert out.band_edges["gamma"] == (30.0, 100.0)
        assert not out.gamma_truncated

    def test_gamma_truncated_at_low_rate(self):
        out = band_decompose(self._epoch(128.0, 1000))
        assert out.gamma_truncated
        assert out.band_edges["gamma"][1] < 64.0

    def test_band_power_bounded_by_broadband(self):
        epoch = self._epoch(250.0, 4000)
        out = band_decompose(epoch)
        band_power = sum(float((s.data**2).sum()) for s in out.bands.values())
        broadband = float((epoch.data**2).sum())
        assert band_power <= broadband * 1.05


class TestNoiseBaseline:
    def test_mean_near_zero(self):
        rng = np.random.default_rng(15)
        targets = [
            MultichannelTimeSeries(("a",), 1.0, 0.0, rng.standard_normal((1, 600)))
            for _ in range(3)
        ]
        result = noise_baseline(targets, np.random.default_rng(0), n_draws=40)
        assert abs(result.mean) < 0.05

    def test_std_shrinks_with_length(self):
        rng = np.random.default_rng(16)
        short = [MultichannelTimeSeries(("a",), 1.0, 0.0, rng.standard_normal((1, 250)))]
        long = [MultichannelTimeSeries(("a",), 1.0, 0.0, rng.standard_normal((1, 1000)))]
        r_short = noise_baseline(short, np.random.default_rng(1), n_draws=400)
        r_long = noise_baseline(long, np.random.default_rng(2), n_draws=400)
        ratio = r_short.std / r_long.std
        assert ratio == pytest.approx(2.0, rel=0.2)  # ~ 1/sqrt(length)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(17)
        targets = [MultichannelTimeSeries(("a",), 1.0, 0.0, rng.standard_normal((1, 100)))]
        a = noise_baseline(targets, np.random.default_rng(3), n_draws=30)
        b = noise_baseline(targets, np.random.default_rng(3), n_draws=30)
        assert a == b

    def test_min_draws(self):
        with pytest.raises(InvalidArgumentError):
            noise_baseline([np.zeros((1, 10))], np.random.default_rng(0), n_draws=10)


class TestGroupDifference:
    def test_identical_groups_empty(self):
        rng = np.random.default_rng(18)
        maps = rng.standard_normal((4, 6))
        result = group_difference_map(maps, maps.copy())
        assert result.significant == ()

    def test_label_swap_negates_t(self):
        rng = np.random.default_rng(19)
        a = rng.standard_normal((5, 6))
        b = rng.standard_normal((5, 6)) + 0.5
        r1 = group_difference_map(a, b)
        r2 = group_difference_map(b, a)
        np.testing.assert_array_equal(r1.t_map, -r2.t_map)

    def test_degenerate_region_excluded(self):
        rng = np.random.default_rng(20)
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((4, 3))
        a[:, 1] = 2.0
        b[:, 1] = 2.0
        result = group_difference_map(a, b)
        assert result.excluded == (1,)

    def test_planted_effect_recovered(self):
        # One region's activation doubled in group B: detected in >= 90% of
        # seeded replications.
        hits = 0
        seeds = 20
        for seed in range(seeds):
            rng = np.random.default_rng(seed)
            base = 1.0 + 0.05 * rng.standard_normal((6, 8))
            a = base[:3].copy()
            b = base[3:].copy()
            b[:, 5] *= 2.0
            result = group_difference_map(a, b)
            if 5 in result.significant:
                hits += 1
        assert hits >= int(0.9 * seeds)

    def test_too_few_subjects(self):
        with pytest.raises(InvalidArgumentError):
            group_difference_map(np.zeros((1, 4)), np.zeros((3, 4)))


class TestMetricReport:
    def test_json_round_trip_and_validation(self, tmp_path):
        report = MetricReport(
            metrics={"pcc": 0.5},
            curves={"lag": [0.1, 0.2, 0.3]},
            provenance={"dataset_id": "abc", "seed": 1},
            notes={"convention": "negative lag: first argument leads"},
        )
        report.validate()
        report.save(tmp_path)
        assert (tmp_path / "metrics.json").exists()
        assert (tmp_path / "curve_lag.csv").exists()
        import json

        doc = json.loads((tmp_path / "metrics.json").read_text())
        assert doc["metrics"]["pcc"] == 0.5

    def test_non_finite_metric_rejected(self):
        report = MetricReport(
            metrics={"bad": float("nan")}, provenance={"dataset_id": "x", "seed": 0}
        )
        with pytest.raises(InvalidArgumentError):
            report.validate()
