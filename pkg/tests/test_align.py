"""Alignment operators against brute-force double-loop oracles and closed
forms, plus conjugate-domain integration behavior on simulated pairs."""

import numpy as np
import pytest

from neuroforge.align import (
    AlignmentConfig,
    band_envelopes,
    conjugate_representation,
    integrate,
    spatial_align,
    spatial_weights,
    temporal_align,
    time_alignment_matrix,
)
from neuroforge.errors import DegenerateRowError, InvalidArgumentError
from neuroforge.metrics import pearson
from neuroforge.signal import (
    MultichannelTimeSeries,
    PairedSample,
    RegionParcellation,
    SensorGeometry,
)


def brute_force_spatial(targets, sources, values, epsilon, normalize):
    n_t, n_s = len(targets), len(sources)
    w = np.zeros((n_t, n_s))
    for i in range(n_t):
        for j in range(n_s):
            d2 = sum((targets[i][k] - sources[j][k]) ** 2 for k in range(3))
            w[i, j] = 1.0 / (d2 + epsilon)
        if normalize:
            w[i] /= w[i].sum()
    out = np.zeros((n_t, values.shape[1]))
    for i in range(n_t):
        for t in range(values.shape[1]):
            acc = 0.0
            for j in range(n_s):
                acc += w[i, j] * values[j, t]
            out[i, t] = acc
    return w, out


def brute_force_temporal(src_times, dst_times, values, tau, sigma):
    T = np.zeros((len(dst_times), len(src_times)))
    for k in range(len(dst_times)):
        for l in range(len(src_times)):
            T[k, l] = np.exp(-((dst_times[k] - src_times[l] - tau) ** 2) / (2 * sigma**2))
    out = np.zeros((values.shape[0], len(dst_times)))
    for k in range(len(dst_times)):
        row = T[k] / T[k].sum()
        for c in range(values.shape[0]):
            out[c, k] = float(np.dot(row, values[c]))
    return T, out


class TestSpatial:
    def test_collocation_dominance(self):
        cfg = AlignmentConfig(epsilon_m2=1e-6, normalize_weights=False)
        w = spatial_weights([[0.0, 0.0, 0.0]], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], cfg)
        assert w.weights[0, 0] == pytest.approx(1e6)
        cfg_n = AlignmentConfig(epsilon_m2=1e-6, normalize_weights=True)
        wn = spatial_weights([[0.0, 0.0, 0.0]], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], cfg_n)
        assert wn.weights[0, 0] > 0.999999

    def test_hand_computed_two_sources(self):
        cfg = AlignmentConfig(epsilon_m2=1e-12, normalize_weights=False)
        w = spatial_weights([[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], cfg)
        np.testing.assert_allclose(w.weights[0], [1.0, 0.25], rtol=1e-9)
        cfg_n = AlignmentConfig(epsilon_m2=1e-12, normalize_weights=True)
        wn = spatial_weights([[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], cfg_n)
        np.testing.assert_allclose(wn.weights[0], [0.8, 0.2], rtol=1e-9)
        aligned = spatial_align(np.array([[1.0], [4.0]]), wn)
        assert aligned[0, 0] == pytest.approx(1.6, rel=1e-9)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(0)
        targets = rng.standard_normal((4, 3))
        sources = rng.standard_normal((6, 3))
        perm = rng.permutation(6)
        cfg = AlignmentConfig(normalize_weights=False)
        w = spatial_weights(targets, sources, cfg).weights
        w_perm = spatial_weights(targets, sources[perm], cfg).weights
        np.testing.assert_array_equal(w_perm, w[:, perm])
        # Normalization sums over a permuted axis: equal to rounding only.
        cfg_n = AlignmentConfig(normalize_weights=True)
        wn = spatial_weights(targets, sources, cfg_n).weights
        wn_perm = spatial_weights(targets, sources[perm], cfg_n).weights
        np.testing.assert_allclose(wn_perm, wn[:, perm], rtol=1e-14)

    def test_constancy_and_linearity(self):
        rng = np.random.default_rng(1)
        cfg = AlignmentConfig()
        w = spatial_weights(rng.standard_normal((5, 3)), rng.standard_normal((7, 3)), cfg)
        const = np.full((7, 9), 3.25)
        np.testing.assert_allclose(spatial_align(const, w), 3.25, atol=1e-12)
        x = rng.standard_normal((7, 9))
        y = rng.standard_normal((7, 9))
        lhs = spatial_align(2.0 * x - 0.5 * y, w)
        rhs = 2.0 * spatial_align(x, w) - 0.5 * spatial_align(y, w)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(2)
        cfg = AlignmentConfig(normalize_weights=True)
        w = spatial_weights(rng.standard_normal((5, 3)), rng.standard_normal((6, 3)), cfg)
        x = rng.standard_normal((6, 20))
        out = spatial_align(x, w)
        assert np.all(out <= x.max(axis=0) + 1e-12)
        assert np.all(out >= x.min(axis=0) - 1e-12)

    def test_empty_sources_rejected(self):
        with pytest.raises(InvalidArgumentError):
            spatial_weights([[0.0, 0.0, 0.0]], np.zeros((0, 3)), AlignmentConfig())

    def test_brute_force_equivalence_32x64(self):
        rng = np.random.default_rng(3)
        targets = rng.standard_normal((32, 3))
        sources = rng.standard_normal((16, 3))
        values = rng.standard_normal((16, 64))
        for normalize in (False, True):
            cfg = AlignmentConfig(epsilon_m2=1e-6, normalize_weights=normalize)
            w = spatial_weights(targets, sources, cfg)
            got = spatial_align(values, w)
            w_ref, ref = brute_force_spatial(targets, sources, values, 1e-6, normalize)
            assert np.max(np.abs(w.weights - w_ref)) < 1e-12 * np.max(np.abs(w_ref))
            assert np.max(np.abs(got - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


class TestTemporal:
    def test_kernel_closed_forms(self):
        cfg = AlignmentConfig(tau_s=6.0, sigma_s=2.0)
        T = time_alignment_matrix([0.0], [6.0], cfg)
        assert T.matrix[0, 0] == pytest.approx(1.0)
        T = time_alignment_matrix([0.0], [8.0], cfg)  # mismatch of one sigma
        assert T.matrix[0, 0] == pytest.approx(np.exp(-0.5), abs=1e-12)
        assert T.matrix[0, 0] == pytest.approx(0.60653066, abs=1e-7)
        T = time_alignment_matrix([0.0], [0.0], cfg)  # zero separation
        assert T.matrix[0, 0] == pytest.approx(np.exp(-4.5), abs=1e-12)
        assert T.matrix[0, 0] == pytest.approx(0.011109, abs=1e-6)

    def test_entries_bounded_peak_at_nearest(self):
        cfg = AlignmentConfig(tau_s=6.0, sigma_s=2.0)
        src = np.arange(0.0, 30.0, 0.5)
        dst = np.arange(8.0, 20.0, 1.0)
        T = time_alignment_matrix(src, dst, cfg)
        assert np.all(T.matrix > 0) and np.all(T.matrix <= 1.0)
        for k, t_k in enumerate(dst):
            expected = int(np.argmin(np.abs(src - (t_k - 6.0))))
            assert int(np.argmax(T.matrix[k])) == expected

    def test_monotonicity_required(self):
        cfg = AlignmentConfig()
        with pytest.raises(InvalidArgumentError):
            time_alignment_matrix([0.0, 0.5, 0.4], [1.0, 2.0], cfg)

    def test_delta_kernel_limit_resamples_at_lag(self):
        dt = 0.1
        src = np.arange(0.0, 10.0, dt)
        cfg = AlignmentConfig(tau_s=3.0, sigma_s=dt / 100.0)
        dst = src[:40] + 3.0
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, src.size))
        T = time_alignment_matrix(src, dst, cfg)
        out = temporal_align(x, T)
        np.testing.assert_allclose(out, x[:, :40], atol=1e-12)

    def test_constant_preserved(self):
        cfg = AlignmentConfig(tau_s=2.0, sigma_s=1.0)
        src = np.arange(0.0, 20.0, 0.5)
        dst = np.arange(5.0, 15.0, 1.0)
        T = time_alignment_matrix(src, dst, cfg)
        out = temporal_align(np.full((2, src.size), -1.25), T)
        np.testing.assert_allclose(out, -1.25, atol=1e-12)

    def test_brute_force_equivalence(self):
        rng = np.random.default_rng(5)
        src = np.cumsum(rng.uniform(0.2, 0.5, size=16))
        dst = np.cumsum(rng.uniform(0.3, 0.8, size=12)) + 4.0
        x = rng.standard_normal((8, 16))
        cfg = AlignmentConfig(tau_s=4.0, sigma_s=1.5)
        T = time_alignment_matrix(src, dst, cfg)
        got = temporal_align(x, T)
        T_ref, ref = brute_force_temporal(src, dst, x, 4.0, 1.5)
        assert np.max(np.abs(T.matrix - T_ref)) < 1e-12
        assert np.max(np.abs(got - ref)) < 1e-12

    def test_degenerate_row_error(self):
        cfg = AlignmentConfig(tau_s=0.0, sigma_s=0.01)
        src = np.arange(0.0, 1.0, 0.1)
        dst = np.array([0.5, 500.0])
        T = time_alignment_matrix(src, dst, cfg)
        with pytest.raises(DegenerateRowError, match="row 1"):
            temporal_align(np.ones((1, src.size)), T)


def _make_pair(rng, n_eeg=6, n_regions=4, rate_e=100.0, dur=20.0, lag=2.0):
    n_src = int(dur * rate_e)
    n_tgt = int(dur)
    src = MultichannelTimeSeries(
        tuple(f"e{i}" for i in range(n_eeg)), rate_e, 0.0,
        rng.standard_normal((n_eeg, n_src)),
    )
    tgt = MultichannelTimeSeries(
        tuple(f"r{i}" for i in range(n_regions)), 1.0, lag,
        rng.standard_normal((n_regions, n_tgt)),
    )
    geometry = SensorGeometry(rng.standard_normal((n_eeg, 3)) * 0.05, "head")
    parcellation = RegionParcellation(
        tuple(f"r{i}" for i in range(n_regions)),
        rng.standard_normal((n_regions, 3)) * 0.04,
        tuple(f"n{i}" for i in range(n_regions)),
    )
    sample = PairedSample(src, tgt, "c", "s", "g")
    return sample, geometry, parcellation


class TestIntegrate:
    def test_output_grids_match_target(self):
        rng = np.random.default_rng(6)
        sample, geometry, parcellation = _make_pair(rng)
        out = integrate(sample, geometry, parcellation, AlignmentConfig(tau_s=2.0))
        assert out.source_epoch.channel_ids == parcellation.region_ids
        assert out.source_epoch.n_samples == sample.target_epoch.n_samples
        assert out.source_epoch.start_time_s == sample.target_epoch.start_time_s
        assert out.source_epoch.sample_rate_hz == sample.target_epoch.sample_rate_hz

    def test_frame_mismatch(self):
        rng = np.random.default_rng(7)
        sample, geometry, parcellation = _make_pair(rng)
        bad = SensorGeometry(geometry.positions, "other_frame")
        with pytest.raises(InvalidArgumentError, match="frame"):
            integrate(sample, bad, parcellation, AlignmentConfig(tau_s=2.0))

    def test_idempotence_in_delta_limit(self):
        # With tau 0, a near-delta kernel, and near-zero epsilon the map
        # degenerates to the identity, so a second application is a no-op.
        rng = np.random.default_rng(8)
        sample, geometry, parcellation = _make_pair(rng, lag=0.0)
        cfg = AlignmentConfig(tau_s=2.0, sigma_s=1.0)
        first = integrate(sample, geometry, parcellation, AlignmentConfig(tau_s=2.0))
        delta_cfg = AlignmentConfig(tau_s=0.0, sigma_s=1.0 / 100.0, epsilon_m2=1e-18)
        region_geometry = SensorGeometry(parcellation.centroids, "head")
        again = integrate(first, region_geometry, parcellation, delta_cfg)
        assert np.max(np.abs(again.source_epoch.data - first.source_epoch.data)) < 1e-9
        assert np.max(np.abs(again.target_epoch.data - first.target_epoch.data)) < 1e-9

    def test_band_envelope_expansion_shapes(self):
        rng = np.random.default_rng(9)
        sample, geometry, parcellation = _make_pair(rng, rate_e=250.0, dur=8.0)
        env = band_envelopes(sample.source_epoch)
        assert env.n_channels == sample.source_epoch.n_channels * 5
        assert env.channel_ids[0] == "e0:delta"
        assert env.channel_ids[4] == "e0:gamma"
        conj = conjugate_representation(
            sample, geometry, parcellation, AlignmentConfig(tau_s=2.0)
        )
        assert conj.source_epoch.n_channels == parcellation.n_regions * 5
        assert conj.source_epoch.channel_ids[0] == "r0:delta"
        assert conj.source_epoch.n_samples == sample.target_epoch.n_samples
        # matrix-global standardization
        assert conj.source_epoch.data.mean() == pytest.approx(0.0, abs=1e-9)
        assert conj.source_epoch.data.std() == pytest.approx(1.0, abs=1e-9)


class TestIntegrationImprovement:
    def test_alignment_beats_naive_pairing_on_simulated_trials(self):
        # Conjugate integration must correlate better with the target than
        # nearest-channel envelopes naively point-sampled on the same grid.
        from neuroforge.simulate import (
            SimConfig,
            default_geometry,
            default_parcellation,
            make_paired_dataset,
        )
        from neuroforge.align import band_envelopes

        cfg = SimConfig(
            n_subjects=3, n_trials_per_condition=4, trial_duration_s=24.0,
            warmup_s=16.0, seed=11,
        )
        ds, truth = make_paired_dataset(cfg)
        assert ds.n_samples >= 20
        geometry = default_geometry(cfg)
        parcellation = default_parcellation(cfg)
        acfg = AlignmentConfig(tau_s=cfg.hrf_peak_s, sigma_s=2.0)
        factor = int(cfg.sample_rate_eeg_hz)
        dist = np.linalg.norm(
            parcellation.centroids[:, None, :] - geometry.positions[None, :, :], axis=2
        )
        nearest = dist.argmin(axis=1)
        post, pre = [], []
        for sample in ds.samples:
            mask = truth.active_region_masks[sample.condition_label]
            conj = conjugate_representation(sample, geometry, parcellation, acfg)
            gamma_rows = conj.source_epoch.data.reshape(cfg.n_regions, 5, -1)[:, 4, :]
            env = band_envelopes(sample.source_epoch).data.reshape(
                sample.source_epoch.n_channels, 5, -1
            )[:, 4, :]
            naive = env[nearest][:, ::factor][:, : sample.target_epoch.n_samples]
            for r in np.flatnonzero(mask):
                tgt = sample.target_epoch.data[r]
                post.append(pearson(gamma_rows[r], tgt))
                pre.append(pearson(naive[r], tgt))
        assert np.mean(post) > np.mean(pre)
