"""Simulator ground truth: impulse response, source spectra, neurovascular
convolution, sensor projection, dataset assembly, and lag structure."""

import numpy as np
import pytest
import torch

from neuroforge.errors import InvalidArgumentError
from neuroforge.metrics import absolute_lag_scan, lagged_correlation, pearson
from neuroforge.signal import MultichannelTimeSeries
from neuroforge.simulate import (
    GroundTruth,
    SimConfig,
    canonical_hrf,
    default_geometry,
    default_parcellation,
    load_ground_truth,
    make_paired_dataset,
    make_rng,
    neurovascular_convolve,
    project_to_sensors,
    save_ground_truth,
    synth_sources,
)


class TestHrf:
    def test_peak_position(self):
        h = canonical_hrf(0.1, peak_s=6.0)
        assert abs(int(np.argmax(h)) - 60) <= 1
        assert h.max() == pytest.approx(1.0)

    def test_zero_at_origin_and_positive_integral(self):
        h = canonical_hrf(0.05)
        assert h[0] == 0.0
        assert h.sum() > 0

    def test_impulse_convolution_identity(self):
        h = canonical_hrf(0.5)
        impulse = np.zeros(200)
        impulse[0] = 1.0
        out = np.convolve(impulse, h)[:200]
        np.testing.assert_allclose(out[: h.size], h, atol=1e-15)

    def test_bad_parameters(self):
        with pytest.raises(InvalidArgumentError):
            canonical_hrf(0.0)
        with pytest.raises(InvalidArgumentError):
            canonical_hrf(0.1, peak_s=10.0, undershoot_s=6.0)
        with pytest.raises(InvalidArgumentError):
            canonical_hrf(0.1, peak_s=6.0, undershoot_s=40.0, length_s=32.0)


class TestSources:
    def test_zero_amplitudes_give_pure_noise(self):
        cfg = SimConfig(
            band_amplitudes={b: 0.0 for b in ("delta", "theta", "alpha", "beta", "gamma")},
            noise_std=0.7, trial_duration_s=20.0, warmup_s=4.0,
        )
        rng = make_rng(0)
        src = synth_sources(cfg, "cond_a", "sub00", rng)
        stds = src.std(axis=1)
        assert np.all(np.abs(stds - 0.7) / 0.7 < 0.1)

    def test_gamma_dominance_in_spectrum(self):
        cfg = SimConfig(
            band_amplitudes={"delta": 0, "theta": 0, "alpha": 0.2, "beta": 0, "gamma": 2.0},
            noise_std=0.05, trial_duration_s=20.0, warmup_s=4.0,
        )
        src = synth_sources(cfg, "cond_a", "sub00", make_rng(1))
        active = cfg.active_regions("cond_a")
        x = src[active][0]
        freqs = np.fft.rfftfreq(x.size, 1.0 / cfg.sample_rate_eeg_hz)
        power = np.abs(np.fft.rfft(x)) ** 2
        gamma = power[(freqs >= 30) & (freqs <= 100)].sum()
        alpha = power[(freqs >= 8) & (freqs <= 13)].sum()
        assert gamma / alpha > 10

    def test_determinism(self):
        cfg = SimConfig(trial_duration_s=10.0, warmup_s=2.0)
        a = synth_sources(cfg, "cond_a", "sub00", make_rng(2))
        b = synth_sources(cfg, "cond_a", "sub00", make_rng(2))
        np.testing.assert_array_equal(a, b)

    def test_unknown_condition(self):
        cfg = SimConfig()
        with pytest.raises(InvalidArgumentError):
            synth_sources(cfg, "nope", "sub00", make_rng(0))

    def test_inactive_regions_noise_only(self):
        cfg = SimConfig(trial_duration_s=10.0, warmup_s=2.0, noise_std=0.5)
        src = synth_sources(cfg, "cond_a", "sub00", make_rng(3))
        inactive = ~cfg.active_regions("cond_a")
        active = cfg.active_regions("cond_a")
        assert src[inactive].std(axis=1).max() < 1.0
        assert src[active].std(axis=1).min() > 1.0


class TestNeurovascular:
    def test_burst_delay(self):
        rate = 200.0
        n = int(40 * rate)
        t = np.arange(n) / rate
        burst = np.where((t >= 10.0) & (t < 10.5), 1.0, 0.0) * np.sin(2 * np.pi * 40 * t)
        h = canonical_hrf(1.0 / rate, peak_s=6.0)
        out = neurovascular_convolve(burst[None, :], h, rate, 1.0)
        peak_t = int(np.argmax(out[0]))
        assert abs(peak_t - 16) <= 1

    def test_zero_and_scaling(self):
        rate = 200.0
        h = canonical_hrf(1.0 / rate)
        zero = neurovascular_convolve(np.zeros((2, 4000)), h, rate, 1.0)
        assert np.all(zero == 0.0)
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 4000))
        one = neurovascular_convolve(x, h, rate, 1.0)
        two = neurovascular_convolve(2.0 * x, h, rate, 1.0)
        np.testing.assert_allclose(two, 2.0 * one, rtol=1e-9)

    def test_envelope_to_output_lag(self):
        cfg = SimConfig(trial_duration_s=40.0, warmup_s=8.0)
        src = synth_sources(cfg, "cond_a", "sub00", make_rng(5))
        h = canonical_hrf(1.0 / cfg.sample_rate_eeg_hz, peak_s=cfg.hrf_peak_s)
        out = neurovascular_convolve(src, h, cfg.sample_rate_eeg_hz, 1.0)
        from neuroforge.simulate import _drive_envelope, _envelope_to_hemo_rate

        env = _envelope_to_hemo_rate(
            _drive_envelope(cfg, src), cfg.sample_rate_eeg_hz, int(cfg.sample_rate_eeg_hz)
        )
        active = np.flatnonzero(cfg.active_regions("cond_a"))[0]
        scan = lagged_correlation(env[active], out[active, : env.shape[1]], 10)
        assert abs(scan.peak_lag - (-6)) <= 1

    def test_incommensurate_rates(self):
        h = canonical_hrf(0.01)
        with pytest.raises(InvalidArgumentError):
            neurovascular_convolve(np.zeros((1, 100)), h, 100.0, 0.3)


class TestProjection:
    def test_collocated_sensor_tracks_region(self):
        rng = make_rng(6)
        cfg = SimConfig(n_regions=1, n_eeg_channels=1)
        parc = default_parcellation(cfg)
        geometry = type(default_geometry(cfg))(positions=parc.centroids, frame_label="head")
        activity = rng.standard_normal((1, 500))
        out = project_to_sensors(activity, parc, geometry, rng, noise_std=0.0)
        assert pearson(out.data[0], activity[0]) > 0.999

    def test_identical_sensors_identical_channels(self):
        rng = make_rng(7)
        cfg = SimConfig(n_regions=3, n_eeg_channels=2)
        parc = default_parcellation(cfg)
        pos = np.tile(np.array([[0.0, 0.05, 0.07]]), (2, 1))
        geometry = type(default_geometry(cfg))(positions=pos, frame_label="head")
        activity = rng.standard_normal((3, 100))
        out = project_to_sensors(activity, parc, geometry, rng, noise_std=0.0)
        np.testing.assert_array_equal(out.data[0], out.data[1])

    def test_nearest_region_dominates(self):
        rng = make_rng(8)
        cfg = SimConfig(n_regions=4, n_eeg_channels=1)
        parc = default_parcellation(cfg)
        sensor = parc.centroids[[2]] * 1.05
        geometry = type(default_geometry(cfg))(positions=sensor, frame_label="head")
        activity = rng.standard_normal((4, 2000))
        out = project_to_sensors(activity, parc, geometry, rng, noise_std=0.0)
        dists = np.linalg.norm(parc.centroids - sensor[0], axis=1)
        near, far = int(np.argmin(dists)), int(np.argmax(dists))
        assert abs(pearson(out.data[0], activity[near])) > abs(
            pearson(out.data[0], activity[far])
        )

    def test_frame_mismatch(self):
        rng = make_rng(9)
        cfg = SimConfig(n_regions=2, n_eeg_channels=2)
        parc = default_parcellation(cfg)
        geometry = type(default_geometry(cfg))(
            positions=np.zeros((2, 3)), frame_label="scanner"
        )
        with pytest.raises(InvalidArgumentError, match="frame"):
            project_to_sensors(np.zeros((2, 10)), parc, geometry, rng)


@pytest.fixture(scope="module")
def small_dataset():
    cfg = SimConfig(
        n_subjects=3, n_trials_per_condition=4, trial_duration_s=48.0,
        warmup_s=24.0, seed=13,
    )
    dataset, truth = make_paired_dataset(cfg)
    return cfg, dataset, truth


class TestDataset:
    def test_sample_counting(self):
        cfg = SimConfig(
            n_subjects=3, n_trials_per_condition=20, trial_duration_s=4.0,
            warmup_s=4.0, seed=0,
        )
        dataset, truth = make_paired_dataset(cfg)
        assert dataset.n_samples == 120
        assert len(truth.sample_index) == 120

    def test_seed_determinism_byte_identical(self, tmp_path):
        from neuroforge.container import save_container

        cfg = SimConfig(n_subjects=1, n_trials_per_condition=2, trial_duration_s=8.0,
                        warmup_s=4.0, seed=21)
        d1, _ = make_paired_dataset(cfg)
        d2, _ = make_paired_dataset(cfg)
        save_container(d1, tmp_path / "a")
        save_container(d2, tmp_path / "b")
        for rel in sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_epoch_layout(self, small_dataset):
        cfg, dataset, _ = small_dataset
        s = dataset.samples[0]
        assert s.source_epoch.start_time_s == 0.0
        assert s.target_epoch.start_time_s == cfg.hrf_peak_s
        assert s.source_epoch.duration_s == pytest.approx(s.target_epoch.duration_s)
        assert s.source_epoch.n_samples == int(48 * cfg.sample_rate_eeg_hz)

    def test_noise_epochs_uncorrelated_with_targets(self):
        # Variance-matched white-noise epochs against true targets: the mean
        # absolute correlation over >= 100 draws stays below 0.1.
        cfg = SimConfig(n_subjects=2, n_trials_per_condition=1, trial_duration_s=96.0,
                        warmup_s=24.0, seed=31)
        dataset, _ = make_paired_dataset(cfg)
        rng = np.random.default_rng(0)
        scores = []
        while len(scores) < 100:
            for s in dataset.samples:
                tgt = s.target_epoch.data
                noise = rng.normal(0.0, tgt.std(axis=1, keepdims=True), size=tgt.shape)
                for ch in range(tgt.shape[0]):
                    scores.append(pearson(noise[ch], tgt[ch]))
        assert np.mean(np.abs(scores)) < 0.1

    def test_end_to_end_lag_every_subject_condition(self, small_dataset):
        cfg, dataset, truth = small_dataset
        for i, sample in enumerate(dataset.samples):
            mask = truth.active_region_masks[sample.condition_label]
            env = MultichannelTimeSeries(
                ("env",), cfg.sample_rate_hemo_hz, sample.source_epoch.start_time_s,
                truth.region_envelope[i][mask].mean(axis=0, keepdims=True),
            )
            _, peak_s = absolute_lag_scan(env, sample.target_epoch, 9.0)
            assert abs(peak_s - (-cfg.hrf_peak_s)) <= 1.0 / cfg.sample_rate_hemo_hz

    def test_ground_truth_round_trip(self, small_dataset, tmp_path):
        _, _, truth = small_dataset
        save_ground_truth(truth, tmp_path / "gt")
        back = load_ground_truth(tmp_path / "gt")
        assert back.true_lag_s == truth.true_lag_s
        np.testing.assert_array_equal(back.region_hemo, truth.region_hemo)
        np.testing.assert_array_equal(back.region_envelope, truth.region_envelope)
        assert back.sample_index == truth.sample_index
        for c, mask in truth.active_region_masks.items():
            np.testing.assert_array_equal(back.active_region_masks[c], mask)

    def test_band_ground_truth_recoverable_by_regression(self, small_dataset):
        # Ridge regression from per-band envelope summaries to the target,
        # scored by permutation: the gamma feature must dominate.
        from neuroforge.align import band_envelopes

        cfg, dataset, truth = small_dataset
        rng = np.random.default_rng(5)
        X, y = [], []
        for i, s in enumerate(dataset.samples[:8]):
            env = band_envelopes(s.source_epoch).data.reshape(
                s.source_epoch.n_channels, 5, -1
            ).mean(axis=0)  # [5 bands, n_t_eeg]
            factor = int(cfg.sample_rate_eeg_hz)
            env_h = env[:, ::factor][:, : s.target_epoch.n_samples]
            mask = truth.active_region_masks[s.condition_label]
            X.append(env_h.T)
            y.append(s.target_epoch.data[mask].mean(axis=0))
        X = np.concatenate(X)
        y = np.concatenate(y)
        X = (X - X.mean(0)) / X.std(0)
        y = (y - y.mean()) / y.std()
        w = np.linalg.solve(X.T @ X + 1e-3 * np.eye(5), X.T @ y)
        base = pearson(X @ w, y)
        drops = []
        for b in range(5):
            Xp = X.copy()
            Xp[:, b] = Xp[rng.permutation(X.shape[0]), b]
            drops.append(base - pearson(Xp @ w, y))
        assert int(np.argmax(drops)) == 4  # gamma is the last band
