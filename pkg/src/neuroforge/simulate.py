"""Ground-truth neurovascular coupling simulator.

Generates paired electrophysiology/hemodynamic datasets with known lag, known
band dependence, known spatial activation, and known condition/group
structure. Region sources are band-limited oscillations whose high-frequency
(beta+gamma) component is amplitude-modulated by a slow positive process; the
hemodynamic signal is the rectified high-band envelope convolved with a
double-gamma impulse response and downsampled. Everything is derived from an
explicit seed, so identical configs reproduce datasets bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import fftconvolve
from scipy.stats import gamma as gamma_dist

from . import container
from .errors import InvalidArgumentError
from .signal import (
    BAND_ORDER,
    FREQUENCY_BANDS,
    MultichannelTimeSeries,
    PairedDataset,
    PairedSample,
    RegionParcellation,
    SensorGeometry,
    bandpass_filter,
    hemodynamic_lag_align,
)

#: Default per-band drive amplitudes: gamma dominates, matching the
#: neurophysiological prior that fast oscillations drive the hemodynamics.
DEFAULT_BAND_AMPLITUDES = {
    "delta": 0.2,
    "theta": 0.2,
    "alpha": 0.3,
    "beta": 0.25,
    "gamma": 2.0,
}


@dataclass(frozen=True)
class SimConfig:
    """Full specification of one simulated dataset.

    ``band_amplitudes`` maps band -> amplitude, either a single float applied
    to every condition or a {condition: amplitude} map. The seed fully
    determines the output.
    """

    n_regions: int = 12
    n_eeg_channels: int = 16
    sample_rate_eeg_hz: float = 250.0
    sample_rate_hemo_hz: float = 1.0
    band_amplitudes: dict = field(default_factory=lambda: dict(DEFAULT_BAND_AMPLITUDES))
    hrf_peak_s: float = 6.0
    hrf_undershoot_s: float = 16.0
    hrf_length_s: float = 32.0
    noise_std: float = 1.0
    target_noise_std: float = 0.25
    eeg_noise_std: float = 0.5
    n_subjects: int = 3
    subject_variability: float = 0.1
    conditions: tuple = ("cond_a", "cond_b")
    n_trials_per_condition: int = 8
    trial_duration_s: float = 96.0
    warmup_s: float = 32.0
    shared_drive_fraction: float = 0.5
    modulation_timescale_s: float = 1.5
    drive_band: tuple = (13.0, 100.0)
    hemo_modality: str = "bold"
    group_effect_region: int | None = None
    group_effect_gain: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_regions < 1 or self.n_eeg_channels < 1:
            raise InvalidArgumentError("n_regions and n_eeg_channels must be >= 1")
        if not (self.sample_rate_eeg_hz > 0 and self.sample_rate_hemo_hz > 0):
            raise InvalidArgumentError("sample rates must be > 0")
        if not self.hrf_peak_s > 0:
            raise InvalidArgumentError("hrf_peak_s must be > 0")
        if self.n_subjects < 1 or self.n_trials_per_condition < 1:
            raise InvalidArgumentError("n_subjects and n_trials_per_condition must be >= 1")
        if len(self.conditions) < 1:
            raise InvalidArgumentError("at least one condition is required")
        if self.hemo_modality not in ("bold", "fnirs"):
            raise InvalidArgumentError(f"unknown hemo_modality {self.hemo_modality!r}")
        ratio = self.sample_rate_eeg_hz / self.sample_rate_hemo_hz
        if abs(ratio - round(ratio)) > 1e-9:
            raise InvalidArgumentError(
                "sample_rate_eeg_hz must be an integer multiple of sample_rate_hemo_hz"
            )
        object.__setattr__(self, "conditions", tuple(self.conditions))
        amps = {}
        for band in BAND_ORDER:
            value = self.band_amplitudes.get(band, 0.0)
            if isinstance(value, dict):
                amps[band] = {c: float(value.get(c, 0.0)) for c in self.conditions}
            else:
                amps[band] = {c: float(value) for c in self.conditions}
        object.__setattr__(self, "band_amplitudes", amps)

    def band_amplitude(self, band, condition) -> float:
        return self.band_amplitudes[band][condition]

    def active_regions(self, condition) -> np.ndarray:
        """Deterministic active set: a contiguous block per condition."""
        if condition not in self.conditions:
            raise InvalidArgumentError(f"unknown condition {condition!r}")
        n_active = max(2, self.n_regions // 2)
        idx = self.conditions.index(condition)
        n_cond = len(self.conditions)
        if n_cond == 1:
            start = 0
        else:
            start = int(round(idx * (self.n_regions - n_active) / (n_cond - 1)))
        mask = np.zeros(self.n_regions, dtype=bool)
        mask[start : start + n_active] = True
        return mask

    def group_of_subject(self, subject_index: int) -> str:
        return "A" if subject_index < (self.n_subjects + 1) // 2 else "B"

    def to_jsonable(self) -> dict:
        d = asdict(self)
        d["conditions"] = list(self.conditions)
        d["drive_band"] = list(self.drive_band)
        return d


@dataclass(frozen=True)
class GroundTruth:
    """Everything needed to score recovery claims against the simulation.

    ``region_hemo`` holds the clean (pre-measurement-noise, post-gain)
    hemodynamic region activity per sample over the target epoch window;
    ``region_envelope`` holds the drive-band envelope per region, averaged
    into hemodynamic sample bins over the source epoch window.
    """

    true_lag_s: float
    band_amplitudes: dict
    active_region_masks: dict
    subject_gains: dict
    subject_groups: dict
    sample_index: tuple  # (subject_id, condition, trial) per sample
    region_hemo: np.ndarray  # [n_samples, n_regions, n_t_hemo]
    region_envelope: np.ndarray  # [n_samples, n_regions, n_t_hemo]


def make_rng(*entropy) -> np.random.Generator:
    """Derived RNG stream: deterministic in the entropy tuple, order-free."""
    return np.random.default_rng(np.random.SeedSequence([int(e) & 0xFFFFFFFF for e in entropy]))


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def _fibonacci_hemisphere(n, radius, z_min=0.15) -> np.ndarray:
    golden = np.pi * (3.0 - np.sqrt(5.0))
    k = np.arange(n)
    z = z_min + (1.0 - z_min) * (k + 0.5) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    theta = golden * k
    pts = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    return radius * pts


def default_geometry(config: SimConfig) -> SensorGeometry:
    """Electrode layout: golden-spiral hemisphere of radius 0.09 m."""
    return SensorGeometry(
        positions=_fibonacci_hemisphere(config.n_eeg_channels, 0.09), frame_label="head"
    )


def default_parcellation(config: SimConfig) -> RegionParcellation:
    """Region centroids: golden-spiral shell of radius 0.065 m."""
    centroids = _fibonacci_hemisphere(config.n_regions, 0.065, z_min=0.1)
    ids = tuple(f"r{i:02d}" for i in range(config.n_regions))
    names = tuple(f"region_{i:02d}" for i in range(config.n_regions))
    return RegionParcellation(region_ids=ids, centroids=centroids, names=names)


# ---------------------------------------------------------------------------
# Primitive generators
# ---------------------------------------------------------------------------


def canonical_hrf(dt_s, peak_s=6.0, undershoot_s=16.0, length_s=32.0) -> np.ndarray:
    """Double-gamma hemodynamic impulse response, normalized to unit peak.

    The positive lobe peaks at ``peak_s``; a 1/6-amplitude undershoot peaks
    at ``undershoot_s``. The kernel starts at exactly 0 and integrates to a
    positive value.
    """
    if not dt_s > 0:
        raise InvalidArgumentError(f"dt_s must be > 0, got {dt_s}")
    if not (0 < peak_s < undershoot_s < length_s):
        raise InvalidArgumentError(
            f"require 0 < peak_s < undershoot_s < length_s, got "
            f"{peak_s}, {undershoot_s}, {length_s}"
        )
    shape_peak, shape_under, ratio = 6.0, 16.0, 1.0 / 6.0
    t = np.arange(int(round(length_s / dt_s)) + 1) * dt_s
    g1 = gamma_dist.pdf(t, shape_peak, scale=peak_s / (shape_peak - 1.0))
    g2 = gamma_dist.pdf(t, shape_under, scale=undershoot_s / (shape_under - 1.0))
    h = g1 / g1.max() - ratio * g2 / g2.max()
    return h / h.max()


def pink_noise(n, rng, std=1.0, n_rows=None) -> np.ndarray:
    """1/f-shaped Gaussian noise, exactly ``std`` sample standard deviation.

    With ``n_rows`` set, returns a [n_rows, n] batch (each row independently
    normalized).
    """
    shape = (n,) if n_rows is None else (n_rows, n)
    white = rng.standard_normal(shape)
    spectrum = np.fft.rfft(white, axis=-1)
    freqs = np.fft.rfftfreq(n)
    shaping = np.zeros_like(freqs)
    shaping[1:] = freqs[1:] ** -0.5
    x = np.fft.irfft(spectrum * shaping, n=n, axis=-1)
    s = x.std(axis=-1, keepdims=True)
    return x * np.divide(std, s, out=np.zeros_like(s), where=s > 0)


def _band_oscillations(n_rows, n, rate, band, rng) -> np.ndarray:
    """[n_rows, n] unit-std band-limited Gaussian oscillations."""
    lo, hi = band
    hi = min(hi, 0.99 * rate / 2.0)
    white = MultichannelTimeSeries(
        tuple(f"w{i}" for i in range(n_rows)), rate, 0.0, rng.standard_normal((n_rows, n))
    )
    x = bandpass_filter(white, lo, hi, order=4).data
    s = x.std(axis=-1, keepdims=True)
    return x / np.where(s > 0, s, 1.0)


def _slow_modulations(n_rows, n, rate, timescale_s, rng) -> np.ndarray:
    """[n_rows, n] unit-variance smoothed Gaussians (burst log-drives)."""
    z = gaussian_filter1d(
        rng.standard_normal((n_rows, n)), sigma=timescale_s * rate, axis=-1, mode="reflect"
    )
    s = z.std(axis=-1, keepdims=True)
    return z / np.where(s > 0, s, 1.0)


def synth_sources(
    config: SimConfig, condition, subject_id, rng, duration_s=None
) -> np.ndarray:
    """Region source activity [n_regions x n_t] at the EEG rate.

    Active regions carry per-band oscillations at the configured amplitudes;
    the beta+gamma component is amplitude-modulated by a positive lognormal
    burst process (partially shared across co-active regions) so its envelope
    is the hemodynamic drive. Inactive regions are pink noise only.
    """
    if condition not in config.conditions:
        raise InvalidArgumentError(f"unknown condition {condition!r}")
    if duration_s is None:
        duration_s = config.trial_duration_s + config.warmup_s + config.hrf_peak_s
    rate = config.sample_rate_eeg_hz
    n = int(round(duration_s * rate))
    active = config.active_regions(condition)
    n_active = int(active.sum())
    out = pink_noise(n, rng, std=config.noise_std, n_rows=config.n_regions)
    if n_active == 0:
        return out
    shared = _slow_modulations(1, n, rate, config.modulation_timescale_s, rng)
    private = _slow_modulations(n_active, n, rate, config.modulation_timescale_s, rng)
    c = config.shared_drive_fraction
    z = np.sqrt(c) * shared + np.sqrt(1.0 - c) * private
    modulation = np.exp(0.6 * z - 0.18)
    fast = np.zeros((n_active, n))
    slow = np.zeros((n_active, n))
    fast_bands = {"beta", "gamma"}
    for band in BAND_ORDER:
        amp = config.band_amplitude(band, condition)
        if amp == 0.0:
            continue
        osc = amp * _band_oscillations(n_active, n, rate, FREQUENCY_BANDS[band], rng)
        if band in fast_bands:
            fast += osc
        else:
            slow += osc
    out[active] += modulation * fast + slow
    return out


def neurovascular_convolve(
    source_activity,
    hrf,
    source_rate_hz,
    hemo_rate_hz,
    drive_band=(13.0, 100.0),
) -> np.ndarray:
    """Hemodynamic response of region sources.

    Rectified drive-band envelope of each region, causally convolved with the
    impulse response sampled at the source rate, then downsampled to the
    hemodynamic rate. Output shape [n_regions x n_t // factor].
    """
    x = np.atleast_2d(np.asarray(source_activity, dtype=np.float64))
    factor = source_rate_hz / hemo_rate_hz
    if abs(factor - round(factor)) > 1e-9:
        raise InvalidArgumentError(
            f"source rate {source_rate_hz:g} must be an integer multiple of "
            f"hemo rate {hemo_rate_hz:g}"
        )
    factor = int(round(factor))
    n = x.shape[1]
    if np.all(x == 0.0):
        env = np.zeros_like(x)
    else:
        series = MultichannelTimeSeries(
            tuple(f"r{i}" for i in range(x.shape[0])), source_rate_hz, 0.0, x
        )
        lo, hi = drive_band
        hi = min(hi, 0.99 * source_rate_hz / 2.0)
        env = np.abs(bandpass_filter(series, lo, hi, order=4).data)
    kernel = np.asarray(hrf, dtype=np.float64)
    out = fftconvolve(env, kernel[None, :], axes=-1)[:, :n]
    return out[:, ::factor]


def project_to_sensors(
    region_activity,
    parcellation: RegionParcellation,
    geometry: SensorGeometry,
    rng,
    noise_std=0.0,
    sample_rate_hz=1.0,
    start_time_s=0.0,
    epsilon_m2=1e-6,
) -> MultichannelTimeSeries:
    """Mix region activity into sensor channels by inverse-square gains.

    channel[c] = sum_r activity[r] / (||pos_c - centroid_r||^2 + epsilon)
    plus white Gaussian sensor noise.
    """
    if geometry.frame_label != parcellation.frame_label:
        raise InvalidArgumentError(
            f"coordinate frame mismatch: geometry {geometry.frame_label!r} vs "
            f"parcellation {parcellation.frame_label!r}"
        )
    act = np.atleast_2d(np.asarray(region_activity, dtype=np.float64))
    if act.shape[0] != parcellation.n_regions:
        raise InvalidArgumentError(
            f"activity has {act.shape[0]} regions, parcellation has {parcellation.n_regions}"
        )
    diff = geometry.positions[:, None, :] - parcellation.centroids[None, :, :]
    gains = 1.0 / (np.einsum("crk,crk->cr", diff, diff) + epsilon_m2)
    data = gains @ act
    if noise_std > 0:
        data = data + rng.normal(0.0, noise_std, size=data.shape)
    ids = tuple(f"eeg{c:02d}" for c in range(geometry.n_sensors))
    return MultichannelTimeSeries(ids, sample_rate_hz, start_time_s, data)


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------


def _envelope_to_hemo_rate(env, source_rate_hz, factor) -> np.ndarray:
    """Zero-phase lowpass then point-sample: no decimation-induced lag bias."""
    from scipy.signal import butter, sosfiltfilt

    cutoff = 0.45 * source_rate_hz / factor
    sos = butter(2, cutoff, btype="lowpass", output="sos", fs=source_rate_hz)
    return sosfiltfilt(sos, env, axis=-1)[..., ::factor]


def make_paired_dataset(config: SimConfig):
    """Generate the full dataset; returns ``(PairedDataset, GroundTruth)``.

    One sample per (subject, condition, trial), lag-pre-aligned so target
    epoch index k sits ``hrf_peak_s`` later in absolute time than source
    index k * rate_ratio. Source epochs start at t=0, target epochs at
    t=hrf_peak_s.
    """
    geometry = default_geometry(config)
    parcellation = default_parcellation(config)
    rate_e = config.sample_rate_eeg_hz
    rate_h = config.sample_rate_hemo_hz
    factor = int(round(rate_e / rate_h))
    hrf = canonical_hrf(
        1.0 / rate_e, config.hrf_peak_s, config.hrf_undershoot_s, config.hrf_length_s
    )
    n_trial_h = int(round(config.trial_duration_s * rate_h))
    n_trial_e = n_trial_h * factor
    k_warm_e = int(round(config.warmup_s * rate_e))
    k_warm_h = int(round(config.warmup_s * rate_h))

    subject_gains = {}
    subject_groups = {}
    samples = []
    index = []
    hemo_truth = []
    env_truth = []
    for s_idx in range(config.n_subjects):
        subject_id = f"sub{s_idx:02d}"
        group = config.group_of_subject(s_idx)
        subject_groups[subject_id] = group
        srng = make_rng(config.seed, 1000 + s_idx)
        gains = 1.0 + config.subject_variability * srng.standard_normal(config.n_regions)
        gains = np.clip(gains, 0.2, None)
        if config.group_effect_region is not None and group == "B":
            gains = gains.copy()
            gains[config.group_effect_region] *= config.group_effect_gain
        subject_gains[subject_id] = gains
        jitter = 0.004 * config.subject_variability * srng.standard_normal((config.n_regions, 3))
        subj_parcellation = RegionParcellation(
            region_ids=parcellation.region_ids,
            centroids=parcellation.centroids + jitter,
            names=parcellation.names,
        )
        for c_idx, condition in enumerate(config.conditions):
            for t_idx in range(config.n_trials_per_condition):
                rng = make_rng(config.seed, s_idx, c_idx, t_idx)
                sources = synth_sources(config, condition, subject_id, rng)
                hemo = neurovascular_convolve(
                    sources, hrf, rate_e, rate_h, drive_band=config.drive_band
                )
                hemo = gains[:, None] * hemo
                eeg_full = project_to_sensors(
                    sources,
                    subj_parcellation,
                    geometry,
                    rng,
                    noise_std=config.eeg_noise_std,
                    sample_rate_hz=rate_e,
                    start_time_s=0.0,
                )
                target_data = _make_target_channels(config, hemo, rng)
                target_full = MultichannelTimeSeries(
                    channel_ids=target_data[0],
                    sample_rate_hz=rate_h,
                    start_time_s=0.0,
                    data=target_data[1],
                )
                src_al, tgt_al = hemodynamic_lag_align(
                    eeg_full, target_full, config.hrf_peak_s
                )
                src_epoch = MultichannelTimeSeries(
                    src_al.channel_ids,
                    rate_e,
                    0.0,
                    src_al.data[:, k_warm_e : k_warm_e + n_trial_e],
                )
                tgt_epoch = MultichannelTimeSeries(
                    tgt_al.channel_ids,
                    rate_h,
                    config.hrf_peak_s,
                    tgt_al.data[:, k_warm_h : k_warm_h + n_trial_h],
                )
                samples.append(
                    PairedSample(
                        source_epoch=src_epoch,
                        target_epoch=tgt_epoch,
                        condition_label=condition,
                        subject_id=subject_id,
                        group_id=group,
                    )
                )
                index.append((subject_id, condition, t_idx))
                # Truth arrays over the matching epoch windows.
                lag_h = int(round(config.hrf_peak_s * rate_h))
                hemo_truth.append(hemo[:, k_warm_h + lag_h : k_warm_h + lag_h + n_trial_h])
                drive_env = _drive_envelope(config, sources)
                env_h = _envelope_to_hemo_rate(drive_env, rate_e, factor)
                env_truth.append(env_h[:, k_warm_h : k_warm_h + n_trial_h])

    manifest = {
        "generator": "simdata",
        "seed": config.seed,
        "config": config.to_jsonable(),
        "parcellation": {
            "region_ids": list(parcellation.region_ids),
            "centroids": parcellation.centroids.tolist(),
            "names": list(parcellation.names),
        },
        "geometry": {
            "positions": geometry.positions.tolist(),
            "frame_label": geometry.frame_label,
        },
    }
    dataset = PairedDataset(samples=tuple(samples), manifest=manifest)
    truth = GroundTruth(
        true_lag_s=config.hrf_peak_s,
        band_amplitudes=config.band_amplitudes,
        active_region_masks={c: config.active_regions(c) for c in config.conditions},
        subject_gains=subject_gains,
        subject_groups=subject_groups,
        sample_index=tuple(index),
        region_hemo=np.asarray(hemo_truth),
        region_envelope=np.asarray(env_truth),
    )
    return dataset, truth


def _drive_envelope(config: SimConfig, sources) -> np.ndarray:
    series = MultichannelTimeSeries(
        tuple(f"r{i}" for i in range(sources.shape[0])),
        config.sample_rate_eeg_hz,
        0.0,
        sources,
    )
    lo, hi = config.drive_band
    hi = min(hi, 0.99 * config.sample_rate_eeg_hz / 2.0)
    return np.abs(bandpass_filter(series, lo, hi, order=4).data)


def _make_target_channels(config: SimConfig, hemo, rng):
    """Assemble target channel ids/data for the configured hemo modality."""
    region_ids = [f"r{i:02d}" for i in range(config.n_regions)]
    if config.hemo_modality == "bold":
        ids = tuple(region_ids)
        data = hemo + rng.normal(0.0, config.target_noise_std, size=hemo.shape)
        return ids, data
    ids = []
    rows = []
    for i, rid in enumerate(region_ids):
        ids.extend([f"{rid}:hbo", f"{rid}:hbr"])
        rows.append(hemo[i] + rng.normal(0.0, config.target_noise_std, size=hemo.shape[1]))
        rows.append(-0.4 * hemo[i] + rng.normal(0.0, config.target_noise_std, size=hemo.shape[1]))
    return tuple(ids), np.asarray(rows)


# ---------------------------------------------------------------------------
# Ground-truth sidecar I/O
# ---------------------------------------------------------------------------


def save_ground_truth(truth: GroundTruth, path) -> None:
    """Write the sidecar (JSON + blobs) next to a saved dataset container."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    container.write_blob(root / "gt_region_hemo.blob", truth.region_hemo)
    container.write_blob(root / "gt_region_envelope.blob", truth.region_envelope)
    doc = {
        "schema_version": container.SCHEMA_VERSION,
        "true_lag_s": truth.true_lag_s,
        "band_amplitudes": truth.band_amplitudes,
        "active_region_masks": {
            c: [bool(b) for b in mask] for c, mask in truth.active_region_masks.items()
        },
        "subject_gains": {s: list(map(float, g)) for s, g in truth.subject_gains.items()},
        "subject_groups": truth.subject_groups,
        "sample_index": [list(entry) for entry in truth.sample_index],
    }
    (root / "groundtruth.json").write_bytes(container.dump_json(doc))


def load_ground_truth(path) -> GroundTruth:
    root = Path(path)
    import json

    doc = json.loads((root / "groundtruth.json").read_text("utf-8"))
    version = doc.get("schema_version")
    if version != container.SCHEMA_VERSION:
        raise InvalidArgumentError(
            f"ground truth schema version {version!r} unsupported"
        )
    return GroundTruth(
        true_lag_s=float(doc["true_lag_s"]),
        band_amplitudes=doc["band_amplitudes"],
        active_region_masks={
            c: np.asarray(mask, dtype=bool) for c, mask in doc["active_region_masks"].items()
        },
        subject_gains={s: np.asarray(g) for s, g in doc["subject_gains"].items()},
        subject_groups=doc["subject_groups"],
        sample_index=tuple(tuple(entry) for entry in doc["sample_index"]),
        region_hemo=container.read_blob(root / "gt_region_hemo.blob"),
        region_envelope=container.read_blob(root / "gt_region_envelope.blob"),
    )
