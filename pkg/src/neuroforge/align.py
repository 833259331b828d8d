"""Spatio-temporal alignment onto a shared target grid.

Directly detected signals (e.g., EEG electrodes) are mapped onto the sampling
positions of an indirectly detected modality by inverse-square-distance
weighting, and onto its timestamps by a Gaussian lag kernel centered at the
physiological delay. The combination produces conjugate-domain pairs: source
and target on one spatial index set and one time grid.

Both alignment operators are plain linear maps, so brute-force double-loop
oracles in the test suite must match them to near machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import DegenerateRowError, InvalidArgumentError
from .signal import (
    BAND_ORDER,
    FREQUENCY_BANDS,
    MultichannelTimeSeries,
    PairedSample,
    RegionParcellation,
    SensorGeometry,
    bandpass_filter,
)


@dataclass(frozen=True)
class AlignmentConfig:
    """Parameters of the spatial and temporal alignment kernels.

    Attributes:
        epsilon_m2: Distance-squared regularizer (m^2) keeping inverse-square
            weights finite at collocation.
        tau_s: Physiological delay between the modalities (s).
        sigma_s: Width of the Gaussian lag kernel (s).
        normalize_weights: Row-normalize spatial weights so aligned values
            are convex combinations of source values.
        normalize_rows: Row-normalize the time-alignment kernel before
            application.
    """

    epsilon_m2: float = 1e-6
    tau_s: float = 6.0
    sigma_s: float = 2.0
    normalize_weights: bool = True
    normalize_rows: bool = True

    def __post_init__(self):
        if not self.epsilon_m2 > 0:
            raise InvalidArgumentError(f"epsilon_m2 must be > 0, got {self.epsilon_m2}")
        if not self.sigma_s > 0:
            raise InvalidArgumentError(f"sigma_s must be > 0, got {self.sigma_s}")


@dataclass(frozen=True)
class SpatialWeightMatrix:
    """Inverse-square-distance weights, one row per target position."""

    weights: np.ndarray
    normalized: bool

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise InvalidArgumentError(f"weights must be 2D, got shape {w.shape}")
        if not np.all(w > 0):
            raise InvalidArgumentError("weights must be strictly positive")
        object.__setattr__(self, "weights", w)
        self.weights.setflags(write=False)


@dataclass(frozen=True)
class TimeAlignmentMatrix:
    """Gaussian lag kernel between destination and source timestamps."""

    matrix: np.ndarray
    src_times_s: np.ndarray
    dst_times_s: np.ndarray
    tau_s: float
    sigma_s: float

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=np.float64))
        object.__setattr__(self, "src_times_s", np.asarray(self.src_times_s, dtype=np.float64))
        object.__setattr__(self, "dst_times_s", np.asarray(self.dst_times_s, dtype=np.float64))
        self.matrix.setflags(write=False)

    def row_normalized(self) -> np.ndarray:
        """Row-normalized kernel; raises on rows without mass."""
        row_sums = self.matrix.sum(axis=1)
        bad = np.flatnonzero(row_sums < 1e-300)
        if bad.size:
            raise DegenerateRowError(
                f"time-alignment row {int(bad[0])} "
                f"(dst t={self.dst_times_s[int(bad[0])]:g}s) has no kernel mass "
                f"over the source span",
                row=int(bad[0]),
            )
        return self.matrix / row_sums[:, None]


def spatial_weights(
    target_positions, source_positions, config: AlignmentConfig
) -> SpatialWeightMatrix:
    """Weights w[i, j] = 1 / (||target_i - source_j||^2 + epsilon).

    Rows are normalized to sum to 1 when ``config.normalize_weights`` is set.
    """
    tgt = np.asarray(target_positions, dtype=np.float64)
    src = np.asarray(source_positions, dtype=np.float64)
    if tgt.ndim != 2 or tgt.shape[1] != 3 or tgt.shape[0] == 0:
        raise InvalidArgumentError(f"target positions must be (n>=1, 3), got {tgt.shape}")
    if src.ndim != 2 or src.shape[1] != 3 or src.shape[0] == 0:
        raise InvalidArgumentError(f"source positions must be (n>=1, 3), got {src.shape}")
    if not (np.all(np.isfinite(tgt)) and np.all(np.isfinite(src))):
        raise InvalidArgumentError("positions contain non-finite coordinates")
    diff = tgt[:, None, :] - src[None, :, :]
    dist_sq = np.einsum("ijk,ijk->ij", diff, diff)
    w = 1.0 / (dist_sq + config.epsilon_m2)
    if config.normalize_weights:
        w = w / w.sum(axis=1, keepdims=True)
    return SpatialWeightMatrix(weights=w, normalized=config.normalize_weights)


def spatial_align(source_values, weights: SpatialWeightMatrix) -> np.ndarray:
    """Aligned values: out[i, t] = sum_j w[i, j] * source[j, t]."""
    x = np.asarray(source_values, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError(f"source values must be 2D, got shape {x.shape}")
    if weights.weights.shape[1] != x.shape[0]:
        raise InvalidArgumentError(
            f"weight columns ({weights.weights.shape[1]}) must match "
            f"source rows ({x.shape[0]})"
        )
    return weights.weights @ x


def time_alignment_matrix(
    src_times_s, dst_times_s, config: AlignmentConfig
) -> TimeAlignmentMatrix:
    """Kernel T[k, l] = exp(-(t_dst[k] - t_src[l] - tau)^2 / (2 sigma^2)).

    T[k, l] is 1 exactly when the destination time trails the source time by
    tau, and decays with the mismatch on a sigma scale.
    """
    src = np.asarray(src_times_s, dtype=np.float64)
    dst = np.asarray(dst_times_s, dtype=np.float64)
    for name, t in (("src_times_s", src), ("dst_times_s", dst)):
        if t.ndim != 1 or t.size == 0:
            raise InvalidArgumentError(f"{name} must be a nonempty 1D sequence")
        if not np.all(np.isfinite(t)):
            raise InvalidArgumentError(f"{name} contains non-finite values")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise InvalidArgumentError(f"{name} must be strictly increasing")
    mismatch = dst[:, None] - src[None, :] - config.tau_s
    T = np.exp(-(mismatch**2) / (2.0 * config.sigma_s**2))
    return TimeAlignmentMatrix(
        matrix=T, src_times_s=src, dst_times_s=dst, tau_s=config.tau_s, sigma_s=config.sigma_s
    )


def temporal_align(src_series, T: TimeAlignmentMatrix) -> np.ndarray:
    """Soft-resample onto destination times: out[:, k] = sum_l That[k, l] src[:, l].

    ``That`` is the row-normalized kernel, so constant inputs stay constant.

    Raises:
        DegenerateRowError: a kernel row has no mass (every destination time
            falls far outside the shifted source span); names the row.
    """
    x = np.asarray(src_series, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError(f"src_series must be 2D, got shape {x.shape}")
    if x.shape[1] != T.matrix.shape[1]:
        raise InvalidArgumentError(
            f"src_series columns ({x.shape[1]}) must match kernel columns "
            f"({T.matrix.shape[1]})"
        )
    return x @ T.row_normalized().T


# ---------------------------------------------------------------------------
# Conjugate-domain integration
# ---------------------------------------------------------------------------


def zscore_matrix(x) -> np.ndarray:
    """Matrix-global standardization: keeps relative channel amplitudes."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean()
    sd = x.std()
    if sd == 0.0:
        return x - mu
    return (x - mu) / sd


def _check_frames(geometry: SensorGeometry, parcellation: RegionParcellation):
    if geometry.frame_label != parcellation.frame_label:
        raise InvalidArgumentError(
            f"coordinate frame mismatch: geometry is {geometry.frame_label!r}, "
            f"parcellation is {parcellation.frame_label!r}"
        )


def integrate(
    sample: PairedSample,
    geometry: SensorGeometry,
    parcellation: RegionParcellation,
    config: AlignmentConfig,
) -> PairedSample:
    """Map a paired sample into the conjugate domain.

    The source epoch is spatially aligned onto the parcellation centroids and
    temporally aligned onto the target's timestamps; the target passes
    through. Both sides are standardized matrix-globally (per-channel scaling
    would erase the spatial activation pattern the target grid exists to
    carry).
    """
    _check_frames(geometry, parcellation)
    if geometry.n_sensors != sample.source_epoch.n_channels:
        raise InvalidArgumentError(
            f"geometry has {geometry.n_sensors} positions for "
            f"{sample.source_epoch.n_channels} source channels"
        )
    w = spatial_weights(parcellation.centroids, geometry.positions, config)
    spatially = spatial_align(sample.source_epoch.data, w)
    T = time_alignment_matrix(
        sample.source_epoch.times(), sample.target_epoch.times(), config
    )
    aligned = temporal_align(spatially, T)
    src_out = MultichannelTimeSeries(
        channel_ids=parcellation.region_ids,
        sample_rate_hz=sample.target_epoch.sample_rate_hz,
        start_time_s=sample.target_epoch.start_time_s,
        data=zscore_matrix(aligned),
    )
    tgt_out = sample.target_epoch.with_data(zscore_matrix(sample.target_epoch.data))
    return PairedSample(
        source_epoch=src_out,
        target_epoch=tgt_out,
        condition_label=sample.condition_label,
        subject_id=sample.subject_id,
        group_id=sample.group_id,
        synthetic=sample.synthetic,
    )


def band_envelopes(
    epoch: MultichannelTimeSeries,
    smooth_hz: float = 0.8,
    bands: dict | None = None,
    filter_order: int = 4,
) -> MultichannelTimeSeries:
    """Rectified, smoothed per-band envelopes of a fast signal.

    Each channel is expanded into one envelope channel per frequency band
    (channel ids ``"<ch>:<band>"``, grouped by source channel): bandpass ->
    absolute value -> zero-phase lowpass at ``smooth_hz``. The result varies
    slowly enough to survive soft-resampling onto a hemodynamic time grid.
    """
    if bands is None:
        bands = {b: FREQUENCY_BANDS[b] for b in BAND_ORDER}
    nyq = epoch.sample_rate_hz / 2.0
    smooth_sos = butter(2, smooth_hz, btype="lowpass", output="sos", fs=epoch.sample_rate_hz)
    per_band = []
    for band, (lo, hi) in bands.items():
        hi = min(hi, 0.99 * nyq)
        filtered = bandpass_filter(epoch, lo, hi, order=filter_order)
        per_band.append(sosfiltfilt(smooth_sos, np.abs(filtered.data), axis=-1))
    stacked = np.stack(per_band, axis=1)  # [n_ch, n_bands, n_t]
    ids = tuple(f"{ch}:{band}" for ch in epoch.channel_ids for band in bands)
    return epoch.with_data(
        stacked.reshape(epoch.n_channels * len(bands), -1), channel_ids=ids
    )


def conjugate_representation(
    sample: PairedSample,
    geometry: SensorGeometry,
    parcellation: RegionParcellation,
    config: AlignmentConfig,
    smooth_hz: float = 0.8,
    resample_kernel: np.ndarray | None = None,
) -> PairedSample:
    """Full conditioning front end: band envelopes, then conjugate integration.

    The source epoch is replaced by its per-band envelope expansion before
    alignment, so the aligned channels are region-by-band envelope traces on
    the target grid (channel ids ``"<region>:<band>"``, region-major).

    ``resample_kernel`` may carry a precomputed row-normalized time kernel
    (all samples of a dataset share one when their relative grids match).
    """
    _check_frames(geometry, parcellation)
    if geometry.n_sensors != sample.source_epoch.n_channels:
        raise InvalidArgumentError(
            f"geometry has {geometry.n_sensors} positions for "
            f"{sample.source_epoch.n_channels} source channels"
        )
    env = band_envelopes(sample.source_epoch, smooth_hz=smooth_hz)
    n_bands = len(BAND_ORDER)
    n_ch = geometry.n_sensors
    w = spatial_weights(parcellation.centroids, geometry.positions, config)
    env_data = env.data.reshape(n_ch, n_bands, -1)
    aligned_bands = np.einsum("rj,jbt->rbt", w.weights, env_data)
    if resample_kernel is None:
        T = time_alignment_matrix(
            sample.source_epoch.times(), sample.target_epoch.times(), config
        )
        resample_kernel = T.row_normalized()
    n_regions = parcellation.n_regions
    aligned = aligned_bands.reshape(n_regions * n_bands, -1) @ resample_kernel.T
    ids = tuple(f"{r}:{b}" for r in parcellation.region_ids for b in BAND_ORDER)
    src_out = MultichannelTimeSeries(
        channel_ids=ids,
        sample_rate_hz=sample.target_epoch.sample_rate_hz,
        start_time_s=sample.target_epoch.start_time_s,
        data=zscore_matrix(aligned),
    )
    tgt_out = sample.target_epoch.with_data(zscore_matrix(sample.target_epoch.data))
    return PairedSample(
        source_epoch=src_out,
        target_epoch=tgt_out,
        condition_label=sample.condition_label,
        subject_id=sample.subject_id,
        group_id=sample.group_id,
        synthetic=sample.synthetic,
    )
