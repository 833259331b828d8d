"""Core signal types and preprocessing operations.

Defines the universal multichannel time-series carrier used by every other
module, plus the preprocessing primitives: Butterworth bandpass filtering
(zero-phase via forward-backward second-order sections), hemodynamic lag
alignment, epoch segmentation, and per-channel z-scoring.

All types are immutable after construction; operations are pure functions of
their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import butter, sosfilt, sosfiltfilt

from .errors import InvalidArgumentError

#: Canonical EEG frequency bands (Hz), ordered low to high.
FREQUENCY_BANDS = {
    "delta": (1.0, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 100.0),
}

BAND_ORDER = ("delta", "theta", "alpha", "beta", "gamma")

_GRID_TOL = 1e-9  # absolute tolerance (s) when snapping timestamps to grids


@dataclass(frozen=True)
class MultichannelTimeSeries:
    """Uniformly sampled multichannel signal.

    Attributes:
        channel_ids: Ordered channel identifiers, one per data row.
        sample_rate_hz: Sampling rate, > 0.
        start_time_s: Absolute time of the first sample.
        data: Array of shape (n_channels, n_samples); finite values only.
    """

    channel_ids: tuple
    sample_rate_hz: float
    start_time_s: float
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise InvalidArgumentError(
                f"data must be 2D (n_channels, n_samples), got shape {data.shape}"
            )
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidArgumentError(f"data must be non-empty, got shape {data.shape}")
        ids = tuple(self.channel_ids)
        if len(ids) != data.shape[0]:
            raise InvalidArgumentError(
                f"channel count mismatch: data has {data.shape[0]} rows "
                f"but {len(ids)} channel ids provided"
            )
        if not self.sample_rate_hz > 0:
            raise InvalidArgumentError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if not np.isfinite(self.start_time_s):
            raise InvalidArgumentError("start_time_s must be finite")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("data contains non-finite values")
        object.__setattr__(self, "channel_ids", ids)
        object.__setattr__(self, "data", data)
        self.data.setflags(write=False)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        """Duration covered by the epoch (n_samples sample periods)."""
        return self.n_samples / self.sample_rate_hz

    @property
    def end_time_s(self) -> float:
        """Time of the last sample."""
        return self.start_time_s + (self.n_samples - 1) / self.sample_rate_hz

    def times(self) -> np.ndarray:
        """Timestamps of every sample."""
        return self.start_time_s + np.arange(self.n_samples) / self.sample_rate_hz

    def with_data(self, data, start_time_s=None, channel_ids=None) -> "MultichannelTimeSeries":
        """Copy of this series with replaced data (and optionally time/channels)."""
        return MultichannelTimeSeries(
            channel_ids=self.channel_ids if channel_ids is None else tuple(channel_ids),
            sample_rate_hz=self.sample_rate_hz,
            start_time_s=self.start_time_s if start_time_s is None else float(start_time_s),
            data=data,
        )


@dataclass(frozen=True)
class SensorGeometry:
    """Sensor positions (meters) in a named coordinate frame."""

    positions: np.ndarray
    frame_label: str

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InvalidArgumentError(f"positions must be (n, 3), got shape {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise InvalidArgumentError("positions contain non-finite coordinates")
        object.__setattr__(self, "positions", pos)
        self.positions.setflags(write=False)

    @property
    def n_sensors(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class RegionParcellation:
    """Named brain regions with centroid coordinates (meters)."""

    region_ids: tuple
    centroids: np.ndarray
    names: tuple
    frame_label: str = "head"

    def __post_init__(self):
        ids = tuple(self.region_ids)
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("region_ids must be unique")
        cen = np.asarray(self.centroids, dtype=np.float64)
        if cen.ndim != 2 or cen.shape[1] != 3:
            raise InvalidArgumentError(f"centroids must be (n, 3), got shape {cen.shape}")
        if cen.shape[0] != len(ids):
            raise InvalidArgumentError(
                f"centroid count {cen.shape[0]} != region count {len(ids)}"
            )
        if not np.all(np.isfinite(cen)):
            raise InvalidArgumentError("centroids contain non-finite coordinates")
        names = tuple(self.names)
        if len(names) != len(ids):
            raise InvalidArgumentError("names must match region_ids in length")
        object.__setattr__(self, "region_ids", ids)
        object.__setattr__(self, "centroids", cen)
        object.__setattr__(self, "names", names)
        self.centroids.setflags(write=False)

    @property
    def n_regions(self) -> int:
        return len(self.region_ids)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean and population std recorded by :func:`zscore_normalize`.

    ``std`` is 0 for flagged zero-variance channels (those are centered only,
    never divided).
    """

    mean: np.ndarray
    std: np.ndarray
    zero_variance_channels: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        object.__setattr__(self, "zero_variance_channels", tuple(self.zero_variance_channels))

    def invert(self, data: np.ndarray) -> np.ndarray:
        """Undo the normalization: ``data * std + mean`` (std 0 -> centered only)."""
        scale = np.where(self.std == 0.0, 1.0, self.std)
        return data * scale[:, None] + self.mean[:, None]


@dataclass(frozen=True)
class PairedSample:
    """One paired (source epoch, target epoch) draw with labels.

    Source and target epochs must cover the same duration; the target's
    timestamps typically trail the source's by the hemodynamic lag.
    """

    source_epoch: MultichannelTimeSeries
    target_epoch: MultichannelTimeSeries
    condition_label: str
    subject_id: str
    group_id: str
    synthetic: bool = False

    def __post_init__(self):
        ds = self.source_epoch.duration_s
        dt = self.target_epoch.duration_s
        if abs(ds - dt) > 1e-9 * max(1.0, ds):
            raise InvalidArgumentError(
                f"source/target epoch durations differ: {ds:.6f}s vs {dt:.6f}s"
            )


@dataclass(frozen=True)
class PairedDataset:
    """Ordered collection of paired samples plus a metadata manifest."""

    samples: tuple
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = tuple(self.samples)
        if samples:
            src0, tgt0 = samples[0].source_epoch, samples[0].target_epoch
            for i, s in enumerate(samples):
                if (
                    s.source_epoch.channel_ids != src0.channel_ids
                    or s.source_epoch.sample_rate_hz != src0.sample_rate_hz
                    or s.target_epoch.channel_ids != tgt0.channel_ids
                    or s.target_epoch.sample_rate_hz != tgt0.sample_rate_hz
                ):
                    raise InvalidArgumentError(
                        f"sample {i} does not share the dataset's modality schema"
                    )
        object.__setattr__(self, "samples", samples)

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    def subjects(self) -> list:
        return sorted({s.subject_id for s in self.samples})

    def conditions(self) -> list:
        return sorted({s.condition_label for s in self.samples})


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------


def design_bandpass(low_hz, high_hz, order, sample_rate_hz) -> np.ndarray:
    """Design a Butterworth bandpass as cascaded second-order sections.

    ``order`` is the per-edge prototype order: the magnitude response near
    each band edge rolls off as 1 / (1 + (w/wc)^(2*order)).
    """
    nyq = sample_rate_hz / 2.0
    if not (isinstance(order, (int, np.integer)) and order >= 1):
        raise InvalidArgumentError(f"order must be a positive integer, got {order!r}")
    if not (0.0 < low_hz < high_hz < nyq):
        raise InvalidArgumentError(
            f"cutoffs must satisfy 0 < low < high < Nyquist "
            f"({nyq:g} Hz), got low={low_hz:g}, high={high_hz:g}"
        )
    return butter(int(order), [low_hz, high_hz], btype="bandpass", output="sos", fs=sample_rate_hz)


def _settle_samples(low_hz, sample_rate_hz) -> int:
    # Settling of a bandpass is dominated by the low edge: one period of it.
    return int(np.ceil(sample_rate_hz / low_hz))


def bandpass_filter(
    series: MultichannelTimeSeries,
    low_hz: float,
    high_hz: float,
    order: int = 6,
    zero_phase: bool = True,
) -> MultichannelTimeSeries:
    """Butterworth bandpass, optionally zero-phase (forward-backward).

    Zero-phase mode runs the SOS cascade forward then backward with
    edge-reflection padding of 3x the settling length of the low band edge,
    so the net phase response is identically zero. It requires an even
    ``order``. Causal mode (``zero_phase=False``) applies a single forward
    pass.

    Raises:
        InvalidArgumentError: cutoffs outside (0, Nyquist), bad order, or
            odd order in zero-phase mode.
    """
    if zero_phase and order % 2 != 0:
        raise InvalidArgumentError(f"zero-phase mode requires an even order, got {order}")
    sos = design_bandpass(low_hz, high_hz, order, series.sample_rate_hz)
    x = np.asarray(series.data, dtype=np.float64)
    if zero_phase:
        padlen = min(series.n_samples - 1, 3 * _settle_samples(low_hz, series.sample_rate_hz))
        y = sosfiltfilt(sos, x, axis=-1, padtype="even", padlen=padlen)
    else:
        y = sosfilt(sos, x, axis=-1)
    return series.with_data(y)


def butterworth_gain(freq_hz, low_hz, high_hz, order, zero_phase=True) -> float:
    """Analytic magnitude response of the designed bandpass at ``freq_hz``.

    Uses the analog-prototype mapping of the bandpass transformation; the
    zero-phase (forward-backward) response is the square of the single-pass
    magnitude. Serves as the independent oracle for attenuation checks.
    """
    w = 2.0 * np.pi * freq_hz
    w1 = 2.0 * np.pi * low_hz
    w2 = 2.0 * np.pi * high_hz
    w0sq = w1 * w2
    bw = w2 - w1
    omega = abs((w * w - w0sq) / (w * bw)) if freq_hz > 0 else np.inf
    mag_sq = 1.0 / (1.0 + omega ** (2 * order))
    mag = np.sqrt(mag_sq)
    return float(mag * mag) if zero_phase else float(mag)


# ---------------------------------------------------------------------------
# Lag alignment
# ---------------------------------------------------------------------------


def _snap_index(value, tol=_GRID_TOL):
    k = int(round(value))
    if abs(value - k) > tol * max(1.0, abs(value)):
        return None
    return k


def hemodynamic_lag_align(
    source: MultichannelTimeSeries,
    target: MultichannelTimeSeries,
    lag_s: float,
):
    """Trim a (source, target) pair so target index k pairs source index k'.

    After alignment the target sample at absolute time ``t`` sits at the same
    epoch index as the source sample at ``t - lag_s``; both epochs cover the
    same duration (the overlap region only). Timestamps are preserved, so the
    returned target starts ``lag_s`` after the returned source.

    Raises:
        InvalidArgumentError: no overlap (reports required vs available
            duration) or incommensurate sample grids.
    """
    if lag_s < 0:
        raise InvalidArgumentError(f"lag_s must be >= 0, got {lag_s}")
    fs_s = source.sample_rate_hz
    fs_t = target.sample_rate_hz
    # Work in source-time coordinates: target time t maps to source time t - lag.
    lo = max(source.start_time_s, target.start_time_s - lag_s)
    hi = min(source.end_time_s, target.end_time_s - lag_s)
    if hi < lo:
        raise InvalidArgumentError(
            f"insufficient overlap for lag {lag_s:g}s: required > 0s, "
            f"available {hi - lo:g}s"
        )
    # Snap the start to a source sample that also lands on the target grid.
    k0 = int(np.ceil((lo - source.start_time_s) * fs_s - _GRID_TOL))
    ratio_steps = int(np.ceil(fs_s / fs_t)) * 10 + 10
    k = None
    for cand in range(k0, min(source.n_samples, k0 + ratio_steps)):
        t0 = source.start_time_s + cand / fs_s
        if t0 - _GRID_TOL > hi:
            break
        j = (t0 + lag_s - target.start_time_s) * fs_t
        j_idx = _snap_index(j)
        if j_idx is not None and 0 <= j_idx < target.n_samples:
            k, j0, t0_s = cand, j_idx, t0
            break
    if k is None:
        raise InvalidArgumentError(
            "sample grids of source and target are incommensurate under the "
            f"requested lag {lag_s:g}s"
        )
    # Longest common duration representable as whole samples at both rates.
    avail_src = source.n_samples - k
    avail_tgt = target.n_samples - j0
    n_tgt = min(avail_tgt, int(np.floor(avail_src * fs_t / fs_s + _GRID_TOL)))
    n_src = None
    while n_tgt >= 1:
        cand = n_tgt * fs_s / fs_t
        cand_idx = _snap_index(cand)
        if cand_idx is not None and cand_idx <= avail_src:
            n_src = cand_idx
            break
        n_tgt -= 1
    if n_src is None or n_src < 1:
        raise InvalidArgumentError(
            f"insufficient overlap for lag {lag_s:g}s: required at least one "
            f"sample at both rates, available {hi - lo:g}s"
        )
    src_out = source.with_data(source.data[:, k : k + n_src], start_time_s=t0_s)
    tgt_out = target.with_data(target.data[:, j0 : j0 + n_tgt], start_time_s=t0_s + lag_s)
    return src_out, tgt_out


# ---------------------------------------------------------------------------
# Epoching and normalization
# ---------------------------------------------------------------------------


def segment_epochs(
    series: MultichannelTimeSeries, window_s: float, stride_s: float
) -> list:
    """Split into fixed windows of round(window_s * rate) samples.

    Yields floor((n - window) / stride) + 1 epochs; any partial tail is
    discarded.
    """
    window = int(round(window_s * series.sample_rate_hz))
    stride = int(round(stride_s * series.sample_rate_hz))
    if stride < 1:
        raise InvalidArgumentError(f"stride_s {stride_s:g} is below one sample period")
    if window < 1 or window > series.n_samples:
        raise InvalidArgumentError(
            f"window of {window} samples invalid for series of {series.n_samples} samples"
        )
    count = (series.n_samples - window) // stride + 1
    out = []
    for i in range(count):
        a = i * stride
        out.append(
            series.with_data(
                series.data[:, a : a + window],
                start_time_s=series.start_time_s + a / series.sample_rate_hz,
            )
        )
    return out


def zscore_normalize(series: MultichannelTimeSeries):
    """Normalize each channel to zero mean, unit population std.

    Zero-variance channels are flagged, centered, and recorded with std 0
    (no division). Returns ``(normalized_series, NormalizationStats)``.
    """
    x = np.asarray(series.data, dtype=np.float64)
    mean = x.mean(axis=1)
    std = x.std(axis=1)  # population convention (ddof=0)
    flagged = tuple(int(i) for i in np.flatnonzero(std == 0.0))
    scale = np.where(std == 0.0, 1.0, std)
    y = (x - mean[:, None]) / scale[:, None]
    stats = NormalizationStats(mean=mean, std=std, zero_variance_channels=flagged)
    return series.with_data(y), stats
