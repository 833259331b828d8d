"""Evaluation battery: correlation, lag scans, SSIM, connectivity, band
attribution, noise baselines, and group-difference maps.

Lag sign convention used throughout: negative lag means the FIRST argument
leads (its content appears earlier in time). Every report that carries a lag
curve states this convention and the curve normalization (max-normalized).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as scipy_stats

from .errors import InvalidArgumentError, UndefinedCorrelationError
from .signal import FREQUENCY_BANDS, MultichannelTimeSeries, bandpass_filter
from .align import zscore_matrix


def pearson(x, y) -> float:
    """Product-moment correlation; raises on constant inputs."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise InvalidArgumentError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise InvalidArgumentError(f"need at least 3 points, got {x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError(
            "correlation undefined for constant input"
            + (" (first argument)" if sx == 0.0 else " (second argument)")
        )
    r = float((xc * yc).sum() / (sx * sy))
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class LagCorrelationResult:
    """Correlation-vs-lag scan. Negative lag: first argument leads."""

    lags: np.ndarray
    curve: np.ndarray
    normalized_curve: np.ndarray
    peak_lag: int


def lagged_correlation(x, y, max_lag_samples) -> LagCorrelationResult:
    """Pearson correlation at every integer lag in [-max_lag, +max_lag].

    Lag L correlates x[t] with y[t - L] over the overlap window, so a copy of
    x delayed by k samples peaks at lag -k. The normalized curve is divided
    by its maximum (the peak lag is taken on the raw curve). Individual lags
    whose window is degenerate are NaN; if every lag fails, raises.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n = min(x.size, y.size)
    max_lag = int(max_lag_samples)
    if max_lag < 0:
        raise InvalidArgumentError(f"max_lag_samples must be >= 0, got {max_lag_samples}")
    if n <= 2 * max_lag:
        raise InvalidArgumentError(
            f"series of length {n} too short for max lag {max_lag} "
            f"(need length > {2 * max_lag})"
        )
    lags = np.arange(-max_lag, max_lag + 1)
    curve = np.full(lags.shape, np.nan)
    for i, lag in enumerate(lags):
        if lag >= 0:
            a, b = x[lag:n], y[: n - lag]
        else:
            a, b = x[: n + lag], y[-lag:n]
        try:
            curve[i] = pearson(a, b)
        except UndefinedCorrelationError:
            continue
    if np.all(np.isnan(curve)):
        raise UndefinedCorrelationError("correlation undefined at every lag")
    peak = int(lags[np.nanargmax(curve)])
    top = np.nanmax(np.abs(curve))
    normalized = curve / top if top > 0 else curve.copy()
    return LagCorrelationResult(
        lags=lags, curve=curve, normalized_curve=normalized, peak_lag=peak
    )


# ---------------------------------------------------------------------------
# SSIM on region maps
# ---------------------------------------------------------------------------


def region_grid_shape(n_regions) -> tuple:
    """Near-square (rows, cols) factorization, row-major by region id."""
    rows = int(np.floor(np.sqrt(n_regions)))
    while rows > 1 and n_regions % rows != 0:
        rows -= 1
    return rows, n_regions // rows


def ssim_map(a, b, window=3, k1=0.01, k2=0.03) -> float:
    """Mean local structural similarity between two equal-shape 2D maps.

    Uniform window, population statistics, dynamic range taken as the
    observed max minus min over both maps. Two identical constant maps score
    exactly 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise InvalidArgumentError(f"maps must share a 2D shape, got {a.shape} vs {b.shape}")
    if window % 2 != 1:
        raise InvalidArgumentError(f"window must be odd, got {window}")
    if window > min(a.shape):
        raise InvalidArgumentError(
            f"window {window} larger than map dimension {min(a.shape)}"
        )
    data_range = max(a.max(), b.max()) - min(a.min(), b.min())
    if data_range == 0.0:
        return 1.0
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    from numpy.lib.stride_tricks import sliding_window_view

    wa = sliding_window_view(a, (window, window)).reshape(-1, window * window)
    wb = sliding_window_view(b, (window, window)).reshape(-1, window * window)
    mu_a = wa.mean(axis=1)
    mu_b = wb.mean(axis=1)
    var_a = wa.var(axis=1)
    var_b = wb.var(axis=1)
    cov = ((wa - mu_a[:, None]) * (wb - mu_b[:, None])).mean(axis=1)
    ssim_local = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(ssim_local.mean())


# ---------------------------------------------------------------------------
# Functional connectivity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConnectivityResult:
    """Pairwise correlation matrix; excluded regions hold NaN rows/columns."""

    matrix: np.ndarray
    excluded: tuple


def functional_connectivity(region_series) -> ConnectivityResult:
    """Symmetric, unit-diagonal PCC matrix between region time courses."""
    x = np.asarray(region_series, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError(f"region series must be 2D, got shape {x.shape}")
    if x.shape[1] < 3:
        raise InvalidArgumentError(f"need at least 3 time points, got {x.shape[1]}")
    stds = x.std(axis=1)
    excluded = tuple(int(i) for i in np.flatnonzero(stds == 0.0))
    n = x.shape[0]
    matrix = np.full((n, n), np.nan)
    valid = np.flatnonzero(stds > 0.0)
    if valid.size:
        sub = np.corrcoef(x[valid])
        sub = np.atleast_2d(sub)
        sub = (sub + sub.T) / 2.0
        matrix[np.ix_(valid, valid)] = np.clip(sub, -1.0, 1.0)
        matrix[valid, valid] = 1.0
    return ConnectivityResult(matrix=matrix, excluded=excluded)


def fc_similarity(fc_a: ConnectivityResult, fc_b: ConnectivityResult) -> float:
    """PCC between the upper triangles (diagonal excluded) of two FC matrices."""
    a, b = fc_a.matrix, fc_b.matrix
    if a.shape != b.shape:
        raise InvalidArgumentError(f"FC shapes differ: {a.shape} vs {b.shape}")
    if fc_a.excluded != fc_b.excluded:
        raise InvalidArgumentError(
            f"excluded sets differ: {fc_a.excluded} vs {fc_b.excluded}"
        )
    iu = np.triu_indices(a.shape[0], k=1)
    va, vb = a[iu], b[iu]
    keep = ~(np.isnan(va) | np.isnan(vb))
    return pearson(va[keep], vb[keep])


# ---------------------------------------------------------------------------
# Band decomposition and attribution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BandDecomposition:
    bands: dict  # band name -> MultichannelTimeSeries
    gamma_truncated: bool
    band_edges: dict


def band_decompose(eeg: MultichannelTimeSeries, filter_order=4) -> BandDecomposition:
    """Split into the five canonical bands via zero-phase bandpass filters.

    Rates of 200 Hz or below cannot carry the full 30-100 Hz gamma band; the
    upper edge is then truncated below Nyquist and flagged.
    """
    rate = eeg.sample_rate_hz
    edges = {}
    truncated = False
    for band, (lo, hi) in FREQUENCY_BANDS.items():
        if rate <= 200.0 and band == "gamma":
            hi = min(hi, 0.49 * rate)
            truncated = True
        edges[band] = (lo, min(hi, 0.499 * rate))
    out = {
        band: bandpass_filter(eeg, lo, hi, order=filter_order)
        for band, (lo, hi) in edges.items()
    }
    return BandDecomposition(bands=out, gamma_truncated=truncated, band_edges=edges)


@dataclass(frozen=True)
class BandImportance:
    """Permutation importance per band: PCC degradation when that band's
    contribution is shuffled across samples."""

    importance: dict  # band -> mean degradation, clipped at 0
    dispersion: dict  # band -> std over permutations
    baseline_pcc: float
    per_permutation: dict  # band -> list of raw degradations


def band_importance(
    params,
    dataset,
    n_permutations,
    rng,
    schedule,
    max_samples=None,
    generation_seed=7,
) -> BandImportance:
    """Shuffle one band's component across samples, regenerate, score the drop.

    ``dataset`` must hold raw-EEG source epochs with true target epochs. The
    reported importance for band b is the mean over permutations of
    (baseline PCC - permuted PCC), clipped at zero; dispersion is the std of
    the raw differences. Comparisons are in matrix-standardized target space.
    """
    import torch

    from .model.generate import generate_targets

    samples = [s for s in dataset.samples]
    if max_samples is not None:
        samples = samples[: int(max_samples)]
    if len(samples) < 2:
        raise InvalidArgumentError("band importance needs at least 2 samples")
    epochs = [s.source_epoch for s in samples]
    targets = [zscore_matrix(s.target_epoch.data) for s in samples]
    decomps = [band_decompose(e) for e in epochs]

    def score(eeg_epochs):
        gen = torch.Generator().manual_seed(int(generation_seed))
        outs = generate_targets(eeg_epochs, params, schedule, gen)
        vals = []
        for out, tgt in zip(outs, targets):
            g = zscore_matrix(out.data)
            for ch in range(tgt.shape[0]):
                try:
                    vals.append(pearson(g[ch], tgt[ch]))
                except UndefinedCorrelationError:
                    continue
        return float(np.mean(vals))

    baseline = score(epochs)
    importance, dispersion, raw = {}, {}, {}
    for band in FREQUENCY_BANDS:
        diffs = []
        for _ in range(int(n_permutations)):
            perm = rng.permutation(len(samples))
            shuffled = []
            for i, s in enumerate(samples):
                own_band = decomps[i].bands[band].data
                donor_band = decomps[int(perm[i])].bands[band].data
                data = s.source_epoch.data - own_band + donor_band
                shuffled.append(s.source_epoch.with_data(data))
            diffs.append(baseline - score(shuffled))
        raw[band] = [float(d) for d in diffs]
        importance[band] = max(0.0, float(np.mean(diffs)))
        dispersion[band] = float(np.std(diffs))
    return BandImportance(
        importance=importance,
        dispersion=dispersion,
        baseline_pcc=baseline,
        per_permutation=raw,
    )


# ---------------------------------------------------------------------------
# Noise baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseBaseline:
    mean: float
    std: float
    abs_mean: float
    n_scores: int


def noise_baseline(real_targets, rng, n_draws=30) -> NoiseBaseline:
    """Score variance-matched white Gaussian noise against real targets.

    For every draw and every target channel, noise with that channel's
    variance is correlated against the channel; the summary is over all
    (draw, epoch, channel) scores.
    """
    if n_draws < 30:
        raise InvalidArgumentError(f"n_draws must be >= 30, got {n_draws}")
    arrays = [
        t.data if isinstance(t, MultichannelTimeSeries) else np.atleast_2d(np.asarray(t))
        for t in real_targets
    ]
    if not arrays:
        raise InvalidArgumentError("need at least one real target")
    scores = []
    for _ in range(int(n_draws)):
        for arr in arrays:
            stds = arr.std(axis=1)
            noise = rng.normal(0.0, 1.0, size=arr.shape) * np.where(stds == 0, 1.0, stds)[:, None]
            for ch in range(arr.shape[0]):
                try:
                    scores.append(pearson(noise[ch], arr[ch]))
                except UndefinedCorrelationError:
                    continue
    scores = np.asarray(scores)
    return NoiseBaseline(
        mean=float(scores.mean()),
        std=float(scores.std()),
        abs_mean=float(np.abs(scores).mean()),
        n_scores=int(scores.size),
    )


# ---------------------------------------------------------------------------
# Group difference maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupDifferenceResult:
    t_map: np.ndarray
    p_values: np.ndarray
    significant: tuple
    excluded: tuple
    q: float


def group_difference_map(
    group_a_maps, group_b_maps, t_threshold=0.0, q=0.05
) -> GroupDifferenceResult:
    """Per-region Welch t statistics (A minus B) with BH-corrected selection.

    Regions whose pooled standard error is zero are excluded and listed.
    Swapping the groups negates the t map exactly.
    """
    a = np.asarray(group_a_maps, dtype=np.float64)
    b = np.asarray(group_b_maps, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InvalidArgumentError("group maps must be 2D with matching region axes")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise InvalidArgumentError("need at least 2 subjects per group")
    n_regions = a.shape[1]
    t_map = np.full(n_regions, np.nan)
    p_values = np.full(n_regions, np.nan)
    excluded = []
    for r in range(n_regions):
        va = a[:, r].var(ddof=1)
        vb = b[:, r].var(ddof=1)
        if va == 0.0 and vb == 0.0:
            excluded.append(r)
            continue
        res = scipy_stats.ttest_ind(a[:, r], b[:, r], equal_var=False)
        t_map[r] = res.statistic
        p_values[r] = res.pvalue
    tested = np.flatnonzero(~np.isnan(p_values))
    significant = []
    if tested.size:
        adjusted = scipy_stats.false_discovery_control(p_values[tested], method="bh")
        for idx, adj in zip(tested, adjusted):
            if adj <= q and abs(t_map[idx]) >= t_threshold:
                significant.append(int(idx))
    return GroupDifferenceResult(
        t_map=t_map,
        p_values=p_values,
        significant=tuple(significant),
        excluded=tuple(excluded),
        q=q,
    )


# ---------------------------------------------------------------------------
# Shared evaluation plumbing
# ---------------------------------------------------------------------------


def activation_map(target: MultichannelTimeSeries) -> np.ndarray:
    """Per-region activation strength: temporal std of each channel."""
    return np.asarray(target.data, dtype=np.float64).std(axis=1)


def eeg_envelope_at_hemo(
    eeg_epoch: MultichannelTimeSeries, hemo_rate_hz, band=(30.0, 100.0), filter_order=4
) -> MultichannelTimeSeries:
    """Channel-mean band envelope resampled onto the hemodynamic grid.

    Rectified band signal, zero-phase lowpass below the hemodynamic Nyquist,
    then point sampling; the symmetric smoothing introduces no lag bias. The
    returned single-channel series keeps the EEG epoch's start time, so
    absolute-time comparisons against (lagged) hemodynamic epochs are direct.
    """
    from scipy.signal import butter, sosfiltfilt

    lo, hi = band
    hi = min(hi, 0.499 * eeg_epoch.sample_rate_hz)
    filtered = bandpass_filter(eeg_epoch, lo, hi, order=filter_order)
    env = np.abs(filtered.data).mean(axis=0)
    factor = eeg_epoch.sample_rate_hz / hemo_rate_hz
    if abs(factor - round(factor)) > 1e-9:
        raise InvalidArgumentError(
            f"EEG rate {eeg_epoch.sample_rate_hz:g} not an integer multiple of "
            f"hemo rate {hemo_rate_hz:g}"
        )
    factor = int(round(factor))
    sos = butter(2, 0.45 * hemo_rate_hz, btype="lowpass", output="sos",
                 fs=eeg_epoch.sample_rate_hz)
    smoothed = sosfiltfilt(sos, env)[::factor]
    return MultichannelTimeSeries(
        channel_ids=("envelope",),
        sample_rate_hz=hemo_rate_hz,
        start_time_s=eeg_epoch.start_time_s,
        data=smoothed[None, :],
    )


def intersect_on_grid(x: MultichannelTimeSeries, y: MultichannelTimeSeries):
    """Restrict two equal-rate series to their common absolute time window."""
    if abs(x.sample_rate_hz - y.sample_rate_hz) > 1e-12:
        raise InvalidArgumentError("series must share a sample rate")
    rate = x.sample_rate_hz
    offset = (y.start_time_s - x.start_time_s) * rate
    k = int(round(offset))
    if abs(offset - k) > 1e-6:
        raise InvalidArgumentError("series grids are not aligned to common samples")
    lo = max(0, k)
    hi = min(x.n_samples, k + y.n_samples)
    if hi <= lo:
        raise InvalidArgumentError("series do not overlap in time")
    x_part = x.data[:, lo:hi]
    y_part = y.data[:, lo - k : hi - k]
    return x_part, y_part


def absolute_lag_scan(
    lead: MultichannelTimeSeries, follow: MultichannelTimeSeries, max_lag_s
) -> tuple:
    """Lag scan on the absolute timeline between two equal-rate series.

    Both series are first restricted to their common absolute time window, so
    the scan reads content lag directly in absolute time. Returns
    ``(result, peak_lag_seconds)``; negative peak lag means ``lead`` leads.
    """
    rate = lead.sample_rate_hz
    x_part, y_part = intersect_on_grid(lead, follow)
    max_lag = int(round(max_lag_s * rate))
    result = lagged_correlation(x_part.mean(axis=0), y_part.mean(axis=0), max_lag)
    return result, result.peak_lag / rate


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    """Named metrics plus curves, with provenance for reproducibility."""

    metrics: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def validate(self):
        for name, value in self.metrics.items():
            arr = np.asarray(value, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"metric {name!r} is not finite")
        for key in ("dataset_id", "seed"):
            if key not in self.provenance:
                raise InvalidArgumentError(f"provenance missing {key!r}")

    def to_jsonable(self) -> dict:
        return {
            "metrics": self.metrics,
            "curves": {k: np.asarray(v).tolist() for k, v in self.curves.items()},
            "provenance": self.provenance,
            "notes": self.notes,
        }

    def save(self, path) -> None:
        """Write JSON, plus one CSV per curve for external plotting."""
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        (root / "metrics.json").write_text(
            json.dumps(self.to_jsonable(), sort_keys=True, indent=2) + "\n", "utf-8"
        )
        for name, values in self.curves.items():
            arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
            with open(root / f"curve_{name}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow([f"col{i}" for i in range(arr.shape[0])])
                for row in arr.T:
                    writer.writerow([f"{v:.10g}" for v in row])
