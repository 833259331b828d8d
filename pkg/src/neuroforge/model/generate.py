"""EEG-to-target inference: conditioning front end, sampling, decoding.

The checkpoint's assets carry everything the front end needs (alignment
config, sensor geometry, parcellation, envelope smoothing), so generation is
a pure function of the raw source epoch, the parameters, and an RNG.
"""

from __future__ import annotations

import numpy as np
import torch

from ..align import AlignmentConfig, conjugate_representation, time_alignment_matrix
from ..errors import InvalidArgumentError, NumericalFailureError
from ..signal import (
    MultichannelTimeSeries,
    PairedSample,
    RegionParcellation,
    SensorGeometry,
)
from .diffusion import sample_batch
from .network import ModelParams
from .schedule import NoiseSchedule


def assets_from_parts(align_config: AlignmentConfig, geometry: SensorGeometry,
                      parcellation: RegionParcellation, smooth_hz: float,
                      eeg_rate_hz: float, eeg_n_samples: int, eeg_channel_ids) -> dict:
    """JSON-able asset record stored inside checkpoints."""
    return {
        "alignment": {
            "epsilon_m2": align_config.epsilon_m2,
            "tau_s": align_config.tau_s,
            "sigma_s": align_config.sigma_s,
            "normalize_weights": align_config.normalize_weights,
            "normalize_rows": align_config.normalize_rows,
        },
        "envelope_smooth_hz": smooth_hz,
        "geometry": {
            "positions": np.asarray(geometry.positions).tolist(),
            "frame_label": geometry.frame_label,
        },
        "parcellation": {
            "region_ids": list(parcellation.region_ids),
            "centroids": np.asarray(parcellation.centroids).tolist(),
            "names": list(parcellation.names),
            "frame_label": parcellation.frame_label,
        },
        "eeg": {
            "sample_rate_hz": eeg_rate_hz,
            "n_samples": eeg_n_samples,
            "channel_ids": list(eeg_channel_ids),
        },
    }


def _parts_from_assets(assets: dict):
    try:
        align_config = AlignmentConfig(**assets["alignment"])
        geometry = SensorGeometry(
            positions=np.asarray(assets["geometry"]["positions"]),
            frame_label=assets["geometry"]["frame_label"],
        )
        parc = assets["parcellation"]
        parcellation = RegionParcellation(
            region_ids=tuple(parc["region_ids"]),
            centroids=np.asarray(parc["centroids"]),
            names=tuple(parc["names"]),
            frame_label=parc.get("frame_label", "head"),
        )
        smooth_hz = float(assets["envelope_smooth_hz"])
        eeg = assets["eeg"]
    except KeyError as e:
        raise InvalidArgumentError(
            f"model assets missing {e}; checkpoint cannot drive generation"
        ) from e
    return align_config, geometry, parcellation, smooth_hz, eeg


def _validate_eeg(epoch: MultichannelTimeSeries, eeg_assets):
    if epoch.n_channels != len(eeg_assets["channel_ids"]):
        raise InvalidArgumentError(
            f"EEG epoch has {epoch.n_channels} channels; model expects "
            f"{len(eeg_assets['channel_ids'])}"
        )
    if abs(epoch.sample_rate_hz - eeg_assets["sample_rate_hz"]) > 1e-9:
        raise InvalidArgumentError(
            f"EEG rate {epoch.sample_rate_hz:g} Hz != model's "
            f"{eeg_assets['sample_rate_hz']:g} Hz"
        )
    if epoch.n_samples != int(eeg_assets["n_samples"]):
        raise InvalidArgumentError(
            f"EEG epoch has {epoch.n_samples} samples; model expects "
            f"{eeg_assets['n_samples']}"
        )


def condition_from_eeg(
    eeg_epoch: MultichannelTimeSeries, params: ModelParams, resample_kernel=None
) -> MultichannelTimeSeries:
    """Aligned, standardized band-envelope conditioning for one EEG epoch."""
    align_config, geometry, parcellation, smooth_hz, eeg_assets = _parts_from_assets(
        params.assets
    )
    _validate_eeg(eeg_epoch, eeg_assets)
    schema = params.target_schema
    pseudo_target = MultichannelTimeSeries(
        channel_ids=schema.channel_ids,
        sample_rate_hz=schema.sample_rate_hz,
        start_time_s=eeg_epoch.start_time_s + schema.start_offset_s,
        data=np.zeros((schema.n_channels, schema.n_samples)),
    )
    pseudo = PairedSample(
        source_epoch=eeg_epoch,
        target_epoch=pseudo_target,
        condition_label="",
        subject_id="",
        group_id="",
    )
    conj = conjugate_representation(
        pseudo, geometry, parcellation, align_config,
        smooth_hz=smooth_hz, resample_kernel=resample_kernel,
    )
    return conj.source_epoch


def _inference_kernel(eeg_epoch, params):
    align_config, _, _, _, _ = _parts_from_assets(params.assets)
    schema = params.target_schema
    dst_times = (
        eeg_epoch.start_time_s
        + schema.start_offset_s
        + np.arange(schema.n_samples) / schema.sample_rate_hz
    )
    T = time_alignment_matrix(eeg_epoch.times(), dst_times, align_config)
    return T.row_normalized()


def generate_target(
    eeg_epoch: MultichannelTimeSeries,
    params: ModelParams,
    schedule: NoiseSchedule,
    rng: torch.Generator,
    target_modality=None,
) -> MultichannelTimeSeries:
    """Generate one target-modality epoch from one source epoch."""
    return generate_targets([eeg_epoch], params, schedule, rng, target_modality)[0]


def generate_targets(
    eeg_epochs,
    params: ModelParams,
    schedule: NoiseSchedule,
    rng: torch.Generator,
    target_modality=None,
    batch_size=32,
) -> list:
    """Batched generation; epochs must share the model's source grid."""
    if target_modality is None:
        target_modality = params.target_schema.name
    if target_modality != params.target_schema.name:
        raise InvalidArgumentError(
            f"model decodes {params.target_schema.name!r}, not {target_modality!r}"
        )
    if not eeg_epochs:
        return []
    net = params.network
    dtype = next(net.parameters()).dtype
    schema = params.target_schema
    kernel = _inference_kernel(eeg_epochs[0], params)
    conds = []
    for epoch in eeg_epochs:
        if epoch.n_samples != eeg_epochs[0].n_samples or epoch.sample_rate_hz != eeg_epochs[0].sample_rate_hz:
            raise InvalidArgumentError("all epochs in one batch must share the source grid")
        cond = condition_from_eeg(epoch, params, resample_kernel=kernel)
        if cond.n_channels != params.source_schema.n_channels or cond.n_samples != params.source_schema.n_samples:
            raise InvalidArgumentError(
                f"conditioning shape ({cond.n_channels}, {cond.n_samples}) does not "
                f"match the model's source schema "
                f"({params.source_schema.n_channels}, {params.source_schema.n_samples})"
            )
        conds.append(cond.data)
    outputs = []
    for lo in range(0, len(conds), batch_size):
        chunk = np.stack(conds[lo : lo + batch_size])
        with torch.no_grad():
            cond_tokens = net.extract_source_tokens(
                torch.as_tensor(chunk, dtype=dtype)
            ).double().numpy()
        tokens = sample_batch(cond_tokens, params, schedule, rng)
        with torch.no_grad():
            signals = net.untokenize(torch.as_tensor(tokens, dtype=dtype)).double().numpy()
        if not np.all(np.isfinite(signals)):
            raise NumericalFailureError(
                "generation produced non-finite output", tensor_name="generated_target"
            )
        for i, signal in enumerate(signals):
            epoch = eeg_epochs[lo + i]
            outputs.append(
                MultichannelTimeSeries(
                    channel_ids=schema.channel_ids,
                    sample_rate_hz=schema.sample_rate_hz,
                    start_time_s=epoch.start_time_s + schema.start_offset_s,
                    data=signal,
                )
            )
    return outputs
