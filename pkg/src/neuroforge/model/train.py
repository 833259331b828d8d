"""Mini-batch training with early stopping and a divergence policy."""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np
import torch

from ..errors import InvalidArgumentError, TrainingDivergenceError
from ..signal import PairedDataset
from .network import DenoiserNetwork, ModalitySchema, ModelParams, NetworkConfig
from .diffusion import training_loss
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class TrainingConfig:
    """Optimization and architecture settings for one training run."""

    max_epochs: int = 300
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    reconstruction_weight: float = 1.0
    grad_clip: float = 1.0
    early_stop_patience: int = 40
    early_stop_min_delta: float = 1e-4
    val_fraction: float = 0.25
    divergence_factor: float = 10.0
    divergence_patience: int = 3
    seed: int = 0
    n_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.2
    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 4
    source_spatial_patch: int = 0  # 0 -> one region's band group (auto)
    source_temporal_patch: int = 16
    target_spatial_patch: int = 1
    target_temporal_patch: int = 16

    def to_jsonable(self) -> dict:
        return asdict(self)

    @classmethod
    def from_jsonable(cls, doc) -> "TrainingConfig":
        return cls(**doc)


def split_by_subject(dataset: PairedDataset, val_fraction: float):
    """Deterministic train/validation split on sorted subject ids."""
    subjects = dataset.subjects()
    if len(subjects) < 2:
        # Single-subject data: fall back to a trailing-sample split.
        n = dataset.n_samples
        n_val = max(1, int(round(val_fraction * n)))
        return list(dataset.samples[: n - n_val]), list(dataset.samples[n - n_val :])
    n_val = max(1, int(round(val_fraction * len(subjects))))
    val_subjects = set(subjects[-n_val:])
    train = [s for s in dataset.samples if s.subject_id not in val_subjects]
    val = [s for s in dataset.samples if s.subject_id in val_subjects]
    return train, val


def _infer_source_spatial_patch(sample, configured):
    if configured > 0:
        return configured
    # Aligned conditioning channels are "<region>:<band>"; group per region.
    ids = sample.source_epoch.channel_ids
    first_region = str(ids[0]).split(":")[0]
    group = sum(1 for c in ids if str(c).split(":")[0] == first_region)
    return max(1, group)


def build_schemas(dataset: PairedDataset, config: TrainingConfig, lag_s=None):
    """Modality schemas from the aligned dataset's shapes and stats.

    ``lag_s`` records how far generated targets trail the raw source epoch
    (the alignment delay); aligned containers carry both sides on one grid,
    so it cannot be read off the epochs themselves.
    """
    if dataset.n_samples == 0:
        raise InvalidArgumentError("cannot train on an empty dataset")
    first = dataset.samples[0]
    src, tgt = first.source_epoch, first.target_epoch
    offsets = lag_s if lag_s is not None else tgt.start_time_s - src.start_time_s
    train_samples, _ = split_by_subject(dataset, config.val_fraction)
    stack = np.stack([s.target_epoch.data for s in train_samples])
    mean = stack.mean(axis=(0, 2))
    std = stack.std(axis=(0, 2))
    source_schema = ModalitySchema(
        name="conditioning",
        channel_ids=src.channel_ids,
        sample_rate_hz=src.sample_rate_hz,
        n_samples=src.n_samples,
        spatial_patch=_infer_source_spatial_patch(first, config.source_spatial_patch),
        temporal_patch=config.source_temporal_patch,
        start_offset_s=0.0,
    )
    target_schema = ModalitySchema(
        name="target",
        channel_ids=tgt.channel_ids,
        sample_rate_hz=tgt.sample_rate_hz,
        n_samples=tgt.n_samples,
        spatial_patch=config.target_spatial_patch,
        temporal_patch=config.target_temporal_patch,
        start_offset_s=offsets,
        channel_mean=tuple(mean),
        channel_std=tuple(std),
    )
    return source_schema, target_schema


def train(dataset: PairedDataset, config: TrainingConfig, assets=None):
    """Train a denoiser on conjugate-domain pairs.

    Splits by subject id, runs AdamW with gradient-norm clipping, early-stops
    on a validation plateau, and keeps the best-validation parameters.
    Returns ``(ModelParams, schedule, loss_curve)`` where the curve holds one
    record per epoch.

    Raises:
        TrainingDivergenceError: train loss exceeded ``divergence_factor``
            times its initial value for ``divergence_patience`` consecutive
            epochs (the curve so far is attached).
    """
    assets = dict(assets or {})
    lag_s = assets.get("alignment", {}).get("tau_s")
    source_schema, target_schema = build_schemas(dataset, config, lag_s=lag_s)
    schedule = NoiseSchedule.linear(config.n_steps, config.beta_start, config.beta_end)
    net_config = NetworkConfig(
        d_model=config.d_model,
        n_heads=config.n_heads,
        n_blocks=config.n_blocks,
        init_seed=config.seed,
    )
    net = DenoiserNetwork(source_schema, target_schema, net_config)
    params = ModelParams(
        network=net,
        source_schema=source_schema,
        target_schema=target_schema,
        assets=assets,
    )
    train_samples, val_samples = split_by_subject(dataset, config.val_fraction)
    if not train_samples or not val_samples:
        raise InvalidArgumentError("train/validation split left an empty side")
    optimizer = torch.optim.AdamW(
        net.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    gen = torch.Generator().manual_seed(int(config.seed))
    name_to_param = dict(net.named_parameters())
    curve = []
    best_val = np.inf
    best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
    stale = 0
    diverged_streak = 0
    initial_train = None
    for epoch in range(config.max_epochs):
        order = torch.randperm(len(train_samples), generator=gen).tolist()
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = [train_samples[i] for i in order[lo : lo + config.batch_size]]
            loss, grads = training_loss(
                batch, params, schedule, gen, lam=config.reconstruction_weight
            )
            optimizer.zero_grad(set_to_none=True)
            for name, g in grads.items():
                name_to_param[name].grad = g
            torch.nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
            optimizer.step()
            epoch_losses.append(loss)
        train_loss = float(np.mean(epoch_losses))
        val_gen = torch.Generator().manual_seed(int(config.seed) + 99991)
        val_losses = []
        for lo in range(0, len(val_samples), config.batch_size):
            batch = val_samples[lo : lo + config.batch_size]
            loss, _ = training_loss(
                batch, params, schedule, val_gen,
                lam=config.reconstruction_weight, compute_grads=False,
            )
            val_losses.append(loss)
        val_loss = float(np.mean(val_losses))
        curve.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if initial_train is None:
            initial_train = train_loss
        if train_loss > config.divergence_factor * initial_train:
            diverged_streak += 1
            if diverged_streak >= config.divergence_patience:
                raise TrainingDivergenceError(
                    f"training diverged: loss {train_loss:.4g} exceeded "
                    f"{config.divergence_factor}x initial {initial_train:.4g} for "
                    f"{diverged_streak} consecutive epochs",
                    loss_curve=curve,
                )
        else:
            diverged_streak = 0
        if val_loss < best_val - config.early_stop_min_delta:
            best_val = val_loss
            best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    net.load_state_dict(best_state)
    params.validate_finite()
    return params, schedule, curve
