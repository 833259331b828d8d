"""Forward noising, reverse denoising, sampling, and the training loss.

Noise-prediction parameterization with fixed per-step variance equal to the
schedule's beta. The training loss couples the standard noise-matching term
with a signal-space reconstruction term computed by unpatching the one-step
clean estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import InvalidArgumentError, NumericalFailureError
from ..signal import MultichannelTimeSeries
from .network import ModelParams, UnifiedRepresentation, unpatchify
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class DenoiserOutput:
    """One reverse step's prediction: noise, implied mean, fixed variance."""

    predicted_noise: np.ndarray
    mean: np.ndarray
    variance: float


def _as_tokens(x):
    if isinstance(x, UnifiedRepresentation):
        return x.tokens, x.token_grid
    return np.asarray(x, dtype=np.float64), None


def forward_diffuse(x0, t, schedule: NoiseSchedule, rng: torch.Generator):
    """Closed-form forward corruption to step ``t``.

    x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) zeta with standard
    normal zeta; returns ``(x_t, zeta)``. Step 0 is the identity.
    """
    tokens, grid = _as_tokens(x0)
    if not (0 <= t <= schedule.n_steps):
        raise InvalidArgumentError(
            f"step t={t} outside [0, {schedule.n_steps}]"
        )
    ab = schedule.alpha_bars[t]
    zeta = torch.randn(tokens.shape, generator=rng, dtype=torch.float64).numpy()
    x_t = np.sqrt(ab) * tokens + np.sqrt(1.0 - ab) * zeta
    if grid is not None:
        return UnifiedRepresentation(tokens=x_t, token_grid=grid), zeta
    return x_t, zeta


def iterate_forward(x0, t, schedule: NoiseSchedule, rng: torch.Generator):
    """Step-by-step forward corruption (the oracle the closed form must match)."""
    tokens, _ = _as_tokens(x0)
    if not (0 <= t <= schedule.n_steps):
        raise InvalidArgumentError(f"step t={t} outside [0, {schedule.n_steps}]")
    x = tokens.copy()
    for step in range(1, t + 1):
        beta = schedule.betas[step - 1]
        z = torch.randn(x.shape, generator=rng, dtype=torch.float64).numpy()
        x = np.sqrt(1.0 - beta) * x + np.sqrt(beta) * z
    return x


def _posterior_mean(x_t, eps_hat, t, schedule: NoiseSchedule):
    beta = schedule.betas[t - 1]
    alpha = 1.0 - beta
    ab = schedule.alpha_bars[t]
    return (x_t - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(alpha)


def denoise_step(
    x_t,
    t,
    cond_tokens,
    params: ModelParams,
    schedule: NoiseSchedule,
    rng: torch.Generator,
    oracle_noise=None,
):
    """One reverse step: sample from N(mean(x_t, eps_hat), beta_t I).

    At t == 1 the mean is returned without added noise. ``oracle_noise``
    bypasses the network (used by tests that plumb the true noise through the
    reparameterization). Returns ``(x_prev, DenoiserOutput)``.
    """
    if t < 1 or t > schedule.n_steps:
        raise InvalidArgumentError(f"reverse step t={t} outside [1, {schedule.n_steps}]")
    x_np, grid = _as_tokens(x_t)
    if oracle_noise is not None:
        eps = np.asarray(oracle_noise, dtype=np.float64)
    else:
        net = params.network
        dtype = next(net.parameters()).dtype
        with torch.no_grad():
            xt = torch.as_tensor(x_np, dtype=dtype)[None]
            cond = torch.as_tensor(np.asarray(cond_tokens, dtype=np.float64), dtype=dtype)[None]
            tt = torch.as_tensor([t], dtype=torch.float64)
            eps = net(xt, tt, cond)[0].double().numpy()
        if not np.all(np.isfinite(eps)):
            raise NumericalFailureError(
                "denoiser produced non-finite values", tensor_name="predicted_noise"
            )
    mean = _posterior_mean(x_np, eps, t, schedule)
    variance = float(schedule.betas[t - 1])
    if t > 1:
        z = torch.randn(x_np.shape, generator=rng, dtype=torch.float64).numpy()
        x_prev = mean + np.sqrt(variance) * z
    else:
        x_prev = mean
    out = DenoiserOutput(predicted_noise=eps, mean=mean, variance=variance)
    if grid is not None:
        return UnifiedRepresentation(tokens=x_prev, token_grid=grid), out
    return x_prev, out


def sample(
    cond_tokens, params: ModelParams, schedule: NoiseSchedule, rng: torch.Generator
) -> UnifiedRepresentation:
    """Draw one latent token grid conditioned on ``cond_tokens``."""
    cond = np.asarray(cond_tokens, dtype=np.float64)
    tokens = sample_batch(cond[None], params, schedule, rng)[0]
    return UnifiedRepresentation(
        tokens=tokens, token_grid=params.target_schema.token_grid()
    )


def sample_batch(
    cond_tokens, params: ModelParams, schedule: NoiseSchedule, rng: torch.Generator
) -> np.ndarray:
    """Vectorized reverse chain for a [B, S_c, d] conditioning batch."""
    net = params.network
    dtype = next(net.parameters()).dtype
    cond = torch.as_tensor(np.asarray(cond_tokens, dtype=np.float64), dtype=dtype)
    B = cond.shape[0]
    S, d = params.target_schema.n_tokens, net.config.d_model
    x = torch.randn((B, S, d), generator=rng, dtype=torch.float64)
    alpha_bars = schedule.alpha_bars
    with torch.no_grad():
        for t in range(schedule.n_steps, 0, -1):
            tt = torch.full((B,), float(t), dtype=torch.float64)
            eps = net(x.to(dtype), tt, cond).double()
            if not torch.all(torch.isfinite(eps)):
                raise NumericalFailureError(
                    "denoiser produced non-finite values during sampling",
                    tensor_name="predicted_noise",
                )
            beta = schedule.betas[t - 1]
            mean = (x - (beta / np.sqrt(1.0 - alpha_bars[t])) * eps) / np.sqrt(1.0 - beta)
            if t > 1:
                z = torch.randn(x.shape, generator=rng, dtype=torch.float64)
                x = mean + np.sqrt(beta) * z
            else:
                x = mean
    return x.numpy()


def extract_features(epoch: MultichannelTimeSeries, modality, params: ModelParams) -> np.ndarray:
    """Feature tokens [n_tokens x d_model] for one epoch of a known modality."""
    net = params.network
    if modality == params.source_schema.name:
        schema, fn = params.source_schema, net.extract_source_tokens
    elif modality == params.target_schema.name:
        schema, fn = params.target_schema, net.tokenize_target
    else:
        raise InvalidArgumentError(
            f"unknown modality {modality!r}; model knows "
            f"{params.source_schema.name!r} and {params.target_schema.name!r}"
        )
    if epoch.n_channels != schema.n_channels or epoch.n_samples != schema.n_samples:
        raise InvalidArgumentError(
            f"epoch shape ({epoch.n_channels}, {epoch.n_samples}) does not match "
            f"{modality!r} schema ({schema.n_channels}, {schema.n_samples})"
        )
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        tokens = fn(torch.as_tensor(epoch.data.copy(), dtype=dtype)[None])[0]
    return tokens.double().numpy()


def unpatch(
    x0: UnifiedRepresentation, target_modality, params: ModelParams, start_time_s=None
) -> MultichannelTimeSeries:
    """Decode a latent token grid back to a target-modality signal."""
    schema = params.target_schema
    if target_modality != schema.name:
        raise InvalidArgumentError(
            f"no unpatcher for modality {target_modality!r} (model decodes {schema.name!r})"
        )
    net = params.network
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        tokens = torch.as_tensor(x0.tokens, dtype=dtype)[None]
        signal = net.untokenize(tokens)[0].double().numpy()
    if not np.all(np.isfinite(signal)):
        raise NumericalFailureError(
            "unpatcher produced non-finite values", tensor_name="unpatch_output"
        )
    if start_time_s is None:
        start_time_s = schema.start_offset_s
    return MultichannelTimeSeries(
        channel_ids=schema.channel_ids,
        sample_rate_hz=schema.sample_rate_hz,
        start_time_s=float(start_time_s),
        data=signal,
    )


def training_loss(
    batch,
    params: ModelParams,
    schedule: NoiseSchedule,
    rng: torch.Generator,
    lam=1.0,
    compute_grads=True,
    override_draws=None,
):
    """Mean per-element noise-matching loss plus lam times signal reconstruction.

    For each sample a step t is drawn uniformly from [1, T]; the clean token
    grid is corrupted in closed form, the network predicts the injected
    noise, and the one-step clean estimate is unpatched and compared to the
    target signal. Returns ``(loss, grads)`` with gradients for every
    trainable tensor (by state-dict name), or ``(loss, None)`` when
    ``compute_grads`` is off.

    ``override_draws``, a ``(steps, noise)`` pair matching the batch, pins
    the stochastic draws; tests use it to compare loss values across calls.
    """
    if not batch:
        raise InvalidArgumentError("batch must be nonempty")
    net = params.network
    dtype = next(net.parameters()).dtype
    cond_np = np.stack([s.source_epoch.data for s in batch])
    tgt_np = np.stack([s.target_epoch.data for s in batch])
    cond = torch.as_tensor(cond_np, dtype=dtype)
    tgt = torch.as_tensor(tgt_np, dtype=dtype)
    B = cond.shape[0]
    T = schedule.n_steps
    if override_draws is None:
        t = torch.randint(1, T + 1, (B,), generator=rng)
        noise = None
    else:
        t = torch.as_tensor(np.asarray(override_draws[0]), dtype=torch.long)
        noise = torch.as_tensor(np.asarray(override_draws[1]), dtype=torch.float64)
    ab = torch.as_tensor(schedule.alpha_bars, dtype=dtype)[t][:, None, None]
    cond_tokens = net.extract_source_tokens(cond)
    x0 = net.tokenize_target(tgt)
    if noise is None:
        noise = torch.randn(x0.shape, generator=rng, dtype=torch.float64)
    noise = noise.to(dtype)
    x_t = torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * noise
    eps_hat = net(x_t, t.to(torch.float64), cond_tokens)
    per_sample_noise = ((noise - eps_hat) ** 2).mean(dim=(1, 2))
    x0_hat = (x_t - torch.sqrt(1.0 - ab) * eps_hat) / torch.sqrt(ab)
    recon = net.untokenize(x0_hat)
    per_sample_rec = ((tgt - recon) ** 2).mean(dim=(1, 2))
    per_sample = per_sample_noise + lam * per_sample_rec
    if not torch.all(torch.isfinite(per_sample)):
        bad = int(torch.nonzero(~torch.isfinite(per_sample))[0])
        raise NumericalFailureError(
            f"non-finite training loss at batch index {bad}", tensor_name="loss"
        )
    loss = per_sample.mean()
    if not compute_grads:
        return float(loss.detach()), None
    names, tensors = zip(*[(n, p) for n, p in net.named_parameters()])
    grads = torch.autograd.grad(loss, tensors, allow_unused=False)
    return float(loss.detach()), dict(zip(names, grads))
