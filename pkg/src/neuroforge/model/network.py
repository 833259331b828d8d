"""Transformer denoiser, modality tokenizers, and the parameter container.

The denoiser operates on the target modality's token grid. Conditioning
tokens come from a trainable patch embedding of the aligned source
representation; they enter every block through cross-attention. Conditioning
is treated as an unordered set: tokens are canonically re-ordered inside the
network, which makes the output exactly invariant (bitwise) to permutations
of the conditioning sequence, provided each token carries its positional
encoding.

The target-side tokenizer is a frozen, seeded orthonormal projection. The
diffusion target x0 must be stationary while training; a trainable target
embedding would make the regression target drift with the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn

from ..errors import InvalidArgumentError, NumericalFailureError


@dataclass(frozen=True)
class ModalitySchema:
    """Shape contract and de-normalization stats for one modality.

    ``channel_mean`` / ``channel_std`` are the per-channel stats used by the
    unpatcher to map normalized model output back to signal units.
    ``start_offset_s`` is how far this modality's epoch start trails the
    conditioning epoch's start (the physiological lag for targets, 0 for
    sources).
    """

    name: str
    channel_ids: tuple
    sample_rate_hz: float
    n_samples: int
    spatial_patch: int
    temporal_patch: int
    start_offset_s: float = 0.0
    channel_mean: tuple = ()
    channel_std: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "channel_ids", tuple(self.channel_ids))
        n_ch = len(self.channel_ids)
        if n_ch % self.spatial_patch != 0:
            raise InvalidArgumentError(
                f"{self.name}: {n_ch} channels not divisible by spatial patch "
                f"{self.spatial_patch}"
            )
        if self.n_samples % self.temporal_patch != 0:
            raise InvalidArgumentError(
                f"{self.name}: {self.n_samples} samples not divisible by temporal "
                f"patch {self.temporal_patch}"
            )
        mean = tuple(float(v) for v in self.channel_mean) or tuple(0.0 for _ in range(n_ch))
        std = tuple(float(v) for v in self.channel_std) or tuple(1.0 for _ in range(n_ch))
        if len(mean) != n_ch or len(std) != n_ch:
            raise InvalidArgumentError(f"{self.name}: stats length must match channel count")
        object.__setattr__(self, "channel_mean", mean)
        object.__setattr__(self, "channel_std", std)

    @property
    def n_channels(self) -> int:
        return len(self.channel_ids)

    @property
    def n_spatial(self) -> int:
        return self.n_channels // self.spatial_patch

    @property
    def n_temporal(self) -> int:
        return self.n_samples // self.temporal_patch

    @property
    def n_tokens(self) -> int:
        return self.n_spatial * self.n_temporal

    @property
    def patch_dim(self) -> int:
        return self.spatial_patch * self.temporal_patch

    def token_grid(self) -> tuple:
        """Token index -> (spatial patch id, temporal patch id), spatial-major."""
        return tuple(
            (s, t) for s in range(self.n_spatial) for t in range(self.n_temporal)
        )

    def to_jsonable(self) -> dict:
        d = asdict(self)
        d["channel_ids"] = list(self.channel_ids)
        d["channel_mean"] = list(self.channel_mean)
        d["channel_std"] = list(self.channel_std)
        return d

    @classmethod
    def from_jsonable(cls, doc) -> "ModalitySchema":
        return cls(
            name=doc["name"],
            channel_ids=tuple(doc["channel_ids"]),
            sample_rate_hz=float(doc["sample_rate_hz"]),
            n_samples=int(doc["n_samples"]),
            spatial_patch=int(doc["spatial_patch"]),
            temporal_patch=int(doc["temporal_patch"]),
            start_offset_s=float(doc["start_offset_s"]),
            channel_mean=tuple(doc["channel_mean"]),
            channel_std=tuple(doc["channel_std"]),
        )


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters of the denoiser."""

    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 4
    mlp_ratio: int = 4
    init_seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise InvalidArgumentError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )

    def to_jsonable(self) -> dict:
        return asdict(self)

    @classmethod
    def from_jsonable(cls, doc) -> "NetworkConfig":
        return cls(**doc)


@dataclass(frozen=True)
class UnifiedRepresentation:
    """Latent token grid in the shared generation space."""

    tokens: np.ndarray  # [n_tokens, d_model]
    token_grid: tuple  # token index -> (spatial patch id, temporal patch id)

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float64)
        if tokens.ndim != 2:
            raise InvalidArgumentError(f"tokens must be 2D, got shape {tokens.shape}")
        if len(self.token_grid) != tokens.shape[0]:
            raise InvalidArgumentError(
                f"token_grid length {len(self.token_grid)} != n_tokens {tokens.shape[0]}"
            )
        if not np.all(np.isfinite(tokens)):
            raise InvalidArgumentError("tokens contain non-finite values")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "token_grid", tuple(self.token_grid))


# ---------------------------------------------------------------------------
# Functional pieces
# ---------------------------------------------------------------------------


def patchify(data: torch.Tensor, schema: ModalitySchema) -> torch.Tensor:
    """[.., n_ch, n_t] -> [.., n_tokens, patch_dim], spatial-major tokens."""
    *lead, n_ch, n_t = data.shape
    if n_ch != schema.n_channels or n_t != schema.n_samples:
        raise InvalidArgumentError(
            f"{schema.name}: expected ({schema.n_channels}, {schema.n_samples}) "
            f"epochs, got ({n_ch}, {n_t})"
        )
    x = data.reshape(*lead, schema.n_spatial, schema.spatial_patch, schema.n_temporal, schema.temporal_patch)
    x = x.movedim(-2, -3)  # [.., n_sp, n_tp, sp, tp]
    return x.reshape(*lead, schema.n_tokens, schema.patch_dim)


def unpatchify(patches: torch.Tensor, schema: ModalitySchema) -> torch.Tensor:
    """Inverse of :func:`patchify`."""
    *lead, n_tok, p = patches.shape
    if n_tok != schema.n_tokens or p != schema.patch_dim:
        raise InvalidArgumentError(
            f"{schema.name}: expected ({schema.n_tokens}, {schema.patch_dim}) "
            f"token grid, got ({n_tok}, {p})"
        )
    x = patches.reshape(*lead, schema.n_spatial, schema.n_temporal, schema.spatial_patch, schema.temporal_patch)
    x = x.movedim(-2, -3)  # [.., n_sp, sp, n_tp, tp]
    return x.reshape(*lead, schema.n_channels, schema.n_samples)


def timestep_embedding(t: torch.Tensor, dim: int, max_period=10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer diffusion steps, shape [..., dim]."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / half
    ).to(t.device)
    args = t.double()[..., None] * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


def scaled_attention(q, k, v, n_heads):
    """Multi-head scaled dot-product attention.

    Returns ``(output, probs)`` where ``probs`` rows sum to 1 over keys.
    """
    B, Sq, D = q.shape
    Sk = k.shape[1]
    d_head = D // n_heads
    qh = q.reshape(B, Sq, n_heads, d_head).transpose(1, 2)
    kh = k.reshape(B, Sk, n_heads, d_head).transpose(1, 2)
    vh = v.reshape(B, Sk, n_heads, d_head).transpose(1, 2)
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(d_head)
    probs = torch.softmax(scores, dim=-1)
    out = (probs @ vh).transpose(1, 2).reshape(B, Sq, D)
    return out, probs


def canonical_token_order(tokens: torch.Tensor) -> torch.Tensor:
    """Re-order token rows lexicographically by content (per batch element).

    Conditioning is an unordered set; a canonical internal order makes the
    network output bit-identical under permutations of the input sequence.
    """
    with torch.no_grad():
        arr = tokens.detach().cpu().numpy()
        orders = np.stack(
            [np.lexsort(arr[b].T[::-1]) for b in range(arr.shape[0])]
        )
    idx = torch.as_tensor(orders, device=tokens.device, dtype=torch.long)
    idx = idx.unsqueeze(-1).expand(-1, -1, tokens.shape[-1])
    return torch.gather(tokens, 1, idx)


class TransformerBlock(nn.Module):
    """Pre-norm block: self-attention, cross-attention over conditioning, MLP."""

    def __init__(self, d_model, n_heads, mlp_ratio=4):
        super().__init__()
        self.n_heads = n_heads
        self.norm_self = nn.LayerNorm(d_model)
        self.self_qkv = nn.Linear(d_model, 3 * d_model)
        self.self_out = nn.Linear(d_model, d_model)
        self.norm_cross = nn.LayerNorm(d_model)
        self.cross_q = nn.Linear(d_model, d_model)
        self.cross_kv = nn.Linear(d_model, 2 * d_model)
        self.cross_out = nn.Linear(d_model, d_model)
        self.norm_mlp = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, mlp_ratio * d_model),
            nn.GELU(),
            nn.Linear(mlp_ratio * d_model, d_model),
        )

    def forward(self, x, cond):
        h = self.norm_self(x)
        q, k, v = self.self_qkv(h).chunk(3, dim=-1)
        attn, _ = scaled_attention(q, k, v, self.n_heads)
        x = x + self.self_out(attn)
        h = self.norm_cross(x)
        kc, vc = self.cross_kv(cond).chunk(2, dim=-1)
        attn, _ = scaled_attention(self.cross_q(h), kc, vc, self.n_heads)
        x = x + self.cross_out(attn)
        return x + self.mlp(self.norm_mlp(x))


def _orthonormal_embedding(d_model, patch_dim, seed) -> torch.Tensor:
    """Seeded [d_model, patch_dim] matrix with orthonormal columns, scaled so
    unit-variance patches produce unit-variance token coordinates."""
    if d_model < patch_dim:
        raise InvalidArgumentError(
            f"d_model {d_model} must be >= target patch dim {patch_dim} for an "
            f"invertible target tokenizer"
        )
    gen = torch.Generator().manual_seed(int(seed))
    m = torch.randn(d_model, patch_dim, generator=gen, dtype=torch.float64)
    q, _ = torch.linalg.qr(m)
    return math.sqrt(d_model / patch_dim) * q


class DenoiserNetwork(nn.Module):
    """Noise-prediction transformer over the target token grid.

    Pipeline: fixed orthonormal target tokenizer (buffer), trainable source
    patch embedding with learned positional encodings, additive timestep
    embedding, ``n_blocks`` transformer blocks with cross-attention onto the
    conditioning set, and a final linear projection to predicted noise.
    """

    def __init__(self, source_schema: ModalitySchema, target_schema: ModalitySchema,
                 config: NetworkConfig):
        super().__init__()
        self.source_schema = source_schema
        self.target_schema = target_schema
        self.config = config
        d = config.d_model
        self.register_buffer(
            "target_embed",
            _orthonormal_embedding(d, target_schema.patch_dim, config.init_seed).float(),
        )
        self.source_proj = nn.Linear(source_schema.patch_dim, d)
        self.source_pos = nn.Parameter(torch.zeros(source_schema.n_tokens, d))
        self.x_pos = nn.Parameter(torch.zeros(target_schema.n_tokens, d))
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.blocks = nn.ModuleList(
            TransformerBlock(d, config.n_heads, config.mlp_ratio)
            for _ in range(config.n_blocks)
        )
        self.norm_final = nn.LayerNorm(d)
        self.noise_proj = nn.Linear(d, d)
        self.unpatch_proj = nn.Linear(d, target_schema.patch_dim)
        self.reset_parameters(config.init_seed)

    def reset_parameters(self, seed) -> None:
        """Deterministic initialization from an explicit seed."""
        gen = torch.Generator().manual_seed(int(seed) + 1)
        for name, p in self.named_parameters():
            with torch.no_grad():
                if p.dim() >= 2:
                    p.normal_(0.0, 0.02, generator=gen)
                elif "norm" in name and name.endswith("weight"):
                    p.fill_(1.0)
                else:
                    p.zero_()
        with torch.no_grad():
            # Final noise head starts at zero for stable early training; the
            # unpatcher starts at the exact inverse of the target tokenizer.
            self.noise_proj.weight.zero_()
            self.noise_proj.bias.zero_()
            d, p_dim = self.target_embed.shape
            inverse = (self.target_embed.double() * (p_dim / d)).T
            self.unpatch_proj.weight.copy_(inverse.to(self.unpatch_proj.weight.dtype))
            self.unpatch_proj.bias.zero_()

    # -- tokenizers ---------------------------------------------------------

    def tokenize_target(self, data: torch.Tensor) -> torch.Tensor:
        """[.., n_ch, n_t] -> stationary token grid [.., n_tokens, d_model].

        Normalizes with the schema's channel stats first, so
        ``untokenize(tokenize(x)) == x`` holds exactly under the tied inverse.
        """
        mean = torch.as_tensor(self.target_schema.channel_mean, dtype=data.dtype)
        std = torch.as_tensor(self.target_schema.channel_std, dtype=data.dtype)
        std = torch.where(std == 0.0, torch.ones_like(std), std)
        normalized = (data - mean[:, None]) / std[:, None]
        patches = patchify(normalized, self.target_schema)
        return patches @ self.target_embed.T.to(patches.dtype)

    def extract_source_tokens(self, data: torch.Tensor) -> torch.Tensor:
        """Trainable patch embedding plus positional encodings."""
        patches = patchify(data, self.source_schema)
        return self.source_proj(patches) + self.source_pos.to(patches.dtype)

    def untokenize(self, tokens: torch.Tensor) -> torch.Tensor:
        """Tokens -> de-normalized target signal [.., n_ch, n_t]."""
        patches = self.unpatch_proj(tokens)
        x = unpatchify(patches, self.target_schema)
        mean = torch.as_tensor(self.target_schema.channel_mean, dtype=x.dtype)
        std = torch.as_tensor(self.target_schema.channel_std, dtype=x.dtype)
        std = torch.where(std == 0.0, torch.ones_like(std), std)
        return x * std[:, None] + mean[:, None]

    # -- denoiser -----------------------------------------------------------

    def forward(self, x_tokens: torch.Tensor, t: torch.Tensor, cond_tokens: torch.Tensor):
        """Predict the injected noise for token grid ``x_tokens`` at step ``t``."""
        if x_tokens.dim() != 3:
            raise InvalidArgumentError("x_tokens must be [batch, n_tokens, d_model]")
        cond = canonical_token_order(cond_tokens)
        temb = self.time_mlp(
            timestep_embedding(t, self.config.d_model).to(x_tokens.dtype)
        )
        h = x_tokens + self.x_pos.to(x_tokens.dtype) + temb[:, None, :]
        for block in self.blocks:
            h = block(h, cond)
        return self.noise_proj(self.norm_final(h))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


@dataclass
class ModelParams:
    """Trained model: network weights plus the assets generation depends on.

    ``assets`` carries the conditioning front end (alignment config, sensor
    geometry, parcellation, envelope settings) so inference is self-contained.
    """

    network: DenoiserNetwork
    source_schema: ModalitySchema
    target_schema: ModalitySchema
    assets: dict = field(default_factory=dict)

    def named_tensors(self) -> dict:
        return {k: v.detach().cpu().numpy() for k, v in self.network.state_dict().items()}

    def parameter_count(self) -> int:
        return self.network.parameter_count()

    def validate_finite(self) -> None:
        for name, value in self.named_tensors().items():
            if not np.all(np.isfinite(value)):
                raise NumericalFailureError(
                    f"parameter tensor {name} contains non-finite values", tensor_name=name
                )
