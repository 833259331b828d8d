"""Forward-noising variance schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise variances and their cumulative products.

    ``betas[t-1]`` is the variance added at step t (1-based steps);
    ``alpha_bars[t]`` is the cumulative product of (1 - beta) up to step t,
    with ``alpha_bars[0] == 1`` so step 0 is the identity.
    """

    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise InvalidArgumentError("betas must be a nonempty 1D sequence")
        if not (np.all(betas > 0.0) and np.all(betas < 1.0)):
            raise InvalidArgumentError("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(betas) < 0.0):
            raise InvalidArgumentError("betas must be non-decreasing")
        object.__setattr__(self, "betas", betas)
        self.betas.setflags(write=False)

    @classmethod
    def linear(cls, n_steps=100, beta_start=1e-4, beta_end=0.2) -> "NoiseSchedule":
        """Linear schedule; the default end value leaves the terminal marginal
        indistinguishable from a standard normal at desk-scale step counts."""
        if n_steps < 1:
            raise InvalidArgumentError(f"n_steps must be >= 1, got {n_steps}")
        return cls(betas=np.linspace(beta_start, beta_end, n_steps))

    @property
    def n_steps(self) -> int:
        return int(self.betas.size)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        """Length n_steps + 1; index t is the product over steps 1..t."""
        return np.concatenate([[1.0], np.cumprod(self.alphas)])

    def to_jsonable(self) -> dict:
        return {"betas": self.betas.tolist()}

    @classmethod
    def from_jsonable(cls, doc) -> "NoiseSchedule":
        return cls(betas=np.asarray(doc["betas"], dtype=np.float64))
