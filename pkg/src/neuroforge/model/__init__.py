"""Conditional diffusion-transformer generation of hemodynamic signals.

Subpackage layout:

* :mod:`neuroforge.model.schedule` -- forward-noising schedule
* :mod:`neuroforge.model.network` -- extractors, transformer denoiser, unpatcher
* :mod:`neuroforge.model.diffusion` -- forward/reverse processes and the loss
* :mod:`neuroforge.model.train` -- optimization loop with divergence policy
* :mod:`neuroforge.model.generate` -- EEG-to-target inference path
* :mod:`neuroforge.model.checkpoint` -- on-disk parameter container
"""

from .schedule import NoiseSchedule
from .network import (
    DenoiserNetwork,
    ModalitySchema,
    ModelParams,
    NetworkConfig,
    UnifiedRepresentation,
)
from .diffusion import (
    DenoiserOutput,
    denoise_step,
    extract_features,
    forward_diffuse,
    sample,
    training_loss,
    unpatch,
)
from .train import TrainingConfig, train
from .generate import generate_target, generate_targets
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "NoiseSchedule",
    "DenoiserNetwork",
    "ModalitySchema",
    "ModelParams",
    "NetworkConfig",
    "UnifiedRepresentation",
    "DenoiserOutput",
    "denoise_step",
    "extract_features",
    "forward_diffuse",
    "sample",
    "training_loss",
    "unpatch",
    "TrainingConfig",
    "train",
    "generate_target",
    "generate_targets",
    "load_checkpoint",
    "save_checkpoint",
]
