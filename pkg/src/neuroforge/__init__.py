"""neuroforge: cross-modal neural signal synthesis at desk scale.

Simulates paired electrophysiology/hemodynamic recordings with known ground
truth, aligns them into a shared spatio-temporal domain, trains a conditional
diffusion transformer to generate hemodynamic epochs from electrophysiology,
and evaluates temporal/spatial consistency, lag recovery, connectivity,
band attribution, and fairness-via-augmentation.
"""

__version__ = "0.1.0"

from .signal import (
    MultichannelTimeSeries,
    NormalizationStats,
    PairedDataset,
    PairedSample,
    RegionParcellation,
    SensorGeometry,
    bandpass_filter,
    hemodynamic_lag_align,
    segment_epochs,
    zscore_normalize,
)
from .container import load_container, save_container
from .simulate import SimConfig, GroundTruth, make_paired_dataset
from .align import (
    AlignmentConfig,
    SpatialWeightMatrix,
    TimeAlignmentMatrix,
    integrate,
    spatial_align,
    spatial_weights,
    temporal_align,
    time_alignment_matrix,
)

__all__ = [
    "__version__",
    "MultichannelTimeSeries",
    "NormalizationStats",
    "PairedDataset",
    "PairedSample",
    "RegionParcellation",
    "SensorGeometry",
    "bandpass_filter",
    "hemodynamic_lag_align",
    "segment_epochs",
    "zscore_normalize",
    "load_container",
    "save_container",
    "SimConfig",
    "GroundTruth",
    "make_paired_dataset",
    "AlignmentConfig",
    "SpatialWeightMatrix",
    "TimeAlignmentMatrix",
    "integrate",
    "spatial_align",
    "spatial_weights",
    "temporal_align",
    "time_alignment_matrix",
]
