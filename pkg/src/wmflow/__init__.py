"""Weighted Mean Frequencies (WMF) and PC-MRA features for 4D Flow MRI segmentation."""

from .angiography import detect_systolic_frame, pcmra_frame, pcmra_systolic, speed_frame
from .errors import (
    DegenerateSeriesError,
    FormatError,
    NotNormalizedError,
    ShapeMismatchError,
    ValidationError,
)
from .features import CombinationId, combine, invert_wmf, magnitude_frame, normalize_minmax
from .phantom import PhantomSpec, generate, probe_voxels
from .segmentation import ThresholdSweepResult, apply_threshold, evaluate, sweep_optimal_threshold
from .spectral import Spectrum, energy_spectrum, wmf_component, wmf_from_velocity, wmf_min, wmf_scalar
from .volume import FeatureVolume, GridMeta, MagnitudeSeries, Mask, MetricsReport, VelocitySeries, validate

__version__ = "0.1.0"
