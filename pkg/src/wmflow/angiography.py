"""PC-MRA baseline: magnitude times gamma-compressed, VENC-normalized speed."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .volume import (
    FeatureVolume,
    MagnitudeSeries,
    VelocitySeries,
    check_frame_index,
    check_same_meta,
)

DEFAULT_GAMMA = 0.2

# Systole is the frame whose voxels above this speed quantile move fastest on average.
SYSTOLE_QUANTILE = 0.9


def speed_frame(vel: VelocitySeries, t: int) -> FeatureVolume:
    t = check_frame_index(vel.meta, t)
    u, v, w = (c[t].astype(np.float64) for c in vel.components)
    return FeatureVolume(vel.meta, np.sqrt(u * u + v * v + w * w), "speed")


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not 0 < gamma <= 1:
        raise ValidationError(f"gamma must lie in (0, 1], got {gamma}")
    return gamma


def _pcmra(mag_frame: np.ndarray, vel: VelocitySeries, t: int, gamma: float) -> np.ndarray:
    u, v, w = (c[t].astype(np.float64) for c in vel.components)
    speed = np.sqrt(u * u + v * v + w * w)
    return mag_frame.astype(np.float64) * (speed / vel.meta.venc) ** gamma


def pcmra_frame(mag: MagnitudeSeries, vel: VelocitySeries, t: int, gamma: float = DEFAULT_GAMMA) -> FeatureVolume:
    """PC-MRA at frame ``t``: ``mag(t) * (speed(t) / venc) ** gamma``."""
    check_same_meta(mag, vel)
    gamma = _check_gamma(gamma)
    t = check_frame_index(vel.meta, t)
    if mag.meta.n_frames != vel.meta.n_frames:
        raise ValidationError(f"frame count mismatch: {mag.meta.n_frames} vs {vel.meta.n_frames}")
    return FeatureVolume(vel.meta, _pcmra(mag.values[t], vel, t, gamma), "pcmra_frame")


def detect_systolic_frame(vel: VelocitySeries) -> int:
    """Index of the frame with the highest mean speed over its top decile.

    A plain volume mean would be dominated by background noise since the
    vessel fills a small fraction of the field of view. Ties go to the
    earliest frame.
    """
    scores = []
    for speed in vel.speed():
        flat = speed.ravel()
        cut = np.quantile(flat, SYSTOLE_QUANTILE)
        scores.append(float(flat[flat >= cut].mean()))
    return int(np.argmax(scores))


def pcmra_systolic(mag: MagnitudeSeries, vel: VelocitySeries, gamma: float = DEFAULT_GAMMA) -> FeatureVolume:
    t = detect_systolic_frame(vel)
    frame = pcmra_frame(mag, vel, t, gamma)
    return FeatureVolume(frame.meta, frame.values, "pcmra_sys")
