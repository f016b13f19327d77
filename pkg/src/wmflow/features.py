"""Min-max normalization and the WMF / PC-MRA / magnitude combinations used
for threshold segmentation."""

from __future__ import annotations

import enum
from typing import Optional

import numpy as np

from .errors import NotNormalizedError, ValidationError
from .volume import FeatureVolume, MagnitudeSeries, check_same_meta

# Lower bound applied to normalized WMF before dividing by it.
DIVISION_FLOOR = 1e-6


class CombinationId(enum.Enum):
    INV_WMF = "inv_wmf"
    MAG_x_INVWMF8 = "mag_x_invwmf8"
    MAG_div_WMF = "mag_div_wmf"
    MAG_div_WMF2 = "mag_div_wmf2"
    PCMRA_div_WMF = "pcmra_div_wmf"
    PCMRA_div_WMF2 = "pcmra_div_wmf2"
    PCMRA_T = "pcmra_t"
    PCMRA_SYS = "pcmra_sys"

    @classmethod
    def parse(cls, name) -> "CombinationId":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            choices = ", ".join(c.value for c in cls)
            raise ValidationError(f"unknown combination {name!r}; expected one of {choices}") from None


# Which inputs each formula reads.
REQUIRED_INPUTS = {
    CombinationId.INV_WMF: ("wmf",),
    CombinationId.MAG_x_INVWMF8: ("mag_t", "wmf"),
    CombinationId.MAG_div_WMF: ("mag_t", "wmf"),
    CombinationId.MAG_div_WMF2: ("mag_t", "wmf"),
    CombinationId.PCMRA_div_WMF: ("pcmra_t", "wmf"),
    CombinationId.PCMRA_div_WMF2: ("pcmra_t", "wmf"),
    CombinationId.PCMRA_T: ("pcmra_t",),
    CombinationId.PCMRA_SYS: ("pcmra_sys",),
}


def minmax_values(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValidationError("cannot normalize non-finite values")
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def normalize_minmax(f: FeatureVolume) -> FeatureVolume:
    """Rescale to [0, 1]; a constant field becomes all zeros."""
    return FeatureVolume(f.meta, minmax_values(f.values), f.kind, normalized=True)


def magnitude_frame(mag: MagnitudeSeries, t: int) -> FeatureVolume:
    """Normalized anatomical image of one frame."""
    return normalize_minmax(FeatureVolume(mag.meta, mag.frame(t), "magnitude"))


def require_normalized(f: FeatureVolume, what: str = "feature") -> None:
    if not f.normalized:
        raise NotNormalizedError(f"{what} ({f.kind}) must be min-max normalized first")


def invert_wmf(wmf: FeatureVolume) -> FeatureVolume:
    require_normalized(wmf, "wmf")
    return FeatureVolume(wmf.meta, 1.0 - wmf.values.astype(np.float64), "inv_wmf", normalized=True)


def combination_values(
    cid: CombinationId,
    mag_t: Optional[np.ndarray] = None,
    pcmra_t: Optional[np.ndarray] = None,
    pcmra_sys: Optional[np.ndarray] = None,
    wmf: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Evaluate one formula on normalized float arrays, before renormalization."""
    f64 = lambda a: None if a is None else np.asarray(a, dtype=np.float64)  # noqa: E731
    mag_t, pcmra_t, pcmra_sys, wmf = map(f64, (mag_t, pcmra_t, pcmra_sys, wmf))
    guarded = None if wmf is None else np.maximum(wmf, DIVISION_FLOOR)

    if cid is CombinationId.INV_WMF:
        return 1.0 - wmf
    if cid is CombinationId.MAG_x_INVWMF8:
        return mag_t * (1.0 - wmf) ** 8
    if cid is CombinationId.MAG_div_WMF:
        return mag_t / guarded
    if cid is CombinationId.MAG_div_WMF2:
        return mag_t / guarded**2
    if cid is CombinationId.PCMRA_div_WMF:
        return pcmra_t / guarded
    if cid is CombinationId.PCMRA_div_WMF2:
        return pcmra_t / guarded**2
    if cid is CombinationId.PCMRA_T:
        return pcmra_t
    if cid is CombinationId.PCMRA_SYS:
        return pcmra_sys
    raise ValidationError(f"unhandled combination {cid}")


def combine(
    cid,
    mag_t: Optional[FeatureVolume] = None,
    pcmra_t: Optional[FeatureVolume] = None,
    pcmra_sys: Optional[FeatureVolume] = None,
    wmf: Optional[FeatureVolume] = None,
) -> FeatureVolume:
    """Build one normalized combination feature.

    ``wmf`` is the min-fused, normalized WMF; the magnitude and PC-MRA inputs
    are normalized frames. Only the inputs the formula reads are required.
    """
    cid = CombinationId.parse(cid)
    given = {"mag_t": mag_t, "pcmra_t": pcmra_t, "pcmra_sys": pcmra_sys, "wmf": wmf}
    needed = REQUIRED_INPUTS[cid]
    missing = [name for name in needed if given[name] is None]
    if missing:
        raise ValidationError(f"{cid.value} needs inputs: {', '.join(missing)}")
    used = [given[name] for name in needed]
    for name, vol in zip(needed, used):
        require_normalized(vol, name)
    meta = check_same_meta(*used)

    raw = combination_values(cid, **{name: given[name].values for name in needed})
    return FeatureVolume(meta, minmax_values(raw), cid.value, normalized=True)
