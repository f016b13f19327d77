"""Core volume types shared by every other module.

Arrays are indexed ``[t, x, y, z]`` (series) or ``[x, y, z]`` (volumes) and
stored as read-only float32, which is also the on-disk sample type, so a
container round trip is bit-exact. Computations promote to float64
internally and cast back when building a result.

The linear (on-disk) order is t-major, then z, then y, with x varying
fastest; :func:`flat_index` and :func:`unravel_flat_index` convert between
the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import ShapeMismatchError, ValidationError

# Relative slack on the VENC bound, covers float32 rounding of clipped values.
VENC_TOLERANCE = 1e-6


@dataclass(frozen=True)
class GridMeta:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    n_frames: int
    venc: float
    frame_duration: Optional[float] = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "n_frames", int(self.n_frames))
        object.__setattr__(self, "venc", float(self.venc))
        if self.frame_duration is not None:
            object.__setattr__(self, "frame_duration", float(self.frame_duration))

        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValidationError(f"dims must be three counts >= 1, got {self.dims}")
        if len(spacing) != 3 or any(not (s > 0 and math.isfinite(s)) for s in spacing):
            raise ValidationError(f"spacing must be three positive lengths, got {self.spacing}")
        if self.n_frames < 2:
            raise ValidationError(f"n_frames must be >= 2, got {self.n_frames}")
        if not (self.venc > 0 and math.isfinite(self.venc)):
            raise ValidationError(f"venc must be positive, got {self.venc}")
        if self.frame_duration is not None and not self.frame_duration > 0:
            raise ValidationError(f"frame_duration must be positive, got {self.frame_duration}")

    @property
    def series_shape(self) -> tuple[int, int, int, int]:
        return (self.n_frames, *self.dims)

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]


def _frozen_array(values, dtype=np.float32) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def _check_shape(name: str, arr: np.ndarray, expected: tuple) -> None:
    if arr.shape != tuple(expected):
        raise ShapeMismatchError(f"{name} has shape {arr.shape}, expected {tuple(expected)}")


@dataclass(frozen=True)
class VelocitySeries:
    """Three velocity components in m/s: u (left-right), v (anterior-posterior),
    w (foot-head), each of shape ``(T, nx, ny, nz)``."""

    meta: GridMeta
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        for name in ("u", "v", "w"):
            arr = _frozen_array(getattr(self, name))
            _check_shape(name, arr, self.meta.series_shape)
            object.__setattr__(self, name, arr)

    @property
    def components(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.u, self.v, self.w)

    def speed(self) -> np.ndarray:
        """Speed for every frame, float64, shape ``(T, nx, ny, nz)``."""
        u, v, w = (c.astype(np.float64) for c in self.components)
        return np.sqrt(u * u + v * v + w * w)


@dataclass(frozen=True)
class MagnitudeSeries:
    meta: GridMeta
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        _check_shape("values", arr, self.meta.series_shape)
        object.__setattr__(self, "values", arr)

    def frame(self, t: int) -> np.ndarray:
        check_frame_index(self.meta, t)
        return self.values[t]


@dataclass(frozen=True)
class FeatureVolume:
    """A scalar per voxel, tagged with the formula that produced it.

    ``kind`` is one of ``wmf_u``, ``wmf_v``, ``wmf_w``, ``wmf_min``,
    ``pcmra_frame``, ``pcmra_sys``, ``speed``, ``magnitude`` or a
    combination name from :mod:`wmflow.features`.
    """

    meta: GridMeta
    values: np.ndarray
    kind: str
    normalized: bool = False

    def __post_init__(self):
        arr = _frozen_array(self.values)
        _check_shape("values", arr, self.meta.dims)
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class Mask:
    meta: GridMeta
    values: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.values)
        if raw.dtype != np.bool_:
            if not np.all((raw == 0) | (raw == 1)):
                raise ValidationError("mask values must be 0/1 or boolean")
        arr = _frozen_array(raw, dtype=np.bool_)
        _check_shape("values", arr, self.meta.dims)
        object.__setattr__(self, "values", arr)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.values))


@dataclass(frozen=True)
class MetricsReport:
    iou: float
    dice: float
    recall: float
    precision: float
    threshold: Optional[float] = None

    def as_dict(self) -> dict:
        out = {"iou": self.iou, "dice": self.dice, "recall": self.recall, "precision": self.precision}
        if self.threshold is not None:
            out["threshold"] = self.threshold
        return out


def check_same_meta(*items) -> GridMeta:
    """Return the shared grid of ``items`` or raise ``ShapeMismatchError``.

    Only the spatial grid has to agree; VENC and timing may differ (a mask
    carries no meaningful VENC).
    """
    metas = [it.meta for it in items]
    ref = metas[0]
    for m in metas[1:]:
        if m.dims != ref.dims or not np.allclose(m.spacing, ref.spacing):
            raise ShapeMismatchError(f"grid mismatch: {ref.dims}/{ref.spacing} vs {m.dims}/{m.spacing}")
    return ref


def check_frame_index(meta: GridMeta, t: int) -> int:
    if not 0 <= int(t) < meta.n_frames:
        raise ValidationError(f"frame index {t} out of range [0, {meta.n_frames})")
    return int(t)


# -- indexing ---------------------------------------------------------------


def flat_index(shape, t: int, x: int, y: int, z: int) -> int:
    """Linear offset of ``(t, x, y, z)`` in the t, z, y, x (x fastest) order.

    ``shape`` is ``(T, nx, ny, nz)``.
    """
    n_t, nx, ny, nz = shape
    for value, size in zip((t, x, y, z), shape):
        if not 0 <= value < size:
            raise IndexError(f"coordinate {(t, x, y, z)} out of range for shape {tuple(shape)}")
    return ((t * nz + z) * ny + y) * nx + x


def unravel_flat_index(shape, index: int) -> tuple[int, int, int, int]:
    n_t, nx, ny, nz = shape
    if not 0 <= index < n_t * nx * ny * nz:
        raise IndexError(f"flat index {index} out of range for shape {tuple(shape)}")
    rest, x = divmod(index, nx)
    rest, y = divmod(rest, ny)
    t, z = divmod(rest, nz)
    return t, x, y, z


def to_disk_order(arr: np.ndarray) -> np.ndarray:
    """``[..., x, y, z]`` -> C-contiguous ``[..., z, y, x]``."""
    return np.ascontiguousarray(np.swapaxes(arr, -1, -3))


def from_disk_order(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.swapaxes(arr, -1, -3))


# -- validation -------------------------------------------------------------


class Violation(NamedTuple):
    check: str
    field: str
    index: Optional[tuple]
    message: str


def _first_index(bad: np.ndarray) -> tuple:
    return tuple(int(i) for i in np.unravel_index(int(np.argmax(bad)), bad.shape))


def _finiteness(name: str, arr: np.ndarray) -> list[Violation]:
    bad = ~np.isfinite(arr)
    if not bad.any():
        return []
    idx = _first_index(bad)
    return [Violation("finite", name, idx, f"{name}: {int(bad.sum())} non-finite value(s), first at {idx}")]


def validate(item) -> list[Violation]:
    """List invariant violations of a volume object; empty means valid."""
    out: list[Violation] = []
    if isinstance(item, VelocitySeries):
        limit = item.meta.venc * (1 + VENC_TOLERANCE)
        for name, comp in zip("uvw", item.components):
            out += _finiteness(name, comp)
            with np.errstate(invalid="ignore"):
                bad = np.abs(comp.astype(np.float64)) > limit
            if bad.any():
                idx = _first_index(bad)
                out.append(
                    Violation(
                        "venc",
                        name,
                        idx,
                        f"{name}: {int(bad.sum())} sample(s) exceed venc={item.meta.venc}, "
                        f"first at (t,x,y,z)={idx}",
                    )
                )
    elif isinstance(item, MagnitudeSeries):
        out += _finiteness("values", item.values)
        with np.errstate(invalid="ignore"):
            bad = item.values < 0
        if bad.any():
            idx = _first_index(bad)
            out.append(Violation("non_negative", "values", idx, f"{int(bad.sum())} negative magnitude(s), first at {idx}"))
    elif isinstance(item, FeatureVolume):
        out += _finiteness("values", item.values)
        if item.normalized and not out:
            vals = item.values
            lo, hi = float(vals.min()), float(vals.max())
            if lo < 0 or hi > 1:
                out.append(Violation("range", "values", None, f"normalized values span [{lo}, {hi}]"))
            elif lo != hi and (lo != 0 or hi != 1):
                out.append(Violation("range", "values", None, f"normalized non-constant field spans [{lo}, {hi}]"))
    elif isinstance(item, Mask):
        pass
    else:
        raise TypeError(f"cannot validate {type(item).__name__}")
    return out
