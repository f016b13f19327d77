"""Temporal Fourier analysis per voxel and the Weighted Mean Frequencies feature.

Frequencies are harmonic indices of the cardiac cycle: bin ``i`` of a
``T``-frame series sits at ``f_i = i``. Only the strictly positive bins
``1 .. T // 2`` enter the feature (the Nyquist bin of an even ``T`` is counted
once). No window, no zero padding, no detrending besides dropping the DC bin.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import DegenerateSeriesError, ShapeMismatchError, ValidationError
from .volume import FeatureVolume, VelocitySeries

# Total positive-bin energy below ENERGY_FLOOR_FACTOR * T * venc**2 counts as
# "no pulsatile energy" and maps the voxel to the highest frequency.
ENERGY_FLOOR_FACTOR = 1e-12

# Voxels per FFT batch. Fixed so that results never depend on the thread count.
CHUNK_VOXELS = 8192

COMPONENT_KINDS = {"u": "wmf_u", "v": "wmf_v", "w": "wmf_w"}


@dataclass(frozen=True)
class Spectrum:
    energies: np.ndarray
    freqs: np.ndarray
    n_samples: int

    @property
    def n(self) -> int:
        return len(self.freqs)


def positive_frequencies(n_samples: int) -> np.ndarray:
    return np.arange(1, n_samples // 2 + 1, dtype=np.float64)


def energy_floor(n_samples: int, venc: float = 1.0) -> float:
    return ENERGY_FLOOR_FACTOR * n_samples * venc * venc


def _check_length(n_samples: int) -> None:
    if n_samples < 2:
        raise DegenerateSeriesError(f"need at least 2 time samples, got {n_samples}")


def energy_spectrum(samples) -> Spectrum:
    """``|FT|^2`` of a real series at its strictly positive harmonics."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"expected a 1-D series, got shape {x.shape}")
    _check_length(len(x))
    if not np.all(np.isfinite(x)):
        raise ValidationError("series contains non-finite samples")
    coeffs = scipy.fft.rfft(x)[1 : len(x) // 2 + 1]
    energies = coeffs.real**2 + coeffs.imag**2
    return Spectrum(energies=energies, freqs=positive_frequencies(len(x)), n_samples=len(x))


def wmf_scalar(spec: Spectrum, venc: float = 1.0) -> float:
    """Energy-weighted mean of the positive frequencies of one spectrum."""
    energies = np.asarray(spec.energies, dtype=np.float64)[:, None]
    return float(_weighted_mean(energies, spec.freqs, energy_floor(spec.n_samples, venc))[0])


def _weighted_mean(energies: np.ndarray, freqs: np.ndarray, floor: float) -> np.ndarray:
    # energies: (n, V). Bins are accumulated in ascending order for every voxel.
    total = np.zeros(energies.shape[1])
    weighted = np.zeros(energies.shape[1])
    for i in range(len(freqs)):
        total += energies[i]
        weighted += energies[i] * freqs[i]
    out = np.full(energies.shape[1], freqs[-1])
    live = total > floor
    out[live] = weighted[live] / total[live]
    return np.clip(out, freqs[0], freqs[-1])


def _wmf_chunk(block: np.ndarray, freqs: np.ndarray, floor: float) -> np.ndarray:
    coeffs = scipy.fft.rfft(block, axis=0, workers=1)[1 : len(freqs) + 1]
    return _weighted_mean(coeffs.real**2 + coeffs.imag**2, freqs, floor)


def wmf_field(samples: np.ndarray, venc: float = 1.0, threads: int = 1) -> np.ndarray:
    """WMF of every series along axis 0 of ``samples``; float64, shape ``samples.shape[1:]``.

    Work is split in fixed batches of :data:`CHUNK_VOXELS` series; ``threads``
    only decides how many batches run at once, never how they are cut.
    """
    samples = np.asarray(samples)
    n_samples = samples.shape[0]
    _check_length(n_samples)
    if not np.all(np.isfinite(samples)):
        raise ValidationError("series contains non-finite samples")
    flat = samples.reshape(n_samples, -1)
    n_vox = flat.shape[1]
    freqs = positive_frequencies(n_samples)
    floor = energy_floor(n_samples, venc)
    out = np.empty(n_vox)

    def run(start: int) -> None:
        stop = min(start + CHUNK_VOXELS, n_vox)
        out[start:stop] = _wmf_chunk(flat[:, start:stop].astype(np.float64), freqs, floor)

    starts = range(0, n_vox, CHUNK_VOXELS)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return out.reshape(samples.shape[1:])


def wmf_component(vel: VelocitySeries, component: str, threads: int = 1) -> FeatureVolume:
    """Unnormalized WMF volume of one velocity component (``"u"``, ``"v"`` or ``"w"``)."""
    if component not in COMPONENT_KINDS:
        raise ValidationError(f"unknown component {component!r}")
    values = wmf_field(getattr(vel, component), vel.meta.venc, threads)
    return FeatureVolume(vel.meta, values, COMPONENT_KINDS[component])


def wmf_components(vel: VelocitySeries, threads: int = 1) -> tuple[FeatureVolume, FeatureVolume, FeatureVolume]:
    return tuple(wmf_component(vel, c, threads) for c in "uvw")


def wmf_min(a: FeatureVolume, b: FeatureVolume, c: FeatureVolume) -> FeatureVolume:
    """Voxel-wise minimum of the three component WMF volumes."""
    for vol in (a, b, c):
        if vol.normalized:
            raise ValidationError("wmf_min expects unnormalized component volumes")
        if vol.meta != a.meta:
            raise ShapeMismatchError(f"meta mismatch between {a.kind} and {vol.kind}")
    values = np.minimum(np.minimum(a.values, b.values), c.values)
    return FeatureVolume(a.meta, values, "wmf_min")


def wmf_from_velocity(vel: VelocitySeries, threads: int = 1) -> FeatureVolume:
    return wmf_min(*wmf_components(vel, threads))

