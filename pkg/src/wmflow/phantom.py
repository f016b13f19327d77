"""Synthetic 4D flow phantom with analytic ground truth.

A tube (straight, or an inverted U resembling an aortic arch) carries a
Poiseuille profile along its centerline, modulated in time by a cardiac
waveform. The magnitude image is 1 inside the lumen and a configurable
fraction of that in the surrounding tissue (and, optionally, in a low-signal
"lung" slab), all multiplied by a smooth coil-sensitivity ramp. Velocity
noise follows the phase-contrast relation

    sigma_v = sqrt(2) / pi * venc / SNR_local,

where SNR_local is the noise-free magnitude times ``snr_mag``, so dark regions
get noisy velocities. Magnitude noise is Rician with sigma ``1 / snr_mag``.

Every noise draw comes from its own Philox stream keyed by the seed, the
quantity and the x-plane, so output does not depend on how planes are
scheduled across threads.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import ValidationError
from .spectral import Spectrum, energy_spectrum, wmf_scalar
from .volume import GridMeta, MagnitudeSeries, Mask, VelocitySeries

PHASE_NOISE_CONSTANT = math.sqrt(2.0) / math.pi

GEOMETRIES = ("straight_tube", "u_arch")
WAVEFORMS = ("systolic_pulse", "pure_harmonic")

# stream ids of the noise quantities
_MAG_REAL, _MAG_IMAG, _VEL_U, _VEL_V, _VEL_W = range(5)


@dataclass(frozen=True)
class PhantomSpec:
    geometry: str = "u_arch"
    radius_mm: float = 8.0
    # u_arch only: radius of the arch centerline and the voxel row of its center
    arch_radius_mm: float = 30.0
    arch_center_z: Optional[int] = None
    # centerline position in the x-y plane, voxel indices (default: grid middle)
    center_x: Optional[int] = None
    center_y: Optional[int] = None
    dims: tuple = (48, 32, 48)
    spacing: tuple = (2.5, 2.5, 2.5)
    n_frames: int = 20
    frame_duration: Optional[float] = None
    peak_velocity: float = 1.2
    venc: float = 1.5
    systolic_frame: int = 5
    waveform: str = "systolic_pulse"
    harmonic: int = 1
    diastolic_tail: float = 0.15
    pulse_sharpness: float = 4.0
    snr_mag: float = 20.0
    background_mag_level: float = 0.8
    lung_mag_level: Optional[float] = None
    # first y index of the lung slab
    lung_start_y: Optional[int] = None
    # receive-coil shading: signal scales linearly from 1 - a to 1 + a along x
    bias_amplitude: float = 0.4
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        problems = self.problems()
        if problems:
            raise ValidationError("invalid phantom spec: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.geometry not in GEOMETRIES:
            out.append(f"geometry must be one of {GEOMETRIES}")
        if self.waveform not in WAVEFORMS:
            out.append(f"waveform must be one of {WAVEFORMS}")
        if len(self.dims) != 3 or min(self.dims) < 1:
            out.append("dims must be three counts >= 1")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            out.append("spacing must be three positive lengths")
        elif self.radius_mm < 2 * max(self.spacing):
            out.append(f"radius {self.radius_mm} mm is below 2 x max spacing")
        if self.n_frames < 2:
            out.append("n_frames must be >= 2")
        if not 0 <= self.systolic_frame < self.n_frames:
            out.append("systolic_frame must lie in [0, n_frames)")
        if not 0 < self.venc:
            out.append("venc must be positive")
        if not 0 <= self.peak_velocity <= self.venc:
            out.append("peak_velocity must lie in [0, venc]")
        if not self.snr_mag > 0:
            out.append("snr_mag must be positive (inf for noiseless)")
        if not 0 < self.background_mag_level:
            out.append("background_mag_level must be positive")
        if self.lung_mag_level is not None and not 0 < self.lung_mag_level:
            out.append("lung_mag_level must be positive")
        if not 0 <= self.bias_amplitude < 1:
            out.append("bias_amplitude must lie in [0, 1)")
        if not 0 <= self.diastolic_tail <= 1:
            out.append("diastolic_tail must lie in [0, 1]")
        if self.harmonic < 1 or self.harmonic > self.n_frames // 2:
            out.append("harmonic must lie in [1, n_frames // 2]")
        return out

    @property
    def meta(self) -> GridMeta:
        return GridMeta(self.dims, self.spacing, self.n_frames, self.venc, self.frame_duration)

    def replace(self, **changes) -> "PhantomSpec":
        return dataclasses.replace(self, **changes)


class PhantomData(NamedTuple):
    magnitude: MagnitudeSeries
    velocity: VelocitySeries
    mask: Mask


# -- geometry ---------------------------------------------------------------


def _coords(spec: PhantomSpec):
    axes = [np.arange(n) * s for n, s in zip(spec.dims, spec.spacing)]
    return np.meshgrid(*axes, indexing="ij")


def _centerline_xy(spec: PhantomSpec) -> tuple[float, float]:
    cx = (spec.dims[0] - 1) // 2 if spec.center_x is None else spec.center_x
    cy = (spec.dims[1] - 1) // 2 if spec.center_y is None else spec.center_y
    return cx * spec.spacing[0], cy * spec.spacing[1]


def arch_center_z(spec: PhantomSpec) -> int:
    if spec.arch_center_z is not None:
        return spec.arch_center_z
    sz = spec.spacing[2]
    return int((spec.dims[2] - 1) - math.ceil((spec.arch_radius_mm + spec.radius_mm) / sz) - 1)


def centerline_geometry(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Distance to the centerline (mm) and unit flow direction, per voxel.

    Returns ``(distance, tangent)`` with shapes ``(nx, ny, nz)`` and
    ``(3, nx, ny, nz)``.
    """
    x, y, z = _coords(spec)
    cx, cy = _centerline_xy(spec)
    if spec.geometry == "straight_tube":
        dist = np.hypot(x - cx, y - cy)
        tangent = np.zeros((3, *spec.dims))
        tangent[2] = 1.0
        return dist, tangent

    zc = arch_center_z(spec) * spec.spacing[2]
    ra = spec.arch_radius_mm
    x_up, x_down = cx - ra, cx + ra
    above = np.maximum(z - zc, 0.0)
    d_up = np.sqrt((x - x_up) ** 2 + (y - cy) ** 2 + above**2)
    d_down = np.sqrt((x - x_down) ** 2 + (y - cy) ** 2 + above**2)
    rho = np.hypot(x - cx, z - zc)
    d_arch = np.where(z >= zc, np.hypot(rho - ra, y - cy), np.inf)
    phi = np.arctan2(z - zc, x - cx)

    dist = np.minimum(np.minimum(d_up, d_down), d_arch)
    tangent = np.zeros((3, *spec.dims))
    on_up = d_up == dist
    on_down = (d_down == dist) & ~on_up
    on_arch = ~on_up & ~on_down
    tangent[2][on_up] = 1.0
    tangent[2][on_down] = -1.0
    # arch runs from the ascending leg over the top to the descending leg
    tangent[0][on_arch] = np.sin(phi[on_arch])
    tangent[2][on_arch] = -np.cos(phi[on_arch])
    return dist, tangent


def vessel_mask(spec: PhantomSpec) -> np.ndarray:
    dist, _ = centerline_geometry(spec)
    return dist <= spec.radius_mm


def waveform(spec: PhantomSpec) -> np.ndarray:
    """Centerline speed factor per frame, 1 at the systolic frame."""
    phase = 2 * np.pi * (np.arange(spec.n_frames) - spec.systolic_frame) / spec.n_frames
    if spec.waveform == "pure_harmonic":
        return np.cos(spec.harmonic * phase)
    pulse = np.exp(spec.pulse_sharpness * (np.cos(phase) - 1.0))
    return spec.diastolic_tail + (1.0 - spec.diastolic_tail) * pulse


def diastolic_frame(spec: PhantomSpec) -> int:
    """Frame half a cycle away from systole."""
    return (spec.systolic_frame + spec.n_frames // 2) % spec.n_frames


def magnitude_truth(spec: PhantomSpec) -> np.ndarray:
    """Noise-free anatomical signal, relative to the lumen level of 1."""
    mag = np.full(spec.dims, spec.background_mag_level)
    if spec.lung_mag_level is not None:
        start = spec.lung_start_y if spec.lung_start_y is not None else (3 * spec.dims[1]) // 4
        mag[:, start:, :] = spec.lung_mag_level
    mag[vessel_mask(spec)] = 1.0
    return mag * bias_field(spec)[:, None, None]


def bias_field(spec: PhantomSpec) -> np.ndarray:
    """Coil sensitivity along x, a linear ramp with mean 1."""
    nx = spec.dims[0]
    ramp = np.linspace(-1.0, 1.0, nx) if nx > 1 else np.zeros(1)
    return 1.0 + spec.bias_amplitude * ramp


def velocity_noise_sigma(spec: PhantomSpec, mag_level=None) -> np.ndarray:
    """Per-voxel velocity noise std (m/s); zero for an infinite ``snr_mag``."""
    level = magnitude_truth(spec) if mag_level is None else np.asarray(mag_level, dtype=np.float64)
    if math.isinf(spec.snr_mag):
        return np.zeros_like(level)
    return PHASE_NOISE_CONSTANT * spec.venc / (spec.snr_mag * level)


def clean_velocity(spec: PhantomSpec) -> np.ndarray:
    """Noise-free velocity, shape ``(3, T, nx, ny, nz)``."""
    dist, tangent = centerline_geometry(spec)
    profile = np.where(dist <= spec.radius_mm, 1.0 - (dist / spec.radius_mm) ** 2, 0.0)
    amp = spec.peak_velocity * waveform(spec)
    return amp[None, :, None, None, None] * (profile * tangent)[:, None]


# -- noise ------------------------------------------------------------------


def _stream(seed: int, quantity: int, plane: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed % 2**64, (quantity << 32) | plane]))


def _plane_noise(spec: PhantomSpec, quantity: int, threads: int) -> np.ndarray:
    nx, ny, nz = spec.dims
    out = np.empty((spec.n_frames, nx, ny, nz))

    def fill(i: int) -> None:
        out[:, i] = _stream(spec.rng_seed, quantity, i).standard_normal((spec.n_frames, ny, nz))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(nx)))
    else:
        for i in range(nx):
            fill(i)
    return out


def generate(spec: PhantomSpec, threads: int = 1) -> PhantomData:
    """Magnitude series, velocity series and exact lumen mask for ``spec``."""
    meta = spec.meta
    inside = vessel_mask(spec)
    mag0 = magnitude_truth(spec)
    vel = clean_velocity(spec)

    if math.isinf(spec.snr_mag):
        mag = np.broadcast_to(mag0, meta.series_shape)
    else:
        sigma_m = 1.0 / spec.snr_mag
        re = mag0 + sigma_m * _plane_noise(spec, _MAG_REAL, threads)
        im = sigma_m * _plane_noise(spec, _MAG_IMAG, threads)
        mag = np.hypot(re, im)
        sigma_v = velocity_noise_sigma(spec, mag0)
        for k, quantity in enumerate((_VEL_U, _VEL_V, _VEL_W)):
            vel[k] += sigma_v * _plane_noise(spec, quantity, threads)
        np.clip(vel, -spec.venc, spec.venc, out=vel)

    return PhantomData(
        MagnitudeSeries(meta, mag),
        VelocitySeries(meta, vel[0], vel[1], vel[2]),
        Mask(meta, inside),
    )


# -- point probes -----------------------------------------------------------


@dataclass(frozen=True)
class ProbeResult:
    point: tuple[int, int, int]
    magnitude: np.ndarray
    speed: np.ndarray
    spectra: dict[str, Spectrum]
    wmf: dict[str, float]

    @property
    def wmf_min(self) -> float:
        return min(self.wmf.values())


def probe_voxels(volumes, points) -> list[ProbeResult]:
    """Speed curve, per-component spectra and WMF at a few voxels.

    ``volumes`` is a ``(magnitude, velocity)`` pair or a :class:`PhantomData`.
    """
    mag, vel = volumes[0], volumes[1]
    nx, ny, nz = vel.meta.dims
    out = []
    for point in points:
        x, y, z = (int(c) for c in point)
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
            raise ValidationError(f"probe point {point} outside grid {vel.meta.dims}")
        series = {name: comp[:, x, y, z].astype(np.float64) for name, comp in zip("uvw", vel.components)}
        spectra = {name: energy_spectrum(s) for name, s in series.items()}
        speed = np.sqrt(sum(s * s for s in series.values()))
        out.append(
            ProbeResult(
                point=(x, y, z),
                magnitude=mag.values[:, x, y, z].astype(np.float64),
                speed=speed,
                spectra=spectra,
                wmf={name: wmf_scalar(sp, vel.meta.venc) for name, sp in spectra.items()},
            )
        )
    return out


# -- config files -----------------------------------------------------------

_SECTION = "phantom"


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def spec_to_text(spec: PhantomSpec) -> str:
    lines = [f"[{_SECTION}]"]
    for f in dataclasses.fields(spec):
        lines.append(f"{f.name} = {_format(getattr(spec, f.name))}")
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> PhantomSpec:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"unreadable phantom config: {exc}") from None
    if not parser.has_section(_SECTION):
        raise ValidationError(f"phantom config needs a [{_SECTION}] section")
    fields = {f.name: f for f in dataclasses.fields(PhantomSpec)}
    defaults = PhantomSpec()
    kwargs = {}
    for key, raw in parser.items(_SECTION):
        if key not in fields:
            raise ValidationError(f"unknown phantom key {key!r}")
        raw = raw.strip()
        default = getattr(defaults, key)
        try:
            if raw.lower() == "none":
                value = None
            elif key in ("dims",):
                value = tuple(int(v) for v in raw.split(","))
            elif key in ("spacing",):
                value = tuple(float(v) for v in raw.split(","))
            elif key in ("geometry", "waveform"):
                value = raw
            elif key in ("n_frames", "systolic_frame", "harmonic", "rng_seed", "arch_center_z",
                         "center_x", "center_y", "lung_start_y"):
                value = int(raw)
            else:
                value = float(raw)
        except ValueError:
            raise ValidationError(f"bad value for {key}: {raw!r}") from None
        if value is None and default is not None:
            raise ValidationError(f"{key} cannot be none")
        kwargs[key] = value
    return PhantomSpec(**kwargs)


def load_spec(path) -> PhantomSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_text(fh.read())
