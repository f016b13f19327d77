"""On-disk formats: the raw+JSON volume container, NIfTI-1 ingestion,
multi-channel export and PGM slice rendering.

Container layout
----------------
``name.json`` holds the header, ``name.raw`` the payload: little-endian
float32 samples, components outermost, then (for series) time, then z, y and
x with x varying fastest. The payload therefore has
``prod(dims) * frames * n_components * 4`` bytes, where ``frames`` is
``n_frames`` for series and 1 for single volumes.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import FormatError, ShapeMismatchError, ValidationError
from .volume import (
    FeatureVolume,
    GridMeta,
    MagnitudeSeries,
    Mask,
    VelocitySeries,
    check_same_meta,
    from_disk_order,
    to_disk_order,
)

FORMAT_NAME = "wmflow-volume"
FORMAT_VERSION = 1
DTYPE_TAG = "float32le"
_DISK_DTYPE = np.dtype("<f4")

REQUIRED_KEYS = ("format", "type", "dims", "spacing", "n_frames", "venc", "axis_order", "components", "dtype")


@dataclass(frozen=True)
class ChannelStack:
    """Co-registered 3D channels, in order, for an external trainer."""

    meta: GridMeta
    values: np.ndarray  # (C, nx, ny, nz)
    kinds: tuple[str, ...]
    frames: tuple[Optional[int], ...]

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float32)
        arr.flags.writeable = False
        if arr.ndim != 4 or arr.shape[1:] != self.meta.dims or arr.shape[0] != len(self.kinds):
            raise ShapeMismatchError(f"channel array {arr.shape} does not match {len(self.kinds)} x {self.meta.dims}")
        object.__setattr__(self, "values", arr)


Volume = Union[VelocitySeries, MagnitudeSeries, FeatureVolume, Mask, ChannelStack]


# -- atomic writes ----------------------------------------------------------


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- container --------------------------------------------------------------


def container_paths(path) -> tuple[Path, Path]:
    """``(header, payload)`` paths for a container named by either file or stem."""
    path = Path(path)
    if path.suffix in (".json", ".raw"):
        path = path.with_suffix("")
    return path.with_name(path.name + ".json"), path.with_name(path.name + ".raw")


def _base_header(meta: GridMeta) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dims": list(meta.dims),
        "spacing": list(meta.spacing),
        "n_frames": meta.n_frames,
        "frame_duration": meta.frame_duration,
        "venc": meta.venc,
        "dtype": DTYPE_TAG,
    }


def _encode(vol: Volume) -> tuple[dict, np.ndarray]:
    header = _base_header(vol.meta)
    if isinstance(vol, VelocitySeries):
        header.update(type="velocity", axis_order=["t", "z", "y", "x"], components=["u", "v", "w"])
        data = np.stack(vol.components)
    elif isinstance(vol, MagnitudeSeries):
        header.update(type="magnitude", axis_order=["t", "z", "y", "x"], components=["magnitude"])
        data = vol.values[None]
    elif isinstance(vol, FeatureVolume):
        header.update(
            type="feature", axis_order=["z", "y", "x"], components=[vol.kind], kind=vol.kind, normalized=vol.normalized
        )
        data = vol.values[None]
    elif isinstance(vol, Mask):
        header.update(type="mask", axis_order=["z", "y", "x"], components=["mask"])
        data = vol.values[None].astype(np.float32)
    elif isinstance(vol, ChannelStack):
        header.update(
            type="channels",
            axis_order=["z", "y", "x"],
            components=list(vol.kinds),
            frames=list(vol.frames),
        )
        data = vol.values
    else:
        raise TypeError(f"cannot store {type(vol).__name__}")
    return header, to_disk_order(data).astype(_DISK_DTYPE, copy=False)


def write_container(vol: Volume, path) -> Path:
    """Write header and payload (each atomically); returns the header path."""
    header_path, payload_path = container_paths(path)
    header, data = _encode(vol)
    header["payload"] = payload_path.name
    atomic_write_bytes(payload_path, data.tobytes())
    atomic_write_text(header_path, json.dumps(header, indent=2) + "\n")
    return header_path


def read_header(path) -> dict:
    header_path, _ = container_paths(path)
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{header_path}: header is not valid JSON ({exc})") from None
    missing = [k for k in REQUIRED_KEYS if k not in header]
    if missing:
        raise FormatError(f"{header_path}: missing header keys {missing}")
    if header["format"] != FORMAT_NAME:
        raise FormatError(f"{header_path}: unknown format {header['format']!r}")
    if header["dtype"] != DTYPE_TAG:
        raise FormatError(f"{header_path}: unknown dtype {header['dtype']!r}")
    return header


def read_container(path) -> Volume:
    header_path, payload_path = container_paths(path)
    header = read_header(header_path)
    if "payload" in header:
        payload_path = header_path.with_name(header["payload"])
    meta = GridMeta(
        tuple(header["dims"]),
        tuple(header["spacing"]),
        header["n_frames"],
        header["venc"],
        header.get("frame_duration"),
    )
    kind = header["type"]
    series = kind in ("velocity", "magnitude")
    comps = list(header["components"])
    nx, ny, nz = meta.dims
    shape = (len(comps), meta.n_frames, nz, ny, nx) if series else (len(comps), nz, ny, nx)
    expected = int(np.prod(shape)) * _DISK_DTYPE.itemsize
    raw = payload_path.read_bytes()
    if len(raw) != expected:
        raise FormatError(f"{payload_path}: payload length mismatch, expected {expected} bytes, got {len(raw)}")
    data = from_disk_order(np.frombuffer(raw, dtype=_DISK_DTYPE).reshape(shape))

    if kind == "velocity":
        if len(comps) != 3:
            raise FormatError(f"{header_path}: velocity needs 3 components, got {comps}")
        return VelocitySeries(meta, data[0], data[1], data[2])
    if kind == "magnitude":
        return MagnitudeSeries(meta, data[0])
    if kind == "feature":
        return FeatureVolume(meta, data[0], header.get("kind", comps[0]), bool(header.get("normalized", False)))
    if kind == "mask":
        return Mask(meta, data[0])
    if kind == "channels":
        frames = tuple(header.get("frames", [None] * len(comps)))
        return ChannelStack(meta, data, tuple(comps), frames)
    raise FormatError(f"{header_path}: unknown volume type {kind!r}")


# -- channel export ---------------------------------------------------------


def export_channels(selection: Sequence[FeatureVolume], path, frames: Optional[Sequence[Optional[int]]] = None) -> ChannelStack:
    """Stack 3D volumes as channels (in the given order) and write them.

    ``frames`` optionally records which time frame each channel came from.
    """
    selection = list(selection)
    if not selection:
        raise ValidationError("channel selection is empty")
    meta = check_same_meta(*selection)
    frames = tuple(frames) if frames is not None else (None,) * len(selection)
    if len(frames) != len(selection):
        raise ValidationError("one frame entry per channel is required")
    stack = ChannelStack(meta, np.stack([v.values for v in selection]), tuple(v.kind for v in selection), frames)
    write_container(stack, path)
    return stack


# -- NIfTI-1 ----------------------------------------------------------------

NIFTI_HEADER_SIZE = 348
NIFTI_DTYPES = {4: np.dtype("i2"), 16: np.dtype("f4")}


@dataclass(frozen=True)
class NiftiImage:
    data: np.ndarray  # float64, (nx, ny, nz) or (nx, ny, nz, nt)
    spacing: tuple[float, ...]
    datatype: int
    scl_slope: float
    scl_inter: float


def read_nifti_image(path) -> NiftiImage:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < NIFTI_HEADER_SIZE:
        raise FormatError(f"{path}: too short for a NIfTI-1 header ({len(raw)} bytes)")
    for endian in ("<", ">"):
        if struct.unpack_from(endian + "i", raw, 0)[0] == NIFTI_HEADER_SIZE:
            break
    else:
        raise FormatError(f"{path}: sizeof_hdr is not 348 in either byte order")

    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise FormatError(f"{path}: bad magic {magic!r}")
    dim = struct.unpack_from(endian + "8h", raw, 40)
    datatype, _bitpix = struct.unpack_from(endian + "2h", raw, 70)
    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from(endian + "3f", raw, 108)

    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError(f"{path}: invalid dim[0]={ndim}")
    if ndim > 4 and any(d > 1 for d in dim[5 : ndim + 1]):
        raise FormatError(f"{path}: {ndim}-D images are not supported (max 4)")
    ndim = min(ndim, 4)
    shape = tuple(max(int(d), 1) for d in dim[1 : ndim + 1])
    if datatype not in NIFTI_DTYPES:
        raise FormatError(f"{path}: unsupported NIfTI datatype code {datatype}")
    dtype = NIFTI_DTYPES[datatype].newbyteorder(endian)

    if magic == b"ni1\x00":
        source = path.with_suffix(".img").read_bytes()
        offset = int(vox_offset)
    else:
        source = raw
        offset = int(vox_offset) if vox_offset >= NIFTI_HEADER_SIZE else NIFTI_HEADER_SIZE
    count = int(np.prod(shape))
    needed = offset + count * dtype.itemsize
    if len(source) < needed:
        raise FormatError(f"{path}: data truncated, expected {needed} bytes, got {len(source)}")
    data = np.frombuffer(source, dtype=dtype, count=count, offset=offset).reshape(shape, order="F")
    data = data.astype(np.float64)
    # slope 0 means "no scaling"
    if scl_slope != 0 and np.isfinite(scl_slope):
        data = data * scl_slope + (scl_inter if np.isfinite(scl_inter) else 0.0)
    while data.ndim < 3:
        data = data[..., None]
    spacing = tuple(abs(float(p)) if p else 1.0 for p in pixdim[1:4])
    return NiftiImage(data, spacing, int(datatype), float(scl_slope), float(scl_inter))


def read_nifti1(path, as_: str = "auto", venc: float = 1.0, label: Optional[int] = None, kind: str = "nifti"):
    """Load a NIfTI-1 file as a toolkit volume.

    ``as_`` picks the result: ``magnitude`` (4D -> MagnitudeSeries),
    ``component`` (4D -> float64 array ``(T, nx, ny, nz)``), ``feature``
    (3D -> FeatureVolume) or ``mask`` (3D -> Mask, voxels equal to ``label``,
    or all non-zero voxels when ``label`` is None). ``auto`` chooses
    magnitude for 4D and feature for 3D. 3D results get a placeholder
    two-frame grid since the file carries no timing.
    """
    img = read_nifti_image(path)
    is_series = img.data.ndim == 4 and img.data.shape[3] > 1
    if as_ == "auto":
        as_ = "magnitude" if is_series else "feature"
    if as_ in ("magnitude", "component"):
        if not is_series:
            raise ValidationError(f"{path}: {as_} needs a 4D image")
        series = np.moveaxis(img.data, 3, 0)
        if as_ == "component":
            return series
        meta = GridMeta(series.shape[1:], img.spacing, series.shape[0], venc)
        return MagnitudeSeries(meta, series)
    if as_ in ("feature", "mask"):
        if is_series:
            raise ValidationError(f"{path}: {as_} needs a 3D image")
        vol = img.data.reshape(img.data.shape[:3])
        meta = GridMeta(vol.shape, img.spacing, 2, venc)
        if as_ == "mask":
            return Mask(meta, vol != 0 if label is None else vol == label)
        return FeatureVolume(meta, vol, kind)
    raise ValidationError(f"unknown NIfTI target {as_!r}")


# -- rendering --------------------------------------------------------------

_AXES = {"x": 0, "y": 1, "z": 2}


def slice_image(f: Union[FeatureVolume, Mask], axis, index: int) -> np.ndarray:
    """8-bit slice, shape ``(rows, cols)``; rows follow the later remaining axis.

    Masks map to 0/255; other volumes use a min-max window over the slice,
    and a constant slice renders mid-gray.
    """
    ax = _AXES.get(axis, axis) if isinstance(axis, str) else int(axis)
    if ax not in (0, 1, 2):
        raise ValidationError(f"axis must be x, y, z or 0-2, got {axis!r}")
    size = f.meta.dims[ax]
    if not 0 <= int(index) < size:
        raise ValidationError(f"slice index {index} out of range [0, {size})")
    plane = np.take(f.values, int(index), axis=ax).T
    if isinstance(f, Mask):
        return np.where(plane, 255, 0).astype(np.uint8)
    plane = plane.astype(np.float64)
    lo, hi = plane.min(), plane.max()
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValidationError("cannot render non-finite values")
    if hi == lo:
        return np.full(plane.shape, 128, dtype=np.uint8)
    return np.round((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)


def render_slice(f: Union[FeatureVolume, Mask], axis, index: int, path) -> np.ndarray:
    """Write a binary PGM (P5) of one slice; returns the pixel array."""
    img = slice_image(f, axis, index)
    rows, cols = img.shape
    atomic_write_bytes(path, f"P5\n{cols} {rows}\n255\n".encode("ascii") + img.tobytes())
    return img


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    cols, rows, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    pixels = raw[pos + 1 :]
    if len(pixels) != rows * cols:
        raise FormatError(f"{path}: expected {rows * cols} pixels, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(rows, cols)
