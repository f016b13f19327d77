"""Command-line interface.

Exit codes: 0 success, 1 validation error (bad values, parameters or
arguments), 2 I/O error (missing or malformed files).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import angiography, features, io, phantom, segmentation, spectral
from .errors import ValidationError
from .volume import FeatureVolume, MagnitudeSeries, Mask, VelocitySeries

log = logging.getLogger("wmflow")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _load(path, expected=None, label=None):
    """Read a container, or a NIfTI-1 file when the suffix says so."""
    p = Path(path)
    if p.suffix in (".nii", ".hdr"):
        target = {Mask: "mask", FeatureVolume: "feature", MagnitudeSeries: "magnitude"}.get(expected, "auto")
        vol = io.read_nifti1(p, as_=target, label=label)
    else:
        vol = io.read_container(p)
    if expected is not None and not isinstance(vol, expected):
        raise ValidationError(f"{path}: expected {expected.__name__}, found {type(vol).__name__}")
    return vol


def _feature_input(path) -> FeatureVolume:
    return _load(path, FeatureVolume)


def _normalized(vol: FeatureVolume) -> FeatureVolume:
    return vol if vol.normalized else features.normalize_minmax(vol)


def _write_json(data, out) -> None:
    text = json.dumps(data, indent=2) + "\n"
    if out:
        io.atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


# -- subcommands ------------------------------------------------------------


def cmd_phantom(args) -> None:
    spec = phantom.load_spec(args.spec) if args.spec else phantom.PhantomSpec()
    if args.seed is not None:
        spec = spec.replace(rng_seed=args.seed)
    data = phantom.generate(spec, threads=args.threads)
    out = Path(args.out)
    io.write_container(data.magnitude, out / "magnitude")
    io.write_container(data.velocity, out / "velocity")
    io.write_container(data.mask, out / "mask")
    io.atomic_write_text(out / "phantom.ini", phantom.spec_to_text(spec))
    log.info("phantom written to %s (%d lumen voxels)", out, data.mask.count)


def cmd_wmf(args) -> None:
    vel = _load(args.velocity, VelocitySeries)
    comps = spectral.wmf_components(vel, threads=args.threads)
    fused = spectral.wmf_min(*comps)
    io.write_container(fused, args.out)
    if args.per_component:
        header, _ = io.container_paths(args.out)
        stem = header.with_suffix("")
        for name, vol in zip("uvw", comps):
            io.write_container(vol, stem.with_name(f"{stem.name}_{name}"))


def cmd_pcmra(args) -> None:
    mag = _load(args.magnitude, MagnitudeSeries)
    vel = _load(args.velocity, VelocitySeries)
    if args.systolic:
        vol = angiography.pcmra_systolic(mag, vel, args.gamma)
        log.info("systolic frame: %d", angiography.detect_systolic_frame(vel))
    else:
        vol = angiography.pcmra_frame(mag, vel, args.frame, args.gamma)
    io.write_container(vol, args.out)


def cmd_combine(args) -> None:
    inputs = {}
    if args.wmf:
        inputs["wmf"] = _normalized(_feature_input(args.wmf))
    if args.magnitude:
        mag = _load(args.magnitude, MagnitudeSeries)
        if args.frame is None:
            raise ValidationError("--frame is required with --magnitude")
        inputs["mag_t"] = features.magnitude_frame(mag, args.frame)
    if args.pcmra_t:
        inputs["pcmra_t"] = _normalized(_feature_input(args.pcmra_t))
    if args.pcmra_sys:
        inputs["pcmra_sys"] = _normalized(_feature_input(args.pcmra_sys))
    io.write_container(features.combine(args.formula, **inputs), args.out)


def cmd_segment(args) -> None:
    feat = _feature_input(args.feature)
    if args.normalize:
        feat = _normalized(feat)
    gt = _load(args.gt, Mask, label=args.label)
    result = segmentation.sweep_optimal_threshold(feat, gt)
    if args.out_csv:
        io.atomic_write_text(args.out_csv, result.to_csv())
    if args.out_mask:
        io.write_container(segmentation.apply_threshold(feat, result.best_threshold), args.out_mask)
    _write_json(result.best_metrics.as_dict(), args.out_json)


def cmd_eval(args) -> None:
    pred = _load(args.pred, Mask, label=args.label)
    gt = _load(args.gt, Mask, label=args.label)
    _write_json(segmentation.evaluate(pred, gt).as_dict(), args.out)


def _channel(spec: str):
    path, _, frame = spec.partition("@")
    vol = _load(path)
    t = int(frame) if frame else None
    if isinstance(vol, VelocitySeries):
        if t is None:
            raise ValidationError(f"{spec}: a velocity channel needs @frame")
        return angiography.speed_frame(vol, t), t
    if isinstance(vol, MagnitudeSeries):
        if t is None:
            raise ValidationError(f"{spec}: a magnitude channel needs @frame")
        return FeatureVolume(vol.meta, vol.frame(t), "magnitude"), t
    if isinstance(vol, FeatureVolume):
        return vol, t
    raise ValidationError(f"{spec}: cannot use {type(vol).__name__} as a channel")


def cmd_export_channels(args) -> None:
    pairs = [_channel(s) for s in args.channel]
    if not pairs:
        raise ValidationError("no channels given")
    stack = io.export_channels([v for v, _ in pairs], args.out, frames=[t for _, t in pairs])
    log.info("wrote %d channels: %s", len(stack.kinds), ", ".join(stack.kinds))


def cmd_render(args) -> None:
    vol = _load(args.input)
    if isinstance(vol, MagnitudeSeries):
        vol = FeatureVolume(vol.meta, vol.frame(args.frame), "magnitude")
    elif isinstance(vol, VelocitySeries):
        vol = angiography.speed_frame(vol, args.frame)
    elif not isinstance(vol, (FeatureVolume, Mask)):
        raise ValidationError(f"cannot render {type(vol).__name__}")
    io.render_slice(vol, args.axis, args.index, args.out)


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wmflow", description="WMF and PC-MRA features for 4D flow MRI segmentation.")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (output does not depend on it)")
    parser.add_argument("--seed", type=int, default=None, help="phantom noise seed (overrides the config file)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a synthetic phantom")
    p.add_argument("--spec", help="phantom config file ([phantom] key = value)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("wmf", help="velocity container -> min-fused WMF volume")
    p.add_argument("--velocity", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-component", action="store_true", help="also write the u, v, w volumes")
    p.set_defaults(func=cmd_wmf)

    p = sub.add_parser("pcmra", help="PC-MRA at one frame or at systole")
    p.add_argument("--magnitude", required=True)
    p.add_argument("--velocity", required=True)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--frame", type=int)
    which.add_argument("--systolic", action="store_true")
    p.add_argument("--gamma", type=float, default=angiography.DEFAULT_GAMMA)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pcmra)

    p = sub.add_parser("combine", help="build a normalized feature combination")
    p.add_argument("--formula", required=True, choices=[c.value for c in features.CombinationId])
    p.add_argument("--wmf")
    p.add_argument("--magnitude")
    p.add_argument("--frame", type=int)
    p.add_argument("--pcmra-t")
    p.add_argument("--pcmra-sys")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("segment", help="optimal-threshold sweep against a ground truth")
    p.add_argument("--feature", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--label", type=int, help="label value of the vessel in a NIfTI mask")
    p.add_argument("--normalize", action="store_true", help="min-max normalize the feature first")
    p.add_argument("--out-csv")
    p.add_argument("--out-mask")
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="metrics of a predicted mask")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--label", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-channels", help="stack volumes as network input channels")
    p.add_argument("--channel", action="append", default=[], help="container path, with @frame for series")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_channels)

    p = sub.add_parser("render", help="write one slice as an 8-bit PGM")
    p.add_argument("--input", required=True)
    p.add_argument("--axis", default="z", choices=["x", "y", "z"])
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--frame", type=int, default=0, help="frame for series inputs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            parser.error("--threads must be >= 1")
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"wmflow: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"wmflow: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
