"""Command-line surface.

Subcommands: ``mask``, ``chop``, ``stream``, ``bench``, ``synth``, ``grid``.
Each run prints one JSON report (or per-slide summary lines for ``mask``)
on stdout; progress and errors go to stderr.  Exit codes: 0 success,
1 usage error, 2 runtime failure.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from . import kernels
from .bench import DEFAULT_CHOP_TILE_PX, run_bench, run_chop
from .config import config_from_mapping, parse_config_file
from .errors import NoSlides, SlidepipeError
from .pipeline import (
    batch_checksum,
    discover_slides,
    load_or_build_mask,
    start,
)
from .pngio import encode_gray2, encode_rgb8
from .sampler import PatchSpec, extract_patch, grid_coordinates
from .synth import MIN_DIMENSION, synth_slide
from .tiff import open_slide

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _bool_flag(value: str) -> bool:
    text = value.strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slidepipe",
                     description="On-the-fly tissue patch streaming from "
                                 "pyramidal whole-slide TIFFs.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", type=Path, default=None,
                        help="key=value config file")
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--prefetch-depth", type=int, default=None)
    common.add_argument("--batch-size", type=int, default=None)
    common.add_argument("--patch-size", type=int, default=None)
    common.add_argument("--downsample", type=float, default=None)
    common.add_argument("--steps", type=int, default=None,
                        help="total batches to deliver")
    common.add_argument("--ordered", type=_bool_flag, default=None)
    common.add_argument("--consumer-ms", type=float, default=None,
                        help="simulated consumer sleep per batch")
    common.add_argument("--mask-dir", type=Path, default=None)
    common.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", parents=[common],
                       help="build (or reuse) tissue masks for a directory")
    p.add_argument("slide_dir", type=Path)
    p.add_argument("--blur-radius", type=int, default=2)
    p.add_argument("--erode-iters", type=int, default=1)

    p = sub.add_parser("chop", parents=[common],
                       help="pre-chop tissue tiles to disk (baseline path)")
    p.add_argument("slide_dir", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--tile-px", type=int, default=DEFAULT_CHOP_TILE_PX)

    p = sub.add_parser("stream", parents=[common],
                       help="run the pipeline against a simulated consumer")
    p.add_argument("slide_dir", type=Path, nargs="?", default=None)

    p = sub.add_parser("bench", parents=[common],
                       help="compare pre-chop vs on-the-fly on one slide set")
    p.add_argument("slide_dir", type=Path)
    p.add_argument("work_dir", type=Path)
    p.add_argument("--tile-px", type=int, default=DEFAULT_CHOP_TILE_PX)

    p = sub.add_parser("synth", parents=[common],
                       help="generate synthetic slides with ground truth")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--n-slides", type=int, default=4)
    p.add_argument("--size", type=int, default=2048)
    p.add_argument("--blobs", type=int, default=5)

    p = sub.add_parser("grid", parents=[common],
                       help="extract the deterministic prediction grid")
    p.add_argument("slide", type=Path)
    p.add_argument("out_dir", type=Path)
    return parser


def _pipeline_config(args, slide_dir=None):
    mapping = {}
    if args.config is not None:
        mapping.update(parse_config_file(args.config))
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        mapping[key.strip()] = value.strip()
    overrides = {
        "slide_dir": slide_dir,
        "seed": args.seed,
        "workers": args.workers,
        "prefetch_depth": args.prefetch_depth,
        "batch_size": args.batch_size,
        "patch_size_px": args.patch_size,
        "downsample": args.downsample,
        "total_steps": args.steps,
        "ordered": args.ordered,
        "mask_dir": args.mask_dir,
    }
    for key, value in overrides.items():
        if value is not None:
            mapping[key] = value
    return config_from_mapping(mapping)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_mask(args) -> int:
    try:
        paths = discover_slides(args.slide_dir)
    except NoSlides:
        _log("no slides")
        return EXIT_RUNTIME
    failures = 0
    for path in paths:
        try:
            with open_slide(path) as slide:
                mask, cached, _ = load_or_build_mask(
                    path, slide, args.mask_dir,
                    args.blur_radius, args.erode_iters)
            fraction = mask.tissue_pixel_count / (mask.width_px * mask.height_px)
            note = " (cached)" if cached else ""
            print(f"{path.stem} tissue_fraction={fraction:.4f}{note}")
        except SlidepipeError as exc:
            failures += 1
            _log(f"{path.name}: {exc}")
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_chop(args) -> int:
    report = run_chop(args.slide_dir, args.out_dir, args.tile_px,
                      mask_dir=args.mask_dir)
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def cmd_stream(args) -> int:
    config = _pipeline_config(args, args.slide_dir)
    consumer_s = (args.consumer_ms or 0.0) / 1000.0
    kernels.warmup()
    stream = start(config)
    checksums = []
    try:
        for batch in stream:
            checksums.append(batch_checksum(batch))
            if consumer_s > 0:
                time.sleep(consumer_s)
    finally:
        stats = stream.stop()
    print(json.dumps({
        "batches_delivered": stats.batches_delivered,
        "consumer_blocked_time_s": stats.consumer_blocked_time,
        "producer_idle_time_s": stats.producer_idle_time,
        "mean_batch_latency_s": stats.mean_batch_latency,
        "peak_buffered": stats.peak_buffered,
        "batch_size": config.batch_size,
        "batch_checksums": checksums,
    }))
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _pipeline_config(args, args.slide_dir)
    report = run_bench(args.slide_dir, args.work_dir, config,
                       tile_px=args.tile_px, consumer_ms=args.consumer_ms)
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.size < MIN_DIMENSION:
        _log(f"synth: size must be >= {MIN_DIMENSION}")
        return EXIT_USAGE
    if args.n_slides < 0:
        _log("synth: n_slides must be >= 0")
        return EXIT_USAGE
    args.out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    written = []
    for i in range(args.n_slides):
        name = f"synth_{i:04d}"
        path = args.out_dir / f"{name}.tif"
        _, truth = synth_slide(path, seed + i, args.size, args.size,
                               args.blobs)
        truth_png = encode_gray2(truth.astype("uint8") * 3,
                                 {"mask_downsample": "1.0"})
        (args.out_dir / f"{name}.truth.png").write_bytes(truth_png)
        written.append(name)
        _log(f"wrote {name} ({args.size}x{args.size}, {args.blobs} blobs)")
    print(json.dumps({"slides": written, "size": args.size, "seed": seed}))
    return EXIT_OK


def cmd_grid(args) -> int:
    patch_size = args.patch_size if args.patch_size is not None else 256
    downsample = args.downsample if args.downsample is not None else 1.0
    spec = PatchSpec(patch_size, downsample,
                     args.seed if args.seed is not None else 0)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open_slide(args.slide) as slide:
        mask, _, _ = load_or_build_mask(args.slide, slide, args.mask_dir)
        coords = grid_coordinates(slide, mask, spec)
        stride = int(round(patch_size * downsample))
        count = 0
        for x, y in coords:
            center = (x + stride // 2, y + stride // 2)
            patch = extract_patch(slide, center, spec)
            out = args.out_dir / f"{slide.slide_id}_{x}_{y}.png"
            out.write_bytes(encode_rgb8(patch.pixels))
            count += 1
    print(json.dumps({"patches_written": count, "slide": slide.slide_id}))
    return EXIT_OK


_COMMANDS = {
    "mask": cmd_mask,
    "chop": cmd_chop,
    "stream": cmd_stream,
    "bench": cmd_bench,
    "synth": cmd_synth,
    "grid": cmd_grid,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (ValueError,) as exc:
        _log(f"slidepipe {args.command}: {exc}")
        return EXIT_USAGE
    except SlidepipeError as exc:
        _log(f"slidepipe {args.command}: {exc}")
        return EXIT_RUNTIME
    except OSError as exc:
        _log(f"slidepipe {args.command}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
