"""Benchmark harness: traditional pre-chop versus on-the-fly streaming.

The pre-chop path tiles every slide's tissue to PNG files on disk and then
"trains" by reading patches back from those tiles; the streaming path
starts cold (no masks on disk) and measures time-to-first-batch plus
steady-state step times.  Both paths see the same slides, the same patch
count, and the same simulated per-step consumer sleep standing in for GPU
compute.
"""

import math
import queue
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

from . import kernels
from .errors import IoFailure, NoTissue
from .pipeline import (
    PipelineConfig,
    batch_checksum,
    discover_slides,
    load_or_build_mask,
    start,
)
from .pngio import decode_rgb8, encode_rgb8
from .sampler import PatchSpec, grid_coordinates
from .tiff import open_slide

DEFAULT_CHOP_TILE_PX = 1200


@dataclass
class ChopReport:
    wall_time_s: float
    bytes_written: int
    patches_written: int
    slides_processed: int

    def to_dict(self) -> dict:
        return {
            "wall_time_s": self.wall_time_s,
            "bytes_written": self.bytes_written,
            "patches_written": self.patches_written,
            "slides_processed": self.slides_processed,
        }


@dataclass
class BenchReport:
    chop: ChopReport
    fetch_startup_s: float
    fetch_extra_bytes: int
    startup_speedup: float
    disk_ratio: float
    mean_step_s_prechop: float
    stdev_step_s_prechop: float
    mean_step_s_fetch: float
    stdev_step_s_fetch: float
    consumer_ms: float
    steps_timed: int

    def to_dict(self) -> dict:
        return {
            "chop": self.chop.to_dict(),
            "fetch_startup_s": self.fetch_startup_s,
            "fetch_extra_bytes": self.fetch_extra_bytes,
            "startup_speedup": self.startup_speedup,
            "disk_ratio": self.disk_ratio,
            "mean_step_s_prechop": self.mean_step_s_prechop,
            "stdev_step_s_prechop": self.stdev_step_s_prechop,
            "mean_step_s_fetch": self.mean_step_s_fetch,
            "stdev_step_s_fetch": self.stdev_step_s_fetch,
            "consumer_ms": self.consumer_ms,
            "steps_timed": self.steps_timed,
        }


def _mean_stdev(values) -> tuple[float, float]:
    if not values:
        return 0.0, 0.0
    mean = sum(values) / len(values)
    if len(values) < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)


def run_chop(slide_dir, out_dir, tile_px: int = DEFAULT_CHOP_TILE_PX,
             mask_dir=None, blur_radius: int = 2, erode_iters: int = 1,
             zlib_level: int = 6) -> ChopReport:
    """Pre-chop every slide: write each tissue-intersecting level-0 tile
    as one PNG under ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    t0 = time.perf_counter()
    bytes_written = 0
    patches_written = 0
    slides = 0
    for path in discover_slides(slide_dir):
        with open_slide(path) as slide:
            mask, _, _ = load_or_build_mask(path, slide, mask_dir,
                                            blur_radius, erode_iters)
            slides += 1
            if mask.tissue_pixel_count == 0:
                continue
            spec = PatchSpec(tile_px, 1.0)
            try:
                coords = grid_coordinates(slide, mask, spec)
            except NoTissue:
                continue
            for x, y in coords:
                patch = slide.read_region(0, x, y, tile_px, tile_px)
                data = encode_rgb8(patch.pixels, zlib_level=zlib_level)
                tile_path = out_dir / f"{slide.slide_id}_{x}_{y}.png"
                try:
                    tile_path.write_bytes(data)
                except OSError as exc:
                    raise IoFailure(str(exc)) from exc
                bytes_written += len(data)
                patches_written += 1
    return ChopReport(time.perf_counter() - t0, bytes_written,
                      patches_written, slides)


class _PrechopReader:
    """Background reader mimicking a training loader over chopped tiles:
    decodes tile PNGs, slices them into patches, batches them into a
    bounded buffer."""

    def __init__(self, tile_files, patch_size, batch_size, total_steps,
                 prefetch_depth):
        self._files = list(tile_files)
        if not self._files:
            raise NoTissue("no chopped tiles to read back")
        self._patch_size = patch_size
        self._batch_size = batch_size
        self._total = total_steps
        self._queue: queue.Queue = queue.Queue(prefetch_depth)
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _patches(self):
        while True:
            for path in self._files:
                pixels, _ = decode_rgb8(path.read_bytes())
                p = self._patch_size
                for y in range(0, pixels.shape[0] - p + 1, p):
                    for x in range(0, pixels.shape[1] - p + 1, p):
                        yield pixels[y:y + p, x:x + p]

    def _run(self):
        batch = []
        produced = 0
        for patch in self._patches():
            batch.append(patch)
            if len(batch) == self._batch_size:
                self._queue.put(batch)
                batch = []
                produced += 1
                if produced >= self._total:
                    return

    def next(self):
        return self._queue.get()


def run_prechop_steps(chop_dir, patch_size, batch_size, total_steps,
                      consumer_ms: float, prefetch_depth: int = 4,
                      warmup: int = 0):
    """Simulated training over chopped tiles; returns (mean, stdev) of the
    per-step seconds after ``warmup`` steps."""
    tiles = sorted(Path(chop_dir).glob("*.png"))
    reader = _PrechopReader(tiles, patch_size, batch_size, total_steps,
                            prefetch_depth)
    times = []
    for step in range(total_steps):
        t0 = time.perf_counter()
        reader.next()
        if consumer_ms > 0:
            time.sleep(consumer_ms / 1000.0)
        if step >= warmup:
            times.append(time.perf_counter() - t0)
    return _mean_stdev(times)


def run_fetch(config: PipelineConfig, consumer_ms: float, warmup: int):
    """Cold-start streaming run.  Returns (startup_s, extra_bytes, mean,
    stdev, final stats, checksums)."""
    t0 = time.perf_counter()
    stream = start(config)
    try:
        first = stream.next()
        startup_s = time.perf_counter() - t0
        checksums = [batch_checksum(first)]
        times = []
        for step in range(1, config.total_steps):
            t1 = time.perf_counter()
            batch = stream.next()
            if consumer_ms > 0:
                time.sleep(consumer_ms / 1000.0)
            if step >= warmup:
                times.append(time.perf_counter() - t1)
            checksums.append(batch_checksum(batch))
        mean, stdev = _mean_stdev(times)
        extra = stream.mask_bytes_written
    finally:
        stats = stream.stop()
    return startup_s, extra, mean, stdev, stats, checksums


def calibrate_producer_batch_s(config: PipelineConfig, mask_dir,
                               steps: int = 10) -> float:
    """Mean seconds per batch with a consumer that never sleeps, measured
    on a short throwaway run (its masks go to a scratch dir)."""
    cal = replace(config, total_steps=steps, mask_dir=Path(mask_dir))
    stream = start(cal)
    try:
        stream.next()  # exclude startup from the rate estimate
        t0 = time.perf_counter()
        for _ in range(steps - 1):
            stream.next()
        return (time.perf_counter() - t0) / max(1, steps - 1)
    finally:
        stream.stop()


def run_bench(slide_dir, work_dir, config: PipelineConfig,
              tile_px: int = DEFAULT_CHOP_TILE_PX,
              consumer_ms: float | None = None) -> BenchReport:
    """Full comparison on one slide set; see module docstring."""
    work_dir = Path(work_dir)
    kernels.warmup()

    chop = run_chop(slide_dir, work_dir / "chopped", tile_px,
                    mask_dir=work_dir / "chop_masks",
                    blur_radius=config.blur_radius,
                    erode_iters=config.erode_iters)

    if consumer_ms is None:
        producer_s = calibrate_producer_batch_s(
            config, work_dir / "calib_masks")
        consumer_ms = 2.0 * 1000.0 * producer_s

    warmup_steps = config.prefetch_depth
    fetch_cfg = replace(config, mask_dir=work_dir / "fetch_masks")
    startup_s, extra_bytes, fetch_mean, fetch_stdev, _, _ = run_fetch(
        fetch_cfg, consumer_ms, warmup_steps)

    pre_mean, pre_stdev = run_prechop_steps(
        work_dir / "chopped", config.spec.patch_size_px, config.batch_size,
        config.total_steps, consumer_ms, config.prefetch_depth,
        warmup_steps)

    return BenchReport(
        chop=chop,
        fetch_startup_s=startup_s,
        fetch_extra_bytes=extra_bytes,
        startup_speedup=chop.wall_time_s / startup_s if startup_s > 0
        else float("inf"),
        disk_ratio=chop.bytes_written / extra_bytes if extra_bytes > 0
        else float("inf"),
        mean_step_s_prechop=pre_mean,
        stdev_step_s_prechop=pre_stdev,
        mean_step_s_fetch=fetch_mean,
        stdev_step_s_fetch=fetch_stdev,
        consumer_ms=consumer_ms,
        steps_timed=max(0, config.total_steps - 1 - warmup_steps),
    )
