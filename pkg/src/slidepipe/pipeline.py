"""Bounded prefetching patch pipeline.

A worker pool turns seeded coordinate tickets into extracted, augmented
patches and assembles them into batches behind a bounded buffer that one
consumer drains.  Randomness is centralized: every ticket's draws come
from a single seeded stream consumed in ticket order, so in ordered mode
the delivered bytes are a pure function of (seed, config) no matter how
many workers run or how the OS schedules them.

Streaming is epoch-less: ``total_steps`` batches are delivered and no
notion of a pass over the data exists anywhere.
"""

import hashlib
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, apply_augmentation, draw_augmentation
from .errors import (
    EndOfStream,
    NoSlides,
    NoTissue,
    SlidepipeError,
    WorkerFailure,
)
from .mask import (
    DEFAULT_BLUR_RADIUS,
    DEFAULT_ERODE_ITERS,
    TissueMask,
    build_mask,
    decode_mask_png,
    encode_mask_png,
    read_mask_text,
)
from .sampler import (
    MultiSlideSampler,
    PatchSpec,
    build_index,
    extract_patch,
)
from .tiff import Patch, SlidePyramid, open_slide

SLIDE_SUFFIXES = (".tif", ".tiff")
_POLL_S = 0.05
_HASH_KEY = "slide_hash"


@dataclass
class PipelineConfig:
    slide_dir: Path
    spec: PatchSpec
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    batch_size: int = 8
    workers: int = 2
    prefetch_depth: int = 4
    total_steps: int = 100
    ordered: bool = True
    slide_weighting: str = "area"
    patch_anchor: str = "center"
    mask_dir: Path | None = None
    blur_radius: int = DEFAULT_BLUR_RADIUS
    erode_iters: int = DEFAULT_ERODE_ITERS

    def __post_init__(self):
        self.slide_dir = Path(self.slide_dir)
        if self.mask_dir is not None:
            self.mask_dir = Path(self.mask_dir)
        if self.patch_anchor not in ("center", "corner"):
            raise ValueError(f"unknown patch_anchor {self.patch_anchor!r}")
        for name in ("batch_size", "workers", "prefetch_depth", "total_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class Batch:
    patches: list[Patch]
    step: int


@dataclass
class PipelineStats:
    batches_delivered: int = 0
    consumer_blocked_time: float = 0.0
    producer_idle_time: float = 0.0
    mean_batch_latency: float = 0.0
    peak_buffered: int = 0


def batch_checksum(batch: Batch) -> str:
    """SHA-256 over the concatenated pixel bytes of a batch, in order."""
    digest = hashlib.sha256()
    for patch in batch.patches:
        digest.update(np.ascontiguousarray(patch.pixels).tobytes())
    return digest.hexdigest()


def discover_slides(slide_dir: Path) -> list[Path]:
    """Slide files under a directory, sorted by name for determinism."""
    slide_dir = Path(slide_dir)
    paths = sorted(p for p in slide_dir.iterdir()
                   if p.suffix.lower() in SLIDE_SUFFIXES and p.is_file())
    if not paths:
        raise NoSlides(f"no slides in {slide_dir}")
    return paths


def slide_content_hash(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(1 << 20):
            digest.update(chunk)
    return digest.hexdigest()


def load_or_build_mask(slide_path: Path, slide: SlidePyramid,
                       mask_dir: Path | None = None,
                       blur_radius: int = DEFAULT_BLUR_RADIUS,
                       erode_iters: int = DEFAULT_ERODE_ITERS):
    """Disk-cached tissue mask keyed by slide content hash.

    Returns (mask, cached, bytes_written); a stale or unreadable cache
    file is silently rebuilt."""
    directory = Path(mask_dir) if mask_dir is not None else slide_path.parent
    directory.mkdir(parents=True, exist_ok=True)
    mask_path = directory / f"{slide_path.stem}.mask.png"
    content_hash = slide_content_hash(slide_path)
    if mask_path.exists():
        data = mask_path.read_bytes()
        try:
            if read_mask_text(data).get(_HASH_KEY) == content_hash:
                return decode_mask_png(data), True, 0
        except SlidepipeError:
            pass
    mask = build_mask(slide, blur_radius, erode_iters)
    data = encode_mask_png(mask, {_HASH_KEY: content_hash})
    mask_path.write_bytes(data)
    return mask, False, len(data)


class PatchStream:
    """Live pipeline handle; create via :func:`start`."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.mask_bytes_written = 0
        slide_paths = discover_slides(config.slide_dir)
        self._slides: list[SlidePyramid] = []
        entries = []
        try:
            for path in slide_paths:
                slide = open_slide(path)
                self._slides.append(slide)
                config.spec.validate_for(slide)
                mask, _, written = load_or_build_mask(
                    path, slide, config.mask_dir,
                    config.blur_radius, config.erode_iters)
                self.mask_bytes_written += written
                if mask.tissue_pixel_count > 0:
                    entries.append((slide, build_index(mask)))
            if not entries:
                raise NoTissue("every slide mask is empty")
        except Exception:
            for slide in self._slides:
                slide.close()
            raise
        self._sampler = MultiSlideSampler(entries, config.slide_weighting)
        self._aug = config.augment.resolved(config.spec.patch_size_px)
        self._rng = np.random.default_rng(
            np.random.SeedSequence(config.spec.seed & 0xFFFFFFFFFFFFFFFF))

        self._total_tickets = config.total_steps * config.batch_size
        self._queue: queue.Queue[Batch] = queue.Queue(config.prefetch_depth)
        self._stop_event = threading.Event()
        self._stopped = False
        self._error: BaseException | None = None

        self._draw_lock = threading.Lock()
        self._tickets_issued = 0

        self._assembly_lock = threading.Lock()
        self._completed: dict[int, tuple[Patch, float]] = {}
        self._next_emit = 0
        self._current: list[Patch] = []
        self._current_first_grab = 0.0
        self._steps_assembled = 0

        self._stats_lock = threading.Lock()
        self._delivered = 0
        self._consumer_blocked = 0.0
        self._producer_idle = 0.0
        self._latency_sum = 0.0
        self._latency_count = 0
        self._peak_buffered = 0

        self._workers = [
            threading.Thread(target=self._worker_loop, daemon=True,
                             name=f"slidepipe-worker-{i}")
            for i in range(config.workers)
        ]
        for worker in self._workers:
            worker.start()

    # -- producer side -------------------------------------------------------

    def _worker_loop(self):
        cfg = self.config
        # Reorder-stage cap: a worker pauses instead of racing arbitrarily
        # far ahead of a slow head ticket.  The head ticket is never the
        # paused one (it is either unissued, which empties the stage, or
        # already running on some worker), so this cannot deadlock.
        reorder_cap = cfg.batch_size * (cfg.prefetch_depth + 1) + cfg.workers
        try:
            while not self._stop_event.is_set() and self._error is None:
                if cfg.ordered and len(self._completed) >= reorder_cap:
                    time.sleep(0.001)
                    continue
                with self._draw_lock:
                    if self._tickets_issued >= self._total_tickets:
                        return
                    ticket = self._tickets_issued
                    self._tickets_issued += 1
                    _, slide, coord = self._sampler.draw(self._rng)
                    draw = draw_augmentation(self._aug, self._rng,
                                             cfg.spec.patch_size_px)
                grabbed_at = time.perf_counter()
                patch = extract_patch(slide, coord, cfg.spec,
                                      cfg.patch_anchor)
                pixels = apply_augmentation(patch.pixels, draw)
                self._submit(ticket,
                             Patch(pixels, patch.origin, patch.slide_id),
                             grabbed_at)
        except BaseException as exc:
            with self._stats_lock:
                if self._error is None:
                    self._error = exc

    def _submit(self, ticket: int, patch: Patch, grabbed_at: float):
        batch_size = self.config.batch_size
        with self._assembly_lock:
            if self.config.ordered:
                self._completed[ticket] = (patch, grabbed_at)
                while self._next_emit in self._completed:
                    ready, grab = self._completed.pop(self._next_emit)
                    if not self._current:
                        self._current_first_grab = grab
                    self._current.append(ready)
                    self._next_emit += 1
                    if len(self._current) == batch_size:
                        step = (self._next_emit - 1) // batch_size
                        batch = Batch(self._current, step)
                        self._current = []
                        self._enqueue(batch, self._current_first_grab)
            else:
                if not self._current:
                    self._current_first_grab = grabbed_at
                self._current.append(patch)
                if len(self._current) == batch_size:
                    batch = Batch(self._current, self._steps_assembled)
                    self._steps_assembled += 1
                    self._current = []
                    self._enqueue(batch, self._current_first_grab)

    def _enqueue(self, batch: Batch, first_grab: float):
        start = time.perf_counter()
        while not self._stop_event.is_set() and self._error is None:
            try:
                self._queue.put(batch, timeout=_POLL_S)
                break
            except queue.Full:
                continue
        done = time.perf_counter()
        with self._stats_lock:
            self._producer_idle += done - start
            self._latency_sum += done - first_grab
            self._latency_count += 1
            self._peak_buffered = max(self._peak_buffered, self._queue.qsize())

    # -- consumer side -------------------------------------------------------

    def next(self) -> Batch:
        """Next batch; blocks only while the buffer is empty."""
        if self._delivered >= self.config.total_steps:
            raise EndOfStream(f"{self.config.total_steps} steps delivered")
        start = time.perf_counter()
        while True:
            if self._error is not None:
                self._stop_event.set()
                raise WorkerFailure(
                    f"pipeline worker failed: {self._error!r}") from self._error
            if self._stopped:
                raise EndOfStream("stream stopped")
            try:
                batch = self._queue.get(timeout=_POLL_S)
                break
            except queue.Empty:
                continue
        with self._stats_lock:
            self._consumer_blocked += time.perf_counter() - start
            self._delivered += 1
        return batch

    def __iter__(self):
        while True:
            try:
                yield self.next()
            except EndOfStream:
                return

    def stats(self) -> PipelineStats:
        with self._stats_lock:
            mean_latency = (self._latency_sum / self._latency_count
                            if self._latency_count else 0.0)
            return PipelineStats(
                batches_delivered=self._delivered,
                consumer_blocked_time=self._consumer_blocked,
                producer_idle_time=self._producer_idle,
                mean_batch_latency=mean_latency,
                peak_buffered=self._peak_buffered,
            )

    def stop(self) -> PipelineStats:
        """Drain workers, release slide handles, return final stats.

        Idempotent; interrupts producers blocked on a full buffer."""
        self._stopped = True
        self._stop_event.set()
        deadline = time.monotonic() + 30.0
        while any(w.is_alive() for w in self._workers):
            try:
                self._queue.get_nowait()
            except queue.Empty:
                time.sleep(0.005)
            if time.monotonic() > deadline:  # pragma: no cover - safety net
                break
        for worker in self._workers:
            worker.join(timeout=5.0)
        for slide in self._slides:
            slide.close()
        return self.stats()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def start(config: PipelineConfig) -> PatchStream:
    """Open every slide, build or load masks, and begin prefetching
    immediately (before the first ``next()`` call)."""
    return PatchStream(config)
