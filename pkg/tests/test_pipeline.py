import hashlib
import time

import numpy as np
import pytest

from slidepipe import (
    AugmentConfig,
    EndOfStream,
    NoSlides,
    NoTissue,
    PatchSpec,
    PipelineConfig,
    WorkerFailure,
    batch_checksum,
    load_or_build_mask,
    open_slide,
    start,
    synth_slide,
    write_pyramid,
)


def _config(slide_dir, mask_dir, **kwargs):
    defaults = dict(
        slide_dir=slide_dir,
        spec=PatchSpec(128, 4.0, seed=99),
        augment=AugmentConfig(),
        batch_size=4,
        workers=2,
        prefetch_depth=3,
        total_steps=5,
        ordered=True,
        mask_dir=mask_dir,
    )
    defaults.update(kwargs)
    return PipelineConfig(**defaults)


def _checksums(config):
    stream = start(config)
    try:
        return [batch_checksum(b) for b in stream]
    finally:
        stream.stop()


class TestStart:
    def test_empty_dir_raises(self, tmp_path):
        with pytest.raises(NoSlides):
            start(_config(tmp_path, tmp_path / "masks"))

    def test_blank_slide_only_raises_no_tissue(self, tmp_path):
        white = np.full((512, 512, 3), 255, np.uint8)
        write_pyramid([white], 256, tmp_path / "white.tif")
        with pytest.raises(NoTissue):
            start(_config(tmp_path, tmp_path / "masks"))

    def test_prefetch_fills_buffer_before_next(self, synth_dir):
        d, _ = synth_dir
        config = _config(d, d / "masks", prefetch_depth=2, total_steps=10)
        stream = start(config)
        try:
            deadline = time.monotonic() + 10
            while stream._queue.qsize() < 2 and time.monotonic() < deadline:
                time.sleep(0.01)
            assert stream._queue.qsize() == 2  # full without any next() call
        finally:
            stream.stop()

    def test_masks_written_then_cached(self, tmp_path):
        synth_slide(tmp_path / "s.tif", 3, 512, 512, 2)
        mask_dir = tmp_path / "masks"
        config = _config(tmp_path, mask_dir, total_steps=1, batch_size=1)
        stream = start(config)
        written = stream.mask_bytes_written
        stream.stop()
        assert written > 0
        assert (mask_dir / "s.mask.png").exists()
        stream = start(config)
        assert stream.mask_bytes_written == 0  # reused
        stream.stop()

    def test_stale_mask_cache_rebuilt(self, tmp_path):
        path, _ = synth_slide(tmp_path / "s.tif", 3, 512, 512, 2)
        with open_slide(path) as slide:
            _, cached, written = load_or_build_mask(path, slide,
                                                    tmp_path / "m")
            assert not cached and written > 0
            _, cached, written = load_or_build_mask(path, slide,
                                                    tmp_path / "m")
            assert cached and written == 0
        # overwrite the slide with different content: hash changes
        path2, _ = synth_slide(tmp_path / "s.tif", 4, 512, 512, 2)
        with open_slide(path2) as slide:
            _, cached, written = load_or_build_mask(path2, slide,
                                                    tmp_path / "m")
        assert not cached and written > 0


class TestNextAndStop:
    def test_delivers_exact_steps_then_end(self, synth_dir):
        d, _ = synth_dir
        stream = start(_config(d, d / "masks", total_steps=4))
        try:
            steps = [stream.next().step for _ in range(4)]
            assert steps == [0, 1, 2, 3]
            with pytest.raises(EndOfStream):
                stream.next()
        finally:
            stream.stop()

    def test_batch_shape_and_provenance(self, synth_dir):
        d, _ = synth_dir
        stream = start(_config(d, d / "masks", total_steps=2))
        try:
            batch = stream.next()
            assert len(batch.patches) == 4
            for p in batch.patches:
                assert p.pixels.shape == (128, 128, 3)
                assert p.pixels.dtype == np.uint8
                assert p.slide_id.startswith("synth_")
                assert p.origin.width_px >= 1
        finally:
            stream.stop()

    def test_stop_before_next(self, synth_dir):
        d, _ = synth_dir
        stream = start(_config(d, d / "masks"))
        stats = stream.stop()
        assert stats.batches_delivered == 0

    def test_stop_idempotent(self, synth_dir):
        d, _ = synth_dir
        stream = start(_config(d, d / "masks", total_steps=3))
        stream.next()
        s1 = stream.stop()
        s2 = stream.stop()
        assert s1.batches_delivered == s2.batches_delivered == 1

    def test_next_after_stop_raises_end(self, synth_dir):
        d, _ = synth_dir
        stream = start(_config(d, d / "masks", total_steps=5))
        stream.next()
        stream.stop()
        with pytest.raises(EndOfStream):
            stream.next()

    def test_buffer_never_exceeds_depth(self, synth_dir):
        d, _ = synth_dir
        config = _config(d, d / "masks", prefetch_depth=2, total_steps=12,
                         workers=4)
        stream = start(config)
        try:
            for batch in stream:
                time.sleep(0.01)  # let producers race ahead
            stats = stream.stats()
            assert stats.peak_buffered <= 2
            assert stats.batches_delivered == 12
        finally:
            stream.stop()

    def test_epoch_less_oversampling(self, synth_dir, tmp_path):
        # requested patches far exceed distinct tissue pixels: sampling is
        # with replacement and no epoch boundary exists anywhere
        d, _ = synth_dir
        config = _config(d, tmp_path / "masks",
                         spec=PatchSpec(32, 4.0, seed=1),
                         batch_size=16, total_steps=60)
        total_tissue = 0
        for path in sorted(d.glob("*.tif")):
            with open_slide(path) as slide:
                mask, _, _ = load_or_build_mask(path, slide,
                                                tmp_path / "masks")
                total_tissue += mask.tissue_pixel_count
        assert 60 * 16 > total_tissue  # strictly more patches than pixels
        stream = start(config)
        try:
            delivered = sum(1 for _ in stream)
        finally:
            stream.stop()
        assert delivered == 60

    def test_stats_monotone(self, synth_dir):
        d, _ = synth_dir
        stream = start(_config(d, d / "masks", total_steps=6))
        try:
            prev = stream.stats()
            for _ in range(6):
                stream.next()
                cur = stream.stats()
                assert cur.batches_delivered >= prev.batches_delivered
                assert cur.consumer_blocked_time >= prev.consumer_blocked_time
                assert cur.producer_idle_time >= prev.producer_idle_time
                prev = cur
        finally:
            stream.stop()


class TestDeterminism:
    def test_same_seed_same_checksums(self, synth_dir):
        d, _ = synth_dir
        c1 = _checksums(_config(d, d / "masks"))
        c2 = _checksums(_config(d, d / "masks"))
        assert c1 == c2

    def test_worker_count_invariance_ordered(self, synth_dir):
        d, _ = synth_dir
        base = _checksums(_config(d, d / "masks", workers=1))
        for workers in (2, 4):
            assert _checksums(_config(d, d / "masks", workers=workers)) == base

    def test_different_seed_differs(self, synth_dir):
        d, _ = synth_dir
        a = _checksums(_config(d, d / "masks"))
        b = _checksums(_config(d, d / "masks",
                               spec=PatchSpec(128, 4.0, seed=100)))
        assert a != b

    def test_unordered_patch_multiset_stable(self, synth_dir):
        d, _ = synth_dir

        def patch_hashes(workers):
            stream = start(_config(d, d / "masks", ordered=False,
                                   workers=workers, total_steps=6))
            sums, steps = [], []
            try:
                for batch in stream:
                    steps.append(batch.step)
                    for p in batch.patches:
                        sums.append(hashlib.sha256(p.pixels.tobytes())
                                    .hexdigest())
            finally:
                stream.stop()
            return sorted(sums), sorted(steps)

        s1, steps1 = patch_hashes(4)
        s2, steps2 = patch_hashes(1)
        assert s1 == s2
        assert steps1 == list(range(6))
        assert steps2 == list(range(6))


class TestFailure:
    def test_worker_error_surfaces_fast(self, synth_dir, monkeypatch):
        d, _ = synth_dir
        import slidepipe.pipeline as pl

        calls = {"n": 0}
        real = pl.extract_patch

        def flaky(slide, coord, spec, anchor="center"):
            calls["n"] += 1
            if calls["n"] == 7:
                raise RuntimeError("injected extraction fault")
            return real(slide, coord, spec, anchor)

        monkeypatch.setattr(pl, "extract_patch", flaky)
        stream = start(_config(d, d / "masks", total_steps=50, workers=2))
        try:
            with pytest.raises(WorkerFailure) as info:
                for _ in range(50):
                    stream.next()
            assert "injected extraction fault" in str(info.value)
        finally:
            stream.stop()

    def test_stream_survives_stop_under_error(self, synth_dir, monkeypatch):
        d, _ = synth_dir
        import slidepipe.pipeline as pl
        monkeypatch.setattr(pl, "extract_patch",
                            lambda *a: (_ for _ in ()).throw(RuntimeError("x")))
        stream = start(_config(d, d / "masks"))
        with pytest.raises(WorkerFailure):
            stream.next()
        stats = stream.stop()  # no deadlock, clean shutdown
        assert stats.batches_delivered == 0
