import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from slidepipe import (
    Compression,
    InvalidPyramid,
    MalformedHeader,
    OutOfBounds,
    TruncatedFile,
    UnsupportedTag,
    open_slide,
    write_pyramid,
)
from slidepipe.kernels import block_mean_rgb


def _random_pyramid(rng, w0, h0, n_levels, step=2):
    levels = [rng.integers(0, 256, (h0, w0, 3), dtype=np.uint8)]
    for _ in range(n_levels - 1):
        h, w = levels[-1].shape[:2]
        levels.append(block_mean_rgb(levels[-1], step))
    return levels


def _write_mm_single_tile(path, pixels):
    """Minimal big-endian (MM) file: one uncompressed level, one tile."""
    h, w = pixels.shape[:2]
    raw = pixels.tobytes()
    ifd_off = 8
    bits_off = ifd_off + 2 + 10 * 12 + 4
    data_off = bits_off + 6
    entries = [
        (256, 4, 1, struct.pack(">I", w)),
        (257, 4, 1, struct.pack(">I", h)),
        (258, 3, 3, struct.pack(">I", bits_off)),
        (259, 3, 1, struct.pack(">HH", 1, 0)),
        (262, 3, 1, struct.pack(">HH", 2, 0)),
        (277, 3, 1, struct.pack(">HH", 3, 0)),
        (322, 4, 1, struct.pack(">I", w)),
        (323, 4, 1, struct.pack(">I", h)),
        (324, 4, 1, struct.pack(">I", data_off)),
        (325, 4, 1, struct.pack(">I", len(raw))),
    ]
    buf = struct.pack(">2sHI", b"MM", 42, ifd_off)
    buf += struct.pack(">H", len(entries))
    for tag, typ, cnt, val in entries:
        buf += struct.pack(">HHI", tag, typ, cnt) + val
    buf += struct.pack(">I", 0)
    buf += struct.pack(">3H", 8, 8, 8)
    buf += raw
    path.write_bytes(buf)


class TestOpenSlide:
    def test_round_trip_two_levels(self, tmp_path, rng):
        levels = _random_pyramid(rng, 512, 512, 2, step=4)
        path = write_pyramid(levels, 256, tmp_path / "two.tif")
        with open_slide(path) as slide:
            assert [lv.downsample for lv in slide.levels] == [1.0, 4.0]
            assert slide.slide_id == "two"
            assert slide.thumbnail_level == 1
            for i, src in enumerate(levels):
                got = slide.read_region(i, 0, 0, src.shape[1], src.shape[0])
                assert np.array_equal(got.pixels, src)

    def test_minimal_single_level_uncompressed(self, tmp_path, rng):
        src = rng.integers(0, 256, (256, 256, 3), dtype=np.uint8)
        path = write_pyramid([src], 256, tmp_path / "one.tif", "none")
        with open_slide(path) as slide:
            assert len(slide.levels) == 1
            info = slide.levels[0]
            assert info.downsample == 1.0
            assert info.tiles_across * info.tiles_down == 1
            assert info.compression is Compression.NONE

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.tif"
        path.write_bytes(b"II\x2b\x00" + b"\x00" * 16)
        with pytest.raises(MalformedHeader):
            open_slide(path)

    def test_bad_byte_order_rejected(self, tmp_path):
        path = tmp_path / "bad.tif"
        path.write_bytes(b"XX\x2a\x00" + b"\x00" * 16)
        with pytest.raises(MalformedHeader):
            open_slide(path)

    def test_big_endian_read(self, tmp_path, rng):
        src = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        path = tmp_path / "mm.tif"
        _write_mm_single_tile(path, src)
        with open_slide(path) as slide:
            got = slide.read_region(0, 0, 0, 64, 64)
            assert np.array_equal(got.pixels, src)

    def test_striped_rejected(self, tmp_path, rng):
        # take a valid file and swap TileOffsets(324) for StripOffsets(273)
        src = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        path = write_pyramid([src], 64, tmp_path / "x.tif", "none")
        data = bytearray(path.read_bytes())
        pos = data.find(struct.pack("<HH", 324, 4))
        assert pos != -1
        struct.pack_into("<H", data, pos, 273)
        bad = tmp_path / "striped.tif"
        bad.write_bytes(data)
        with pytest.raises(UnsupportedTag):
            open_slide(bad)

    def test_unknown_compression_rejected(self, tmp_path, rng):
        src = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        path = write_pyramid([src], 64, tmp_path / "x.tif", "none")
        data = bytearray(path.read_bytes())
        pos = data.find(struct.pack("<HHIHH", 259, 3, 1, 1, 0))
        assert pos != -1
        struct.pack_into("<HHIHH", data, pos, 259, 3, 1, 5, 0)  # LZW
        bad = tmp_path / "lzw.tif"
        bad.write_bytes(data)
        with pytest.raises(UnsupportedTag):
            open_slide(bad)

    def test_truncated_file(self, tmp_path, rng):
        src = rng.integers(0, 256, (128, 128, 3), dtype=np.uint8)
        path = write_pyramid([src], 64, tmp_path / "x.tif", "none")
        data = path.read_bytes()
        bad = tmp_path / "trunc.tif"
        bad.write_bytes(data[:len(data) // 3])
        with pytest.raises(TruncatedFile):
            open_slide(bad)

    def test_downsample_monotone_and_tile_counts(self, tmp_path, rng):
        levels = _random_pyramid(rng, 600, 400, 3, step=2)
        path = write_pyramid(levels, 128, tmp_path / "m.tif")
        with open_slide(path) as slide:
            downs = [lv.downsample for lv in slide.levels]
            assert all(b > a for a, b in zip(downs, downs[1:]))
            assert downs[0] == 1.0
            for lv, store in zip(slide.levels, slide._storage):
                assert lv.tiles_across * lv.tiles_down == len(store.offsets)

    def test_aspect_mismatch_rejected_by_writer(self, tmp_path, rng):
        lv0 = rng.integers(0, 256, (400, 600, 3), dtype=np.uint8)
        lv1 = rng.integers(0, 256, (300, 300, 3), dtype=np.uint8)  # wrong
        with pytest.raises(ValueError):
            write_pyramid([lv0, lv1], 128, tmp_path / "bad.tif")

    def test_duplicate_level_size_rejected(self, tmp_path, rng):
        # duplicate a single-level file's IFD chain onto itself: two levels
        # of equal width means the downsample cannot strictly increase
        src = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        path = write_pyramid([src], 64, tmp_path / "a.tif", "none")
        d0 = path.read_bytes()
        (ifd0,) = struct.unpack_from("<I", d0, 4)
        (n0,) = struct.unpack_from("<H", d0, ifd0)
        next_ptr = ifd0 + 2 + 12 * n0
        merged = bytearray(d0 + d0)
        struct.pack_into("<I", merged, next_ptr, len(d0) + ifd0)
        base = len(d0) + ifd0
        for i in range(n0):
            pos = base + 2 + 12 * i
            tag, typ, cnt = struct.unpack_from("<HHI", merged, pos)
            size = {1: 1, 3: 2, 4: 4}.get(typ, 0) * cnt
            if size > 4 or tag == 324:  # out-of-line values and the tile offset
                (off,) = struct.unpack_from("<I", merged, pos + 8)
                struct.pack_into("<I", merged, pos + 8, off + len(d0))
        dup = tmp_path / "dup.tif"
        dup.write_bytes(merged)
        with pytest.raises(InvalidPyramid):
            open_slide(dup)


class TestReadRegion:
    def test_single_tile_identity(self, tmp_path, rng):
        src = rng.integers(0, 256, (128, 128, 3), dtype=np.uint8)
        path = write_pyramid([src], 128, tmp_path / "x.tif", "none")
        with open_slide(path) as slide:
            got = slide.read_region(0, 0, 0, 128, 128)
            assert got.pixels.tobytes() == src.tobytes()

    def test_read_straddling_four_tiles(self, tmp_path, rng):
        src = rng.integers(0, 256, (128, 128, 3), dtype=np.uint8)
        path = write_pyramid([src], 64, tmp_path / "x.tif")
        with open_slide(path) as slide:
            got = slide.read_region(0, 32, 32, 64, 64)
            assert np.array_equal(got.pixels, src[32:96, 32:96])

    def test_fuzz_regions_match_source_crop(self, tmp_path, rng):
        src = rng.integers(0, 256, (300, 200, 3), dtype=np.uint8)
        path = write_pyramid([src], 64, tmp_path / "x.tif")
        with open_slide(path) as slide:
            for _ in range(60):
                w = int(rng.integers(1, 200))
                h = int(rng.integers(1, 300))
                x = int(rng.integers(0, 200 - w + 1))
                y = int(rng.integers(0, 300 - h + 1))
                got = slide.read_region(0, x, y, w, h)
                assert np.array_equal(got.pixels, src[y:y + h, x:x + w])

    def test_out_of_bounds(self, tmp_path, rng):
        src = rng.integers(0, 256, (128, 128, 3), dtype=np.uint8)
        path = write_pyramid([src], 64, tmp_path / "x.tif")
        with open_slide(path) as slide:
            with pytest.raises(OutOfBounds):
                slide.read_region(0, 100, 0, 64, 64)
            with pytest.raises(OutOfBounds):
                slide.read_region(0, 0, 0, 129, 10)
            with pytest.raises(OutOfBounds):
                slide.read_region(2, 0, 0, 1, 1)

    def test_origin_provenance(self, tmp_path, rng):
        levels = _random_pyramid(rng, 512, 512, 2, step=4)
        path = write_pyramid(levels, 128, tmp_path / "x.tif")
        with open_slide(path) as slide:
            got = slide.read_region(1, 10, 20, 30, 40)
            assert (got.origin.x0, got.origin.y0) == (40, 80)
            assert (got.origin.width_px, got.origin.height_px) == (120, 160)

    def test_concurrent_reads_consistent(self, tmp_path, rng):
        src = rng.integers(0, 256, (512, 512, 3), dtype=np.uint8)
        path = write_pyramid([src], 64, tmp_path / "x.tif")
        with open_slide(path) as slide:
            def read(i):
                x, y = (i * 13) % 400, (i * 29) % 400
                return slide.read_region(0, x, y, 100, 100).pixels, x, y

            with ThreadPoolExecutor(8) as pool:
                for pixels, x, y in pool.map(read, range(64)):
                    assert np.array_equal(pixels, src[y:y + 100, x:x + 100])


class TestWritePyramid:
    def test_codec_transparency(self, tmp_path, rng):
        src = rng.integers(0, 256, (200, 150, 3), dtype=np.uint8)
        p1 = write_pyramid([src], 64, tmp_path / "a.tif", "none")
        p2 = write_pyramid([src], 64, tmp_path / "b.tif", "deflate")
        with open_slide(p1) as s1, open_slide(p2) as s2:
            a = s1.read_region(0, 0, 0, 150, 200).pixels
            b = s2.read_region(0, 0, 0, 150, 200).pixels
            assert np.array_equal(a, b)
            assert np.array_equal(a, src)

    def test_empty_level_list_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_pyramid([], 64, tmp_path / "x.tif")

    def test_roundtrip_random_shapes(self, tmp_path, rng):
        for trial in range(8):
            w = int(rng.integers(65, 400))
            h = int(rng.integers(65, 400))
            n = int(rng.integers(1, 4))
            tile = int(rng.choice([64, 128]))
            comp = "deflate" if trial % 2 else "none"
            levels = [rng.integers(0, 256, (h, w, 3), dtype=np.uint8)]
            for _ in range(n - 1):
                ph, pw = levels[-1].shape[:2]
                if min(ph, pw) < 4:
                    break
                levels.append(block_mean_rgb(levels[-1], 2))
            path = write_pyramid(levels, tile, tmp_path / f"t{trial}.tif", comp)
            with open_slide(path) as slide:
                assert len(slide.levels) == len(levels)
                for i, src in enumerate(levels):
                    got = slide.read_region(i, 0, 0, src.shape[1], src.shape[0])
                    assert np.array_equal(got.pixels, src)
