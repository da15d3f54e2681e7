"""Pyramidal tiled-TIFF reader and writer.

Scope is deliberately narrow: baseline TIFF 6.0, tiled, 8-bit RGB,
compression none (1) or Deflate/zlib (8).  Consecutive IFDs in a file are
the pyramid levels; they are sorted by size on open and the downsample of
a level is the width ratio against level 0.  Edge tiles are stored full
size and cropped on read.

Reads go through ``os.pread`` and per-call zlib state, so concurrent
``read_region`` calls on one handle never contend on a lock.
"""

import os
import struct
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DecodeFailure,
    InvalidPyramid,
    IoFailure,
    MalformedHeader,
    OutOfBounds,
    TruncatedFile,
    UnsupportedTag,
)

TAG_IMAGE_WIDTH = 256
TAG_IMAGE_LENGTH = 257
TAG_BITS_PER_SAMPLE = 258
TAG_COMPRESSION = 259
TAG_PHOTOMETRIC = 262
TAG_STRIP_OFFSETS = 273
TAG_SAMPLES_PER_PIXEL = 277
TAG_TILE_WIDTH = 322
TAG_TILE_LENGTH = 323
TAG_TILE_OFFSETS = 324
TAG_TILE_BYTE_COUNTS = 325

_TYPE_SIZES = {1: 1, 3: 2, 4: 4}
_TYPE_FMT = {1: "B", 3: "H", 4: "I"}
_MAX_IFDS = 256


class Compression(Enum):
    NONE = 1
    DEFLATE = 8


@dataclass(frozen=True)
class LevelInfo:
    index: int
    width_px: int
    height_px: int
    downsample: float
    tile_width_px: int
    tile_height_px: int
    compression: Compression

    @property
    def tiles_across(self) -> int:
        return -(-self.width_px // self.tile_width_px)

    @property
    def tiles_down(self) -> int:
        return -(-self.height_px // self.tile_height_px)


@dataclass(frozen=True)
class PixelRegion:
    """A rectangle in level-0 pixel coordinates."""
    x0: int
    y0: int
    width_px: int
    height_px: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0 or self.width_px < 1 or self.height_px < 1:
            raise ValueError(f"invalid region {self}")


@dataclass
class Patch:
    """An H x W x 3 uint8 pixel block plus its provenance."""
    pixels: np.ndarray
    origin: PixelRegion
    slide_id: str

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 3 \
                or self.pixels.shape[2] != 3:
            raise ValueError("patch pixels must be (H, W, 3) uint8")


@dataclass
class _LevelStorage:
    offsets: np.ndarray
    byte_counts: np.ndarray


class SlidePyramid:
    """Open handle to a pyramidal slide; immutable after open."""

    def __init__(self, path: Path, fd: int, levels: list[LevelInfo],
                 storage: list[_LevelStorage]):
        self.path = path
        self.slide_id = path.stem
        self.levels = levels
        self.thumbnail_level = len(levels) - 1
        self._fd = fd
        self._storage = storage

    # -- lifecycle ---------------------------------------------------------

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    # -- geometry ----------------------------------------------------------

    @property
    def width_px(self) -> int:
        return self.levels[0].width_px

    @property
    def height_px(self) -> int:
        return self.levels[0].height_px

    # -- pixel access --------------------------------------------------------

    def _decode_tile(self, level: int, tile_index: int) -> np.ndarray:
        info = self.levels[level]
        store = self._storage[level]
        offset = int(store.offsets[tile_index])
        count = int(store.byte_counts[tile_index])
        raw = os.pread(self._fd, count, offset)
        if len(raw) != count:
            raise TruncatedFile(f"{self.slide_id}: tile {tile_index} truncated")
        if info.compression is Compression.DEFLATE:
            try:
                raw = zlib.decompress(raw)
            except zlib.error as exc:
                raise DecodeFailure(
                    f"{self.slide_id}: tile {tile_index}: {exc}") from exc
        expected = info.tile_width_px * info.tile_height_px * 3
        if len(raw) != expected:
            raise DecodeFailure(
                f"{self.slide_id}: tile {tile_index} decoded to {len(raw)} "
                f"bytes, expected {expected}")
        return np.frombuffer(raw, np.uint8).reshape(
            info.tile_height_px, info.tile_width_px, 3)

    def read_region(self, level: int, lx: int, ly: int, w: int, h: int) -> Patch:
        """Read a w x h rectangle at (lx, ly) in level pixel coordinates."""
        if self._fd is None:
            raise IoFailure(f"{self.slide_id}: handle closed")
        if not 0 <= level < len(self.levels):
            raise OutOfBounds(f"level {level} out of range")
        info = self.levels[level]
        if w < 1 or h < 1 or lx < 0 or ly < 0 \
                or lx + w > info.width_px or ly + h > info.height_px:
            raise OutOfBounds(
                f"{self.slide_id}: region ({lx},{ly},{w},{h}) exceeds level "
                f"{level} extent {info.width_px}x{info.height_px}")
        tw, th = info.tile_width_px, info.tile_height_px
        out = np.empty((h, w, 3), np.uint8)
        for ty in range(ly // th, (ly + h - 1) // th + 1):
            for tx in range(lx // tw, (lx + w - 1) // tw + 1):
                tile = self._decode_tile(level, ty * info.tiles_across + tx)
                # intersection of the tile with the request, in level coords
                ix0 = max(lx, tx * tw)
                iy0 = max(ly, ty * th)
                ix1 = min(lx + w, tx * tw + tw, info.width_px)
                iy1 = min(ly + h, ty * th + th, info.height_px)
                out[iy0 - ly:iy1 - ly, ix0 - lx:ix1 - lx] = \
                    tile[iy0 - ty * th:iy1 - ty * th, ix0 - tx * tw:ix1 - tx * tw]
        ds = info.downsample
        x0 = int(lx * ds)
        y0 = int(ly * ds)
        w0 = max(1, min(int(round(w * ds)), self.width_px - x0))
        h0 = max(1, min(int(round(h * ds)), self.height_px - y0))
        return Patch(out, PixelRegion(x0, y0, w0, h0), self.slide_id)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _read_exact(fd: int, n: int, offset: int, what: str) -> bytes:
    data = os.pread(fd, n, offset)
    if len(data) != n:
        raise TruncatedFile(f"{what} at offset {offset} past EOF")
    return data


def _parse_ifd(fd: int, offset: int, bo: str, file_size: int) -> tuple[dict, int]:
    head = _read_exact(fd, 2, offset, "IFD entry count")
    (n_entries,) = struct.unpack(bo + "H", head)
    body = _read_exact(fd, 12 * n_entries + 4, offset + 2, "IFD body")
    tags: dict[int, tuple] = {}
    for i in range(n_entries):
        entry = body[12 * i:12 * i + 12]
        tag, typ, cnt = struct.unpack(bo + "HHI", entry[:8])
        if typ not in _TYPE_SIZES:
            continue  # types we never need (ASCII, RATIONAL, ...)
        size = _TYPE_SIZES[typ] * cnt
        if size <= 4:
            payload = entry[8:8 + size]
        else:
            (value_off,) = struct.unpack(bo + "I", entry[8:12])
            if value_off + size > file_size:
                raise TruncatedFile(f"tag {tag} value past EOF")
            payload = _read_exact(fd, size, value_off, f"tag {tag} value")
        tags[tag] = struct.unpack(bo + str(cnt) + _TYPE_FMT[typ], payload)
    (next_off,) = struct.unpack(bo + "I", body[-4:])
    return tags, next_off


def _level_from_tags(tags: dict, file_size: int, slide_id: str):
    if TAG_STRIP_OFFSETS in tags and TAG_TILE_OFFSETS not in tags:
        raise UnsupportedTag(f"{slide_id}: striped TIFF not supported")
    required = (TAG_IMAGE_WIDTH, TAG_IMAGE_LENGTH, TAG_BITS_PER_SAMPLE,
                TAG_COMPRESSION, TAG_PHOTOMETRIC, TAG_SAMPLES_PER_PIXEL,
                TAG_TILE_WIDTH, TAG_TILE_LENGTH, TAG_TILE_OFFSETS,
                TAG_TILE_BYTE_COUNTS)
    for tag in required:
        if tag not in tags:
            raise UnsupportedTag(f"{slide_id}: missing required tag {tag}")
    if tuple(tags[TAG_BITS_PER_SAMPLE]) != (8, 8, 8):
        raise UnsupportedTag(f"{slide_id}: only 8,8,8 bits per sample supported")
    if tags[TAG_SAMPLES_PER_PIXEL][0] != 3:
        raise UnsupportedTag(f"{slide_id}: only 3 samples per pixel supported")
    if tags[TAG_PHOTOMETRIC][0] != 2:
        raise UnsupportedTag(f"{slide_id}: only RGB photometric supported")
    comp = tags[TAG_COMPRESSION][0]
    if comp not in (1, 8):
        raise UnsupportedTag(f"{slide_id}: compression {comp} not supported")
    width = tags[TAG_IMAGE_WIDTH][0]
    height = tags[TAG_IMAGE_LENGTH][0]
    tw = tags[TAG_TILE_WIDTH][0]
    th = tags[TAG_TILE_LENGTH][0]
    if width < 1 or height < 1 or tw < 1 or th < 1:
        raise InvalidPyramid(f"{slide_id}: non-positive dimensions")
    offsets = np.asarray(tags[TAG_TILE_OFFSETS], np.int64)
    counts = np.asarray(tags[TAG_TILE_BYTE_COUNTS], np.int64)
    n_tiles = (-(-width // tw)) * (-(-height // th))
    if len(offsets) != n_tiles or len(counts) != n_tiles:
        raise InvalidPyramid(
            f"{slide_id}: {n_tiles} tiles expected, "
            f"{len(offsets)} offsets / {len(counts)} counts stored")
    if np.any(offsets + counts > file_size):
        raise TruncatedFile(f"{slide_id}: tile data past EOF")
    return (width, height, tw, th, comp, offsets, counts)


def open_slide(path) -> SlidePyramid:
    """Parse a pyramidal tiled RGB TIFF and return an immutable handle."""
    path = Path(path)
    fd = os.open(path, os.O_RDONLY)
    try:
        file_size = os.fstat(fd).st_size
        head = os.pread(fd, 8, 0)
        if len(head) < 8 or head[:2] not in (b"II", b"MM"):
            raise MalformedHeader(f"{path.name}: not a TIFF (byte order)")
        bo = "<" if head[:2] == b"II" else ">"
        (magic,) = struct.unpack(bo + "H", head[2:4])
        if magic != 42:
            raise MalformedHeader(f"{path.name}: bad magic {magic}")
        (ifd_off,) = struct.unpack(bo + "I", head[4:8])

        raw_levels = []
        seen = set()
        while ifd_off != 0:
            if ifd_off in seen or len(seen) >= _MAX_IFDS:
                raise InvalidPyramid(f"{path.name}: IFD chain loops")
            if ifd_off + 2 > file_size:
                raise TruncatedFile(f"{path.name}: IFD offset past EOF")
            seen.add(ifd_off)
            tags, ifd_off = _parse_ifd(fd, ifd_off, bo, file_size)
            raw_levels.append(_level_from_tags(tags, file_size, path.stem))
        if not raw_levels:
            raise InvalidPyramid(f"{path.name}: no IFDs")

        raw_levels.sort(key=lambda lv: lv[0], reverse=True)
        w0, h0 = raw_levels[0][0], raw_levels[0][1]
        levels, storage = [], []
        prev_ds = 0.0
        for i, (w, h, tw, th, comp, offs, cnts) in enumerate(raw_levels):
            ds = w0 / w
            if ds <= prev_ds:
                raise InvalidPyramid(
                    f"{path.name}: downsample not strictly increasing at level {i}")
            if abs(h - h0 / ds) > 1.0 + 1e-6:
                raise InvalidPyramid(
                    f"{path.name}: level {i} aspect ratio departs from level 0")
            prev_ds = ds
            levels.append(LevelInfo(i, w, h, ds, tw, th, Compression(comp)))
            storage.append(_LevelStorage(offs, cnts))
        return SlidePyramid(path, fd, levels, storage)
    except Exception:
        os.close(fd)
        raise


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------

def write_pyramid(levels, tile_size, path, compression: str = "deflate",
                  zlib_level: int = 6) -> Path:
    """Emit a little-endian tiled RGB TIFF with one IFD per level.

    ``levels`` are (H, W, 3) uint8 arrays ordered finest first; a single
    ``tile_size`` (int or (w, h)) applies to every level.  Round trip
    through ``open_slide``/``read_region`` is bit-exact.
    """
    if not levels:
        raise ValueError("at least one level required")
    if isinstance(tile_size, int):
        tw, th = tile_size, tile_size
    else:
        tw, th = tile_size
    if tw < 1 or th < 1:
        raise ValueError("tile size must be positive")
    if compression not in ("none", "deflate"):
        raise ValueError(f"unknown compression {compression!r}")
    arrays = []
    for lv in levels:
        arr = np.ascontiguousarray(lv, np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError("each level must be (H, W, 3) uint8")
        arrays.append(arr)
    h0, w0 = arrays[0].shape[:2]
    prev_w = None
    for arr in arrays:
        h, w = arr.shape[:2]
        if prev_w is not None and w >= prev_w:
            raise ValueError("levels must strictly shrink")
        if abs(h - h0 * (w / w0)) > 1.0 + 1e-6:
            raise ValueError("level aspect ratio departs from level 0")
        prev_w = w

    comp_tag = 8 if compression == "deflate" else 1
    buf = bytearray(struct.pack("<2sHI", b"II", 42, 0))

    def align():
        if len(buf) % 2:
            buf.append(0)

    tile_meta = []
    for arr in arrays:
        h, w = arr.shape[:2]
        offs, cnts = [], []
        for ty in range(-(-h // th)):
            for tx in range(-(-w // tw)):
                tile = np.zeros((th, tw, 3), np.uint8)
                sub = arr[ty * th:min(ty * th + th, h),
                          tx * tw:min(tx * tw + tw, w)]
                tile[:sub.shape[0], :sub.shape[1]] = sub
                data = tile.tobytes()
                if comp_tag == 8:
                    data = zlib.compress(data, zlib_level)
                align()
                offs.append(len(buf))
                cnts.append(len(data))
                buf += data
        tile_meta.append((offs, cnts))

    next_ptr_positions = []
    for i, arr in enumerate(arrays):
        h, w = arr.shape[:2]
        offs, cnts = tile_meta[i]
        n = len(offs)
        align()
        bits_off = len(buf)
        buf += struct.pack("<3H", 8, 8, 8)
        if n > 1:
            align()
            offs_off = len(buf)
            buf += struct.pack(f"<{n}I", *offs)
            align()
            cnts_off = len(buf)
            buf += struct.pack(f"<{n}I", *cnts)
        else:
            offs_off, cnts_off = offs[0], cnts[0]
        align()
        ifd_off = len(buf)
        if i == 0:
            struct.pack_into("<I", buf, 4, ifd_off)
        elif next_ptr_positions:
            struct.pack_into("<I", buf, next_ptr_positions[-1], ifd_off)
        entries = [
            (TAG_IMAGE_WIDTH, 4, 1, struct.pack("<I", w)),
            (TAG_IMAGE_LENGTH, 4, 1, struct.pack("<I", h)),
            (TAG_BITS_PER_SAMPLE, 3, 3, struct.pack("<I", bits_off)),
            (TAG_COMPRESSION, 3, 1, struct.pack("<HH", comp_tag, 0)),
            (TAG_PHOTOMETRIC, 3, 1, struct.pack("<HH", 2, 0)),
            (TAG_SAMPLES_PER_PIXEL, 3, 1, struct.pack("<HH", 3, 0)),
            (TAG_TILE_WIDTH, 4, 1, struct.pack("<I", tw)),
            (TAG_TILE_LENGTH, 4, 1, struct.pack("<I", th)),
            (TAG_TILE_OFFSETS, 4, n, struct.pack("<I", offs_off)),
            (TAG_TILE_BYTE_COUNTS, 4, n, struct.pack("<I", cnts_off)),
        ]
        buf += struct.pack("<H", len(entries))
        for tag, typ, cnt, val in entries:
            buf += struct.pack("<HHI", tag, typ, cnt) + val
        next_ptr_positions.append(len(buf))
        buf += struct.pack("<I", 0)

    path = Path(path)
    try:
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(buf)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"writing {path}: {exc}") from exc
    return path
