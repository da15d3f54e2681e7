"""Minimal PNG codec: 2-bit grayscale (masks) and 8-bit RGB (patch dumps).

Encoding always uses filter type 0; decoding understands all five baseline
filters so foreign files still load.  Text metadata travels in tEXt chunks.
"""

import struct
import zlib

import numpy as np

from .errors import DecodeFailure, NotAPng, WrongBitDepth

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, data: bytes) -> bytes:
    return (struct.pack(">I", len(data)) + tag + data
            + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF))


def _text_chunks(texts: dict[str, str]) -> bytes:
    out = b""
    for key, value in texts.items():
        out += _chunk(b"tEXt", key.encode("latin-1") + b"\x00"
                      + value.encode("latin-1"))
    return out


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------

def encode_gray2(values: np.ndarray, texts: dict[str, str] | None = None,
                 zlib_level: int = 6) -> bytes:
    """Encode an (H, W) array of 2-bit values (0..3) as a grayscale PNG."""
    values = np.asarray(values, np.uint8)
    h, w = values.shape
    padded_w = -(-w // 4) * 4
    padded = np.zeros((h, padded_w), np.uint8)
    padded[:, :w] = values & 3
    packed = ((padded[:, 0::4] << 6) | (padded[:, 1::4] << 4)
              | (padded[:, 2::4] << 2) | padded[:, 3::4])
    rows = np.zeros((h, 1 + packed.shape[1]), np.uint8)
    rows[:, 1:] = packed
    ihdr = struct.pack(">IIBBBBB", w, h, 2, 0, 0, 0, 0)
    return (PNG_SIGNATURE + _chunk(b"IHDR", ihdr) + _text_chunks(texts or {})
            + _chunk(b"IDAT", zlib.compress(rows.tobytes(), zlib_level))
            + _chunk(b"IEND", b""))


def encode_rgb8(pixels: np.ndarray, texts: dict[str, str] | None = None,
                zlib_level: int = 6) -> bytes:
    """Encode an (H, W, 3) uint8 image as a truecolor PNG."""
    pixels = np.ascontiguousarray(pixels, np.uint8)
    h, w, _ = pixels.shape
    rows = np.zeros((h, 1 + w * 3), np.uint8)
    rows[:, 1:] = pixels.reshape(h, w * 3)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (PNG_SIGNATURE + _chunk(b"IHDR", ihdr) + _text_chunks(texts or {})
            + _chunk(b"IDAT", zlib.compress(rows.tobytes(), zlib_level))
            + _chunk(b"IEND", b""))


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def _parse_chunks(data: bytes):
    if data[:8] != PNG_SIGNATURE:
        raise NotAPng("missing PNG signature")
    pos = 8
    ihdr = None
    texts: dict[str, str] = {}
    idat = b""
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        tag = data[pos + 4:pos + 8]
        body = data[pos + 8:pos + 8 + length]
        if len(body) != length:
            raise DecodeFailure("truncated chunk")
        (crc,) = struct.unpack(">I", data[pos + 8 + length:pos + 12 + length])
        if crc != zlib.crc32(tag + body) & 0xFFFFFFFF:
            raise DecodeFailure(f"bad CRC in {tag!r} chunk")
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", body)
        elif tag == b"tEXt":
            key, _, value = body.partition(b"\x00")
            texts[key.decode("latin-1")] = value.decode("latin-1")
        elif tag == b"IDAT":
            idat += body
        elif tag == b"IEND":
            break
        pos += 12 + length
    if ihdr is None:
        raise DecodeFailure("no IHDR chunk")
    return ihdr, texts, idat


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    if len(raw) != height * (stride + 1):
        raise DecodeFailure(
            f"scanline data is {len(raw)} bytes, expected {height * (stride + 1)}")
    out = np.zeros((height, stride), np.uint8)
    prev = np.zeros(stride, np.uint8)
    pos = 0
    for y in range(height):
        ftype = raw[pos]
        line = np.frombuffer(raw, np.uint8, stride, pos + 1).copy()
        pos += stride + 1
        if ftype == 0:
            recon = line
        elif ftype == 2:
            recon = line + prev
        elif ftype in (1, 3, 4):
            recon = line
            for i in range(stride):
                left = int(recon[i - bpp]) if i >= bpp else 0
                up = int(prev[i])
                ul = int(prev[i - bpp]) if i >= bpp else 0
                if ftype == 1:
                    recon[i] = (int(recon[i]) + left) & 0xFF
                elif ftype == 3:
                    recon[i] = (int(recon[i]) + (left + up) // 2) & 0xFF
                else:
                    recon[i] = (int(recon[i]) + _paeth(left, up, ul)) & 0xFF
        else:
            raise DecodeFailure(f"unknown filter type {ftype}")
        out[y] = recon
        prev = out[y]
    return out


def decode_gray2(data: bytes):
    """Decode a 2-bit grayscale PNG to ((H, W) values 0..3, text dict)."""
    ihdr, texts, idat = _parse_chunks(data)
    w, h, depth, color, comp, filt, interlace = ihdr
    if depth != 2 or color != 0:
        raise WrongBitDepth(
            f"expected 2-bit grayscale, got depth {depth} color type {color}")
    if comp != 0 or filt != 0 or interlace != 0:
        raise DecodeFailure("unsupported compression/filter/interlace method")
    try:
        raw = zlib.decompress(idat)
    except zlib.error as exc:
        raise DecodeFailure(str(exc)) from exc
    stride = -(-w // 4)
    rows = _unfilter(raw, h, stride, 1)
    vals = np.zeros((h, stride * 4), np.uint8)
    vals[:, 0::4] = (rows >> 6) & 3
    vals[:, 1::4] = (rows >> 4) & 3
    vals[:, 2::4] = (rows >> 2) & 3
    vals[:, 3::4] = rows & 3
    return vals[:, :w], texts


def decode_rgb8(data: bytes):
    """Decode an 8-bit truecolor PNG to ((H, W, 3) uint8, text dict)."""
    ihdr, texts, idat = _parse_chunks(data)
    w, h, depth, color, comp, filt, interlace = ihdr
    if depth != 8 or color != 2:
        raise WrongBitDepth(
            f"expected 8-bit RGB, got depth {depth} color type {color}")
    if comp != 0 or filt != 0 or interlace != 0:
        raise DecodeFailure("unsupported compression/filter/interlace method")
    try:
        raw = zlib.decompress(idat)
    except zlib.error as exc:
        raise DecodeFailure(str(exc)) from exc
    rows = _unfilter(raw, h, w * 3, 3)
    return rows.reshape(h, w, 3), texts
