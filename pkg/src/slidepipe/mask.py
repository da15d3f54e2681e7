"""Tissue/background segmentation: blur, Otsu threshold, erosion, and the
2-bit PNG mask persistence format.

Tissue is assumed darker than the background (stain on a bright scanner
field), so the mask is ``blurred luminance < threshold``, then eroded.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateHistogram
from .kernels import binary_erode, block_mean_rgb, box_blur
from .pngio import decode_gray2, encode_gray2
from .tiff import Patch, SlidePyramid

#: pre-segmentation thumbnails are reduced to at most this many pixels per side
THUMBNAIL_MAX_PX = 2048

DEFAULT_BLUR_RADIUS = 2
DEFAULT_ERODE_ITERS = 1

_MASK_DOWNSAMPLE_KEY = "mask_downsample"
_TISSUE_VALUE = 3  # 2-bit PNG pixel value for tissue; 1 and 2 are reserved


@dataclass
class OtsuStats:
    histogram: np.ndarray
    threshold: int
    w0: float
    w1: float
    mu0: float
    mu1: float
    sigma_b2: float


@dataclass(eq=False)
class TissueMask:
    """Low-resolution binary tissue map; 1 = tissue."""
    bits: np.ndarray  # (H, W) uint8 in {0, 1}
    mask_downsample: float
    degenerate: bool = False
    _tissue_count: int = field(init=False, repr=False)

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, np.uint8)
        if self.mask_downsample < 1:
            raise ValueError("mask_downsample must be >= 1")
        self._tissue_count = int(np.count_nonzero(self.bits))

    @property
    def width_px(self) -> int:
        return self.bits.shape[1]

    @property
    def height_px(self) -> int:
        return self.bits.shape[0]

    @property
    def tissue_pixel_count(self) -> int:
        return self._tissue_count

    def __eq__(self, other) -> bool:
        if not isinstance(other, TissueMask):
            return NotImplemented
        return (self.bits.shape == other.bits.shape
                and bool(np.array_equal(self.bits, other.bits))
                and self.mask_downsample == other.mask_downsample)


def grayscale(patch) -> np.ndarray:
    """Integer luminance: round-half-up of 0.299 R + 0.587 G + 0.114 B."""
    pixels = patch.pixels if isinstance(patch, Patch) else np.asarray(patch)
    px = pixels.astype(np.int64)
    lum = (299 * px[..., 0] + 587 * px[..., 1] + 114 * px[..., 2] + 500) // 1000
    return lum.astype(np.uint8)


def otsu_threshold(histogram) -> OtsuStats:
    """Threshold maximizing between-class variance, smallest index on ties.

    The argmax scan runs in exact integer arithmetic (sigma_b2 is
    proportional to (S0*n1 - S1*n0)^2 / (n0*n1) with N fixed), so no
    float rounding can flip the winner; the returned stats carry the
    conventional float values.
    """
    h = np.asarray(histogram, np.int64)
    if h.shape != (256,) or (h < 0).any():
        raise ValueError("histogram must be 256 non-negative counts")
    levels = np.arange(256, dtype=np.int64)
    total = int(h.sum())
    if total <= 0:
        raise ValueError("histogram is empty")
    total_sum = int((h * levels).sum())

    best_t = -1
    best_num = 0
    best_den = 1
    n0 = 0
    s0 = 0
    for t in range(255):
        n0 += int(h[t])
        s0 += int(h[t]) * t
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue  # one class empty: sigma_b2 is 0 by definition
        a = s0 * n1 - (total_sum - s0) * n0
        num = a * a
        den = n0 * n1
        if num * best_den > best_num * den:
            best_num, best_den, best_t = num, den, t

    if best_t < 0 or best_num == 0:
        raise DegenerateHistogram("no threshold separates the histogram")

    n0 = int(h[:best_t + 1].sum())
    s0 = int((h[:best_t + 1] * levels[:best_t + 1]).sum())
    n1 = total - n0
    s1 = total_sum - s0
    w0 = n0 / total
    w1 = n1 / total
    mu0 = s0 / n0
    mu1 = s1 / n1
    return OtsuStats(h, best_t, w0, w1, mu0, mu1, w0 * w1 * (mu0 - mu1) ** 2)


def build_mask(slide: SlidePyramid, blur_radius: int = DEFAULT_BLUR_RADIUS,
               erode_iters: int = DEFAULT_ERODE_ITERS) -> TissueMask:
    """Segment tissue on the slide thumbnail: blur -> Otsu -> erode.

    The thumbnail is the coarsest level, box-averaged down further if its
    longer side exceeds ``THUMBNAIL_MAX_PX``.  A histogram Otsu cannot
    split yields an all-zero mask flagged ``degenerate``.
    """
    info = slide.levels[slide.thumbnail_level]
    thumb = slide.read_region(slide.thumbnail_level, 0, 0,
                              info.width_px, info.height_px)
    pixels = thumb.pixels
    downsample = info.downsample
    longest = max(info.width_px, info.height_px)
    if longest > THUMBNAIL_MAX_PX:
        factor = -(-longest // THUMBNAIL_MAX_PX)
        pixels = block_mean_rgb(pixels, factor)
        downsample *= factor
    blurred = box_blur(grayscale(pixels), blur_radius)
    hist = np.bincount(blurred.ravel(), minlength=256).astype(np.int64)
    try:
        stats = otsu_threshold(hist)
    except DegenerateHistogram:
        return TissueMask(np.zeros(blurred.shape, np.uint8), downsample,
                          degenerate=True)
    bits = (blurred < stats.threshold).astype(np.uint8)
    bits = binary_erode(bits, erode_iters)
    return TissueMask(bits, downsample)


def encode_mask_png(mask: TissueMask, extra_text: dict[str, str] | None = None,
                    ) -> bytes:
    """Serialize a mask as a 2-bit grayscale PNG (0=background, 3=tissue)."""
    texts = {_MASK_DOWNSAMPLE_KEY: repr(float(mask.mask_downsample))}
    if extra_text:
        texts.update(extra_text)
    return encode_gray2(mask.bits * np.uint8(_TISSUE_VALUE), texts)


def decode_mask_png(data: bytes) -> TissueMask:
    """Inverse of :func:`encode_mask_png`; exact round trip."""
    values, texts = decode_gray2(data)
    downsample = float(texts.get(_MASK_DOWNSAMPLE_KEY, "1.0"))
    return TissueMask((values == _TISSUE_VALUE).astype(np.uint8), downsample)


def read_mask_text(data: bytes) -> dict[str, str]:
    """Text metadata of a mask PNG without decoding pixels."""
    _, texts = decode_gray2(data)
    return texts
