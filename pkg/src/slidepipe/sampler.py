"""Patch coordinate sampling and extraction.

Random draws are uniform over tissue: pick an indexed tissue pixel, then a
uniform sub-position inside its level-0 footprint, so sampling density is
flat across the tissue region regardless of mask resolution.  Extraction
maps the requested downsample onto the best stored pyramid level and
resizes the read by box-average (integer ratios) or bilinear (otherwise).
"""

from dataclasses import dataclass

import numpy as np

from .errors import NoTissue
from .kernels import bilinear_resize, block_mean_rgb
from .mask import TissueMask
from .tiff import Patch, SlidePyramid

_RATIO_EPS = 1e-9


@dataclass(frozen=True)
class PatchSpec:
    """Sampling contract: square output edge, level-0 px per output px, seed."""
    patch_size_px: int
    downsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.patch_size_px < 1:
            raise ValueError("patch_size_px must be >= 1")
        if self.downsample < 1:
            raise ValueError("downsample must be >= 1")

    def validate_for(self, slide: SlidePyramid) -> None:
        footprint = self.patch_size_px * self.downsample
        if footprint > min(slide.width_px, slide.height_px):
            raise ValueError(
                f"patch footprint {footprint:.0f}px exceeds slide "
                f"{slide.slide_id} ({slide.width_px}x{slide.height_px})")


@dataclass(frozen=True)
class TissueIndex:
    """Row-major flat indices of every tissue pixel in a mask."""
    indices: np.ndarray
    mask_width: int
    mask_height: int
    mask_downsample: float

    def __len__(self) -> int:
        return len(self.indices)


def build_index(mask: TissueMask) -> TissueIndex:
    idx = np.flatnonzero(mask.bits).astype(np.int64)
    if idx.size == 0:
        raise NoTissue("mask has no tissue pixels")
    return TissueIndex(idx, mask.width_px, mask.height_px, mask.mask_downsample)


def sample_coordinate(index: TissueIndex, rng: np.random.Generator):
    """Draw one level-0 (x, y), uniform over the indexed tissue area.

    Consumes exactly three rng draws (pixel, x offset, y offset)."""
    flat = int(index.indices[rng.integers(0, len(index.indices))])
    row, col = divmod(flat, index.mask_width)
    ds = index.mask_downsample
    x = int((col + rng.random()) * ds)
    y = int((row + rng.random()) * ds)
    return x, y


def best_level(slide: SlidePyramid, downsample: float) -> int:
    """Index of the level with the largest downsample <= requested; level 0
    when the request undershoots every stored level."""
    best = 0
    for lv in slide.levels:
        if lv.downsample <= downsample * (1 + _RATIO_EPS):
            best = lv.index
    return best


def extract_patch(slide: SlidePyramid, coord, spec: PatchSpec,
                  anchor: str = "center") -> Patch:
    """Read a square anchored on a level-0 coordinate (its center by
    default, its top-left corner with ``anchor="corner"``) and resize it
    to ``spec.patch_size_px``; clamped (never padded) at slide borders.

    When the requested downsample matches a stored level exactly the read
    bytes pass through untouched."""
    if anchor not in ("center", "corner"):
        raise ValueError(f"unknown anchor {anchor!r}")
    spec.validate_for(slide)
    level = best_level(slide, spec.downsample)
    info = slide.levels[level]
    ratio = spec.downsample / info.downsample
    k = round(ratio)
    is_integer = abs(ratio - k) < _RATIO_EPS and k >= 1
    read_px = spec.patch_size_px * k if is_integer \
        else int(round(spec.patch_size_px * ratio))
    # aspect rounding at coarse levels can cost one pixel of extent
    max_read = min(info.width_px, info.height_px)
    if read_px > max_read:
        read_px = max_read
        is_integer = is_integer and read_px == spec.patch_size_px * k
    cx, cy = coord
    shift = read_px / 2 if anchor == "center" else 0
    lx = int(round(cx / info.downsample - shift))
    ly = int(round(cy / info.downsample - shift))
    lx = min(max(lx, 0), info.width_px - read_px)
    ly = min(max(ly, 0), info.height_px - read_px)
    patch = slide.read_region(level, lx, ly, read_px, read_px)
    if is_integer and k == 1:
        return patch
    if is_integer:
        pixels = block_mean_rgb(patch.pixels, k)
    else:
        pixels = bilinear_resize(patch.pixels, spec.patch_size_px,
                                 spec.patch_size_px)
    return Patch(pixels, patch.origin, patch.slide_id)


def grid_coordinates(slide: SlidePyramid, mask: TissueMask,
                     spec: PatchSpec) -> list[tuple[int, int]]:
    """Top-left corners of a non-overlapping level-0 tiling (stride =
    patch footprint), keeping tiles whose footprint touches tissue."""
    stride = int(round(spec.patch_size_px * spec.downsample))
    bits = mask.bits
    ds = mask.mask_downsample
    coords = []
    for y in range(0, slide.height_px - stride + 1, stride):
        r0 = int(y // ds)
        r1 = min(mask.height_px, int(-(-(y + stride) // ds)))
        for x in range(0, slide.width_px - stride + 1, stride):
            c0 = int(x // ds)
            c1 = min(mask.width_px, int(-(-(x + stride) // ds)))
            if bits[r0:r1, c0:c1].any():
                coords.append((x, y))
    if not coords:
        raise NoTissue(f"no grid tile touches tissue on {slide.slide_id}")
    return coords


def worker_rng(seed: int, worker_id: int) -> np.random.Generator:
    """Private per-worker stream split off a base seed."""
    return np.random.default_rng(
        np.random.SeedSequence((seed & 0xFFFFFFFFFFFFFFFF, worker_id)))


class MultiSlideSampler:
    """Uniform-over-tissue sampling across several slides.

    A slide is first picked with probability proportional to its tissue
    pixel count times mask_downsample^2 (level-0 tissue area), making the
    overall draw area-uniform; ``weighting="uniform"`` switches to equal
    odds per slide."""

    def __init__(self, entries, weighting: str = "area"):
        if not entries:
            raise NoTissue("no slides with tissue")
        if weighting not in ("area", "uniform"):
            raise ValueError(f"unknown weighting {weighting!r}")
        self.entries = list(entries)
        if weighting == "area":
            weights = np.array(
                [len(ix) * ix.mask_downsample ** 2 for _, ix in self.entries],
                np.float64)
        else:
            weights = np.ones(len(self.entries), np.float64)
        self._cum = np.cumsum(weights / weights.sum())

    def draw(self, rng: np.random.Generator):
        """Pick (slide position, slide, level-0 coordinate); four rng draws."""
        u = rng.random()
        i = min(int(np.searchsorted(self._cum, u, side="right")),
                len(self.entries) - 1)
        slide, index = self.entries[i]
        return i, slide, sample_coordinate(index, rng)
