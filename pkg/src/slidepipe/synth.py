"""Synthetic slide generation with known ground-truth tissue.

Slides mimic stained tissue on a bright scanner background: near-white
noise (245 +/- 10 per channel) with randomly placed filled ellipses in
darker colors (every channel <= 200).  The returned boolean map is the
exact level-0 union of the ellipses.
"""

from pathlib import Path

import numpy as np

from .kernels import block_mean_rgb
from .tiff import write_pyramid

#: pyramid downsamples emitted for every synthetic slide
LEVEL_FACTORS = (1, 4, 16)
MIN_DIMENSION = 512

_BG_LO, _BG_HI = 235, 255
_COLOR_LO, _COLOR_HI = 40, 200
_AXIS_FRACTIONS = (1 / 32, 1 / 8)
#: minimum gap between blob bounding circles, in level-0 px.  Keeps blobs
#: from forming narrow background channels that blur would bridge, so the
#: mask never marks tissue whose footprint misses the ground truth.
_MIN_GAP_PX = 96
_MAX_PLACEMENT_ATTEMPTS = 1000


def _paint_ellipse(img, truth, cx, cy, ax, ay, theta, color):
    h, w = truth.shape
    r = max(ax, ay)
    x0 = max(0, int(np.floor(cx - r)))
    x1 = min(w, int(np.ceil(cx + r)) + 1)
    y0 = max(0, int(np.floor(cy - r)))
    y1 = min(h, int(np.ceil(cy + r)) + 1)
    if x0 >= x1 or y0 >= y1:
        return
    xs = np.arange(x0, x1, dtype=np.float64) - cx
    ys = np.arange(y0, y1, dtype=np.float64) - cy
    dx = xs[None, :]
    dy = ys[:, None]
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    u = dx * cos_t + dy * sin_t
    v = -dx * sin_t + dy * cos_t
    inside = (u / ax) ** 2 + (v / ay) ** 2 <= 1.0
    img[y0:y1, x0:x1][inside] = color
    truth[y0:y1, x0:x1] |= inside


def synth_slide(path, seed: int, width: int, height: int, n_blobs: int,
                tile_size: int = 256, compression: str = "deflate",
                zlib_level: int = 1):
    """Write a deterministic 3-level synthetic slide.

    Returns ``(path, truth)`` where ``truth`` is the exact level-0 boolean
    tissue map.  Identical arguments produce byte-identical files.
    """
    if width < MIN_DIMENSION or height < MIN_DIMENSION:
        raise ValueError(f"slide dimensions must be >= {MIN_DIMENSION}")
    if n_blobs < 0:
        raise ValueError("n_blobs must be >= 0")
    rng = np.random.default_rng(seed)
    img = rng.integers(_BG_LO, _BG_HI + 1, (height, width, 3), dtype=np.uint8)
    truth = np.zeros((height, width), bool)
    m = min(width, height)
    placed: list[tuple[float, float, float]] = []  # (cx, cy, bounding radius)
    for _ in range(n_blobs):
        for attempt in range(_MAX_PLACEMENT_ATTEMPTS):
            cx = rng.uniform(0, width)
            cy = rng.uniform(0, height)
            ax = rng.uniform(m * _AXIS_FRACTIONS[0], m * _AXIS_FRACTIONS[1])
            ay = rng.uniform(m * _AXIS_FRACTIONS[0], m * _AXIS_FRACTIONS[1])
            theta = rng.uniform(0, np.pi)
            r = max(ax, ay)
            if all(np.hypot(cx - px, cy - py) >= r + pr + _MIN_GAP_PX
                   for px, py, pr in placed):
                break
        else:
            raise ValueError(
                f"could not place {n_blobs} separated blobs on a "
                f"{width}x{height} slide")
        placed.append((cx, cy, r))
        color = rng.integers(_COLOR_LO, _COLOR_HI + 1, 3, dtype=np.uint8)
        _paint_ellipse(img, truth, cx, cy, ax, ay, theta, color)
    levels = [img]
    for f in LEVEL_FACTORS[1:]:
        levels.append(block_mean_rgb(img, f))
    write_pyramid(levels, tile_size, path, compression, zlib_level)
    return Path(path), truth
