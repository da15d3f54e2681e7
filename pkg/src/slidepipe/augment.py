"""Runtime patch augmentation: dihedral flips/rotations, per-channel color
shift, and piecewise-affine warping on a jittered control lattice.

All parameters are drawn from a caller-supplied rng stream in a fixed
order (dihedral code, gains, biases, warp offsets), so a seeded stream
reproduces the same augmentation sequence everywhere.  Zero-magnitude
parameters are byte-exact identities.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import FoldedGrid, InvalidCode
from .kernels import lattice_triangles, triangle_areas2, warp_piecewise

#: default warp jitter as a fraction of the patch edge
AUTO_JITTER_FRACTION = 0.05

_MAX_REDRAWS = 16


@dataclass(frozen=True)
class AugmentConfig:
    dihedral_enabled: bool = True
    color_gain_range: float = 0.05   # gain drawn from [1-a, 1+a]
    color_bias_range: int = 10       # bias drawn from [-s, +s]
    warp_grid: int = 4               # k x k control points
    warp_jitter_px: float | None = None  # None: 0.05 * patch edge

    def __post_init__(self):
        if not 0 <= self.color_gain_range < 1:
            raise ValueError("color_gain_range must be in [0, 1)")
        if self.color_bias_range < 0:
            raise ValueError("color_bias_range must be >= 0")
        if self.warp_grid < 2:
            raise ValueError("warp_grid must be >= 2")
        if self.warp_jitter_px is not None and self.warp_jitter_px < 0:
            raise ValueError("warp_jitter_px must be >= 0")

    def resolved(self, patch_size_px: int) -> "AugmentConfig":
        """Fill the auto jitter default for a concrete patch size."""
        if self.warp_jitter_px is not None:
            return self
        return replace(self,
                       warp_jitter_px=AUTO_JITTER_FRACTION * patch_size_px)


def identity_config() -> AugmentConfig:
    """Config whose draws are always byte-exact identities."""
    return AugmentConfig(dihedral_enabled=False, color_gain_range=0.0,
                         color_bias_range=0, warp_grid=4, warp_jitter_px=0.0)


@dataclass(frozen=True)
class AugmentDraw:
    """One sampled set of augmentation parameters."""
    code: int
    gains: tuple[float, float, float]
    biases: tuple[int, int, int]
    offsets: np.ndarray  # (k, k, 2) px, border rows/cols all zero


def dihedral(pixels: np.ndarray, code: int) -> np.ndarray:
    """Apply one of the 8 square symmetries: codes 0-3 rotate by

    0/90/180/270 degrees CCW, codes 4-7 flip horizontally first.  Pure
    pixel permutation."""
    if not isinstance(code, (int, np.integer)) or not 0 <= code <= 7:
        raise InvalidCode(f"dihedral code {code!r} outside 0..7")
    if pixels.shape[0] != pixels.shape[1]:
        raise ValueError("dihedral requires a square patch")
    out = pixels
    if code >= 4:
        out = np.fliplr(out)
    return np.ascontiguousarray(np.rot90(out, code % 4))


def color_shift(pixels: np.ndarray, gains, biases) -> np.ndarray:
    """Per-channel affine: clamp(round(v * gain + bias), 0, 255)."""
    gains = np.asarray(gains, np.float64)
    biases = np.asarray(biases, np.float64)
    out = np.floor(pixels.astype(np.float64) * gains + biases + 0.5)
    return np.clip(out, 0, 255).astype(np.uint8)


def _lattice(size: int, k: int):
    pos = np.linspace(0.0, size - 1.0, k)
    xs, ys = np.meshgrid(pos, pos)
    return xs, ys


def piecewise_affine(pixels: np.ndarray, control_offsets: np.ndarray,
                     ) -> np.ndarray:
    """Warp through a k x k control lattice displaced by ``control_offsets``
    (px).  Border control points must have zero offset so the output frame
    stays covered; a destination triangle with non-positive area raises
    :class:`FoldedGrid`."""
    if pixels.shape[0] != pixels.shape[1]:
        raise ValueError("piecewise_affine requires a square patch")
    offsets = np.asarray(control_offsets, np.float64)
    if offsets.ndim != 3 or offsets.shape[0] != offsets.shape[1] \
            or offsets.shape[2] != 2 or offsets.shape[0] < 2:
        raise ValueError("control_offsets must be (k, k, 2) with k >= 2")
    border = np.ones(offsets.shape[:2], bool)
    border[1:-1, 1:-1] = False
    if np.any(offsets[border] != 0):
        raise ValueError("border control points must have zero offset")
    xs, ys = _lattice(pixels.shape[0], offsets.shape[0])
    src_tris = lattice_triangles(xs, ys)
    dst_tris = lattice_triangles(xs + offsets[..., 0], ys + offsets[..., 1])
    if np.any(triangle_areas2(dst_tris) <= 0):
        raise FoldedGrid("destination lattice folds over itself")
    return warp_piecewise(pixels, src_tris, dst_tris)


def draw_augmentation(cfg: AugmentConfig, rng: np.random.Generator,
                      patch_size_px: int) -> AugmentDraw:
    """Sample parameters within the config ranges.

    The rng consumption order is fixed (code, 3 gains, 3 biases, interior
    offsets) regardless of which features are enabled.  Offsets that fold
    the lattice are redrawn up to 16 times."""
    if cfg.warp_jitter_px is None:
        cfg = cfg.resolved(patch_size_px)
    code = int(rng.integers(0, 8))
    if not cfg.dihedral_enabled:
        code = 0
    a = cfg.color_gain_range
    gains = tuple(float(g) for g in rng.uniform(1 - a, 1 + a, 3))
    s = cfg.color_bias_range
    biases = tuple(int(b) for b in rng.integers(-s, s + 1, 3))
    k = cfg.warp_grid
    d = cfg.warp_jitter_px
    xs, ys = _lattice(patch_size_px, k)
    for _ in range(_MAX_REDRAWS):
        offsets = np.zeros((k, k, 2))
        if k > 2:
            offsets[1:-1, 1:-1, :] = rng.uniform(-d, d, (k - 2, k - 2, 2))
        dst = lattice_triangles(xs + offsets[..., 0], ys + offsets[..., 1])
        if np.all(triangle_areas2(dst) > 0):
            return AugmentDraw(code, gains, biases, offsets)
    raise FoldedGrid(
        f"warp jitter {d} px folds the {k}x{k} lattice; 16 redraws failed")


def apply_augmentation(pixels: np.ndarray, draw: AugmentDraw) -> np.ndarray:
    """Dihedral, then warp, then color shift.

    Identity parameters are skipped; that is byte-equivalent because each
    stage with zero-magnitude parameters is an exact identity."""
    out = dihedral(pixels, draw.code) if draw.code else pixels
    if np.any(draw.offsets):
        out = piecewise_affine(out, draw.offsets)
    if draw.gains != (1.0, 1.0, 1.0) or draw.biases != (0, 0, 0):
        out = color_shift(out, draw.gains, draw.biases)
    return out if out is not pixels else pixels.copy()
