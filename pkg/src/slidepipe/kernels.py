"""Hot pixel kernels, each with a numba-compiled and a pure-numpy twin.

The compiled path is the default; set ``SLIDEPIPE_NO_NUMBA=1`` to run on
the vectorized numpy fallbacks instead.  Both paths are bit-identical:
reductions use exact integer arithmetic and the float kernels evaluate
the same per-element expression tree in float64 (no fastmath), so output
bytes never depend on which path served a call.  ``benchmarks/kernel_bench.py``
times the two sides against each other.

Rounding convention for integer outputs is round-half-up, implemented as
``(2*s + n) // (2*n)`` for a sum ``s`` of ``n`` non-negative samples.
"""

import os

import numpy as np

NUMBA_ENV_FLAG = "SLIDEPIPE_NO_NUMBA"

HAVE_NUMBA = False
if os.environ.get(NUMBA_ENV_FLAG, "").strip().lower() not in ("1", "true", "yes"):
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass

if not HAVE_NUMBA:
    def njit(*args, **kwargs):
        # Passthrough decorator: the *_jit functions stay plain Python.
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap

#: True when calls dispatch to the compiled kernels.
USE_NUMBA = HAVE_NUMBA

_EPS = 1e-9


# ---------------------------------------------------------------------------
# box blur (edge-clamped square mean)
# ---------------------------------------------------------------------------

def _box_blur_numpy(img: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return img.copy()
    h, w = img.shape
    k = 2 * radius + 1
    padded = np.pad(img, radius, mode="edge")
    ii = np.zeros((h + 2 * radius + 1, w + 2 * radius + 1), np.int64)
    ii[1:, 1:] = padded.cumsum(0, dtype=np.int64).cumsum(1)
    s = ii[k:k + h, k:k + w] - ii[:h, k:k + w] - ii[k:k + h, :w] + ii[:h, :w]
    n = k * k
    return ((2 * s + n) // (2 * n)).astype(np.uint8)


@njit(cache=True)
def _box_blur_jit(img, radius, out):
    # Two O(N) sliding-sum passes; the clamped window is a multiset of
    # consecutive (clamped) indices, so shifting by one stays incremental.
    h, w = img.shape
    k = 2 * radius + 1
    n = k * k
    tmp = np.empty((h, w), np.int64)
    for y in range(h):
        s = np.int64(0)
        for dx in range(-radius, radius + 1):
            xx = dx
            if xx < 0:
                xx = 0
            elif xx >= w:
                xx = w - 1
            s += img[y, xx]
        tmp[y, 0] = s
        for x in range(1, w):
            x_add = x + radius
            if x_add >= w:
                x_add = w - 1
            x_sub = x - 1 - radius
            if x_sub < 0:
                x_sub = 0
            s += img[y, x_add] - img[y, x_sub]
            tmp[y, x] = s
    colsum = np.zeros(w, np.int64)
    for dy in range(-radius, radius + 1):
        yy = dy
        if yy < 0:
            yy = 0
        elif yy >= h:
            yy = h - 1
        for x in range(w):
            colsum[x] += tmp[yy, x]
    for x in range(w):
        out[0, x] = (2 * colsum[x] + n) // (2 * n)
    for y in range(1, h):
        y_add = y + radius
        if y_add >= h:
            y_add = h - 1
        y_sub = y - 1 - radius
        if y_sub < 0:
            y_sub = 0
        for x in range(w):
            colsum[x] += tmp[y_add, x] - tmp[y_sub, x]
            out[y, x] = (2 * colsum[x] + n) // (2 * n)


def box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    """Mean filter over the edge-clamped (2r+1)^2 window, rounded half-up."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    img = np.ascontiguousarray(img, np.uint8)
    if not USE_NUMBA or radius == 0:
        return _box_blur_numpy(img, radius)
    out = np.empty_like(img)
    _box_blur_jit(img, radius, out)
    return out


# ---------------------------------------------------------------------------
# binary erosion (3x3 full element, borders shrink)
# ---------------------------------------------------------------------------

def _erode_once_numpy(bits: np.ndarray) -> np.ndarray:
    h, w = bits.shape
    p = np.zeros((h + 2, w + 2), np.uint8)
    p[1:-1, 1:-1] = bits
    acc = np.ones((h, w), np.uint8)
    for dy in range(3):
        for dx in range(3):
            acc &= p[dy:dy + h, dx:dx + w]
    return acc


@njit(cache=True)
def _erode_jit(bits, out):
    h, w = bits.shape
    for y in range(h):
        for x in range(w):
            keep = np.uint8(1)
            if y == 0 or y == h - 1 or x == 0 or x == w - 1:
                keep = np.uint8(0)
            else:
                for dy in range(-1, 2):
                    for dx in range(-1, 2):
                        if bits[y + dy, x + dx] == 0:
                            keep = np.uint8(0)
                            break
                    if keep == 0:
                        break
            out[y, x] = keep


def binary_erode(bits: np.ndarray, iterations: int) -> np.ndarray:
    """Erode n times with the full 3x3 element; out-of-bounds counts as 0."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    out = np.ascontiguousarray(bits, np.uint8).copy()
    for _ in range(iterations):
        if USE_NUMBA:
            nxt = np.empty_like(out)
            _erode_jit(out, nxt)
            out = nxt
        else:
            out = _erode_once_numpy(out)
    return out


# ---------------------------------------------------------------------------
# block mean (box-average downsample, partial edge blocks allowed)
# ---------------------------------------------------------------------------

def _block_mean_2d_numpy(img: np.ndarray, factor: int) -> np.ndarray:
    h, w = img.shape
    oh = -(-h // factor)
    ow = -(-w // factor)
    ii = np.zeros((h + 1, w + 1), np.int64)
    ii[1:, 1:] = img.cumsum(0, dtype=np.int64).cumsum(1)
    ys = np.arange(oh) * factor
    xs = np.arange(ow) * factor
    ye = np.minimum(ys + factor, h)
    xe = np.minimum(xs + factor, w)
    s = (ii[np.ix_(ye, xe)] - ii[np.ix_(ys, xe)]
         - ii[np.ix_(ye, xs)] + ii[np.ix_(ys, xs)])
    n = (ye - ys)[:, None] * (xe - xs)[None, :]
    return ((2 * s + n) // (2 * n)).astype(np.uint8)


@njit(cache=True)
def _block_mean_2d_jit(img, factor, out):
    h, w = img.shape
    oh, ow = out.shape
    for by in range(oh):
        y0 = by * factor
        y1 = min(y0 + factor, h)
        for bx in range(ow):
            x0 = bx * factor
            x1 = min(x0 + factor, w)
            s = np.int64(0)
            for y in range(y0, y1):
                for x in range(x0, x1):
                    s += img[y, x]
            n = (y1 - y0) * (x1 - x0)
            out[by, bx] = (2 * s + n) // (2 * n)


def block_mean_2d(img: np.ndarray, factor: int) -> np.ndarray:
    img = np.ascontiguousarray(img, np.uint8)
    if factor == 1:
        return img.copy()
    if not USE_NUMBA:
        return _block_mean_2d_numpy(img, factor)
    h, w = img.shape
    out = np.empty((-(-h // factor), -(-w // factor)), np.uint8)
    _block_mean_2d_jit(img, factor, out)
    return out


def block_mean_rgb(img: np.ndarray, factor: int) -> np.ndarray:
    """Box-average an (H, W, 3) image by an integer factor, rounding half-up."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    img = np.ascontiguousarray(img, np.uint8)
    if factor == 1:
        return img.copy()
    h, w, c = img.shape
    out = np.empty((-(-h // factor), -(-w // factor), c), np.uint8)
    for ch in range(c):
        out[:, :, ch] = block_mean_2d(img[:, :, ch], factor)
    return out


# ---------------------------------------------------------------------------
# bilinear resize (pixel-center mapping)
# ---------------------------------------------------------------------------

def _bilinear_numpy(img: np.ndarray, oh: int, ow: int) -> np.ndarray:
    h, w, _ = img.shape
    sy = (np.arange(oh, dtype=np.float64) + 0.5) * (h / oh) - 0.5
    sx = (np.arange(ow, dtype=np.float64) + 0.5) * (w / ow) - 0.5
    sy = np.minimum(np.maximum(sy, 0.0), h - 1.0)
    sx = np.minimum(np.maximum(sx, 0.0), w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None, None]
    fx = (sx - x0)[None, :, None]
    a = img[y0[:, None], x0[None, :], :].astype(np.float64)
    b = img[y0[:, None], x1[None, :], :].astype(np.float64)
    c = img[y1[:, None], x0[None, :], :].astype(np.float64)
    d = img[y1[:, None], x1[None, :], :].astype(np.float64)
    top = (1.0 - fx) * a + fx * b
    bot = (1.0 - fx) * c + fx * d
    val = (1.0 - fy) * top + fy * bot
    return np.floor(val + 0.5).astype(np.uint8)


@njit(cache=True)
def _bilinear_jit(img, out):
    h, w, c = img.shape
    oh, ow, _ = out.shape
    for i in range(oh):
        sy = (i + 0.5) * (h / oh) - 0.5
        if sy < 0.0:
            sy = 0.0
        elif sy > h - 1.0:
            sy = h - 1.0
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(ow):
            sx = (j + 0.5) * (w / ow) - 0.5
            if sx < 0.0:
                sx = 0.0
            elif sx > w - 1.0:
                sx = w - 1.0
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for ch in range(c):
                a = np.float64(img[y0, x0, ch])
                b = np.float64(img[y0, x1, ch])
                cc = np.float64(img[y1, x0, ch])
                d = np.float64(img[y1, x1, ch])
                top = (1.0 - fx) * a + fx * b
                bot = (1.0 - fx) * cc + fx * d
                val = (1.0 - fy) * top + fy * bot
                out[i, j, ch] = np.uint8(np.floor(val + 0.5))


def bilinear_resize(img: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Resize an (H, W, 3) image to (oh, ow) with bilinear interpolation."""
    img = np.ascontiguousarray(img, np.uint8)
    if (oh, ow) == img.shape[:2]:
        return img.copy()
    if not USE_NUMBA:
        return _bilinear_numpy(img, oh, ow)
    out = np.empty((oh, ow, img.shape[2]), np.uint8)
    _bilinear_jit(img, out)
    return out


# ---------------------------------------------------------------------------
# piecewise-affine warp over a triangulated control lattice
# ---------------------------------------------------------------------------
# Cell (i, j) of the lattice is split along the TL-BR diagonal into
# (TL, TR, BR) then (TL, BR, BL); triangles are visited row-major in that
# order and the first triangle containing a pixel claims it.

def lattice_triangles(xs: np.ndarray, ys: np.ndarray):
    """Vertex coordinate arrays (n, 3, 2) for the fixed triangulation of a
    lattice given per-node x and y coordinate grids of shape (k, k)."""
    k = xs.shape[0]
    tris = np.empty(((k - 1) * (k - 1) * 2, 3, 2), np.float64)
    t = 0
    for i in range(k - 1):
        for j in range(k - 1):
            tl = (xs[i, j], ys[i, j])
            tr = (xs[i, j + 1], ys[i, j + 1])
            bl = (xs[i + 1, j], ys[i + 1, j])
            br = (xs[i + 1, j + 1], ys[i + 1, j + 1])
            tris[t, 0] = tl
            tris[t, 1] = tr
            tris[t, 2] = br
            tris[t + 1, 0] = tl
            tris[t + 1, 1] = br
            tris[t + 1, 2] = bl
            t += 2
    return tris


def triangle_areas2(tris: np.ndarray) -> np.ndarray:
    """Twice the signed area of each (n, 3, 2) triangle."""
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    return e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]


def _warp_numpy(img, src_tris, dst_tris):
    h, w, _ = img.shape
    out = np.zeros_like(img)
    filled = np.zeros((h, w), np.bool_)
    for t in range(dst_tris.shape[0]):
        d0x, d0y = dst_tris[t, 0]
        e1x = dst_tris[t, 1, 0] - d0x
        e1y = dst_tris[t, 1, 1] - d0y
        e2x = dst_tris[t, 2, 0] - d0x
        e2y = dst_tris[t, 2, 1] - d0y
        det = e1x * e2y - e1y * e2x
        xmin = max(0, int(np.ceil(dst_tris[t, :, 0].min() - _EPS)))
        xmax = min(w - 1, int(np.floor(dst_tris[t, :, 0].max() + _EPS)))
        ymin = max(0, int(np.ceil(dst_tris[t, :, 1].min() - _EPS)))
        ymax = min(h - 1, int(np.floor(dst_tris[t, :, 1].max() + _EPS)))
        if xmin > xmax or ymin > ymax:
            continue
        px = np.arange(xmin, xmax + 1, dtype=np.float64)[None, :] - d0x
        py = np.arange(ymin, ymax + 1, dtype=np.float64)[:, None] - d0y
        l1 = (px * e2y - py * e2x) / det
        l2 = (e1x * py - e1y * px) / det
        inside = (l1 >= -_EPS) & (l2 >= -_EPS) & (l1 + l2 <= 1.0 + _EPS)
        inside &= ~filled[ymin:ymax + 1, xmin:xmax + 1]
        if not inside.any():
            continue
        s0x, s0y = src_tris[t, 0]
        sx = s0x + l1 * (src_tris[t, 1, 0] - s0x) + l2 * (src_tris[t, 2, 0] - s0x)
        sy = s0y + l1 * (src_tris[t, 1, 1] - s0y) + l2 * (src_tris[t, 2, 1] - s0y)
        sx = np.minimum(np.maximum(sx, 0.0), w - 1.0)
        sy = np.minimum(np.maximum(sy, 0.0), h - 1.0)
        iy, ix = np.nonzero(inside)
        sxv = sx[iy, ix]
        syv = sy[iy, ix]
        x0 = np.floor(sxv).astype(np.int64)
        y0 = np.floor(syv).astype(np.int64)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = (sxv - x0)[:, None]
        fy = (syv - y0)[:, None]
        a = img[y0, x0, :].astype(np.float64)
        b = img[y0, x1, :].astype(np.float64)
        c = img[y1, x0, :].astype(np.float64)
        d = img[y1, x1, :].astype(np.float64)
        top = (1.0 - fx) * a + fx * b
        bot = (1.0 - fx) * c + fx * d
        val = (1.0 - fy) * top + fy * bot
        out[iy + ymin, ix + xmin, :] = np.floor(val + 0.5).astype(np.uint8)
        filled[ymin:ymax + 1, xmin:xmax + 1] |= inside
    unfilled = ~filled
    if unfilled.any():
        out[unfilled] = img[unfilled]
    return out


@njit(cache=True)
def _warp_jit(img, src_tris, dst_tris, out, filled):
    h, w, c = img.shape
    eps = _EPS
    for t in range(dst_tris.shape[0]):
        d0x = dst_tris[t, 0, 0]
        d0y = dst_tris[t, 0, 1]
        e1x = dst_tris[t, 1, 0] - d0x
        e1y = dst_tris[t, 1, 1] - d0y
        e2x = dst_tris[t, 2, 0] - d0x
        e2y = dst_tris[t, 2, 1] - d0y
        det = e1x * e2y - e1y * e2x
        txmin = min(d0x, min(dst_tris[t, 1, 0], dst_tris[t, 2, 0]))
        txmax = max(d0x, max(dst_tris[t, 1, 0], dst_tris[t, 2, 0]))
        tymin = min(d0y, min(dst_tris[t, 1, 1], dst_tris[t, 2, 1]))
        tymax = max(d0y, max(dst_tris[t, 1, 1], dst_tris[t, 2, 1]))
        xmin = max(0, int(np.ceil(txmin - eps)))
        xmax = min(w - 1, int(np.floor(txmax + eps)))
        ymin = max(0, int(np.ceil(tymin - eps)))
        ymax = min(h - 1, int(np.floor(tymax + eps)))
        s0x = src_tris[t, 0, 0]
        s0y = src_tris[t, 0, 1]
        s1x = src_tris[t, 1, 0] - s0x
        s1y = src_tris[t, 1, 1] - s0y
        s2x = src_tris[t, 2, 0] - s0x
        s2y = src_tris[t, 2, 1] - s0y
        for y in range(ymin, ymax + 1):
            py = y - d0y
            for x in range(xmin, xmax + 1):
                if filled[y, x]:
                    continue
                px = x - d0x
                l1 = (px * e2y - py * e2x) / det
                l2 = (e1x * py - e1y * px) / det
                if l1 >= -eps and l2 >= -eps and l1 + l2 <= 1.0 + eps:
                    sx = s0x + l1 * s1x + l2 * s2x
                    sy = s0y + l1 * s1y + l2 * s2y
                    if sx < 0.0:
                        sx = 0.0
                    elif sx > w - 1.0:
                        sx = w - 1.0
                    if sy < 0.0:
                        sy = 0.0
                    elif sy > h - 1.0:
                        sy = h - 1.0
                    x0 = int(np.floor(sx))
                    y0 = int(np.floor(sy))
                    x1 = min(x0 + 1, w - 1)
                    y1 = min(y0 + 1, h - 1)
                    fx = sx - x0
                    fy = sy - y0
                    for ch in range(c):
                        a = np.float64(img[y0, x0, ch])
                        b = np.float64(img[y0, x1, ch])
                        cc = np.float64(img[y1, x0, ch])
                        d = np.float64(img[y1, x1, ch])
                        top = (1.0 - fx) * a + fx * b
                        bot = (1.0 - fx) * cc + fx * d
                        val = (1.0 - fy) * top + fy * bot
                        out[y, x, ch] = np.uint8(np.floor(val + 0.5))
                    filled[y, x] = True
    for y in range(h):
        for x in range(w):
            if not filled[y, x]:
                for ch in range(c):
                    out[y, x, ch] = img[y, x, ch]


def warp_piecewise(img: np.ndarray, src_tris: np.ndarray,
                   dst_tris: np.ndarray) -> np.ndarray:
    """Inverse-map each output pixel through its destination triangle's
    affine and sample the source bilinearly.  Triangles must pre-validate
    as non-folded (positive area)."""
    img = np.ascontiguousarray(img, np.uint8)
    if not USE_NUMBA:
        return _warp_numpy(img, src_tris, dst_tris)
    out = np.zeros_like(img)
    filled = np.zeros(img.shape[:2], np.bool_)
    _warp_jit(img, src_tris, dst_tris, out, filled)
    return out


def warmup() -> None:
    """Force JIT compilation of every kernel on tiny inputs (no-op on the
    numpy path).  Call before timing anything."""
    img = np.arange(48, dtype=np.uint8).reshape(4, 4, 3)
    gray = img[:, :, 0].copy()
    box_blur(gray, 1)
    binary_erode((gray > 8).astype(np.uint8), 1)
    block_mean_rgb(img, 2)
    block_mean_2d(gray, 2)
    bilinear_resize(img, 3, 3)
    xs, ys = np.meshgrid(np.linspace(0.0, 3.0, 2), np.linspace(0.0, 3.0, 2))
    tris = lattice_triangles(xs, ys)
    warp_piecewise(img, tris, tris)
