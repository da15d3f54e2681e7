from fractions import Fraction

import numpy as np
import pytest

from slidepipe import (
    DegenerateHistogram,
    TissueMask,
    binary_erode,
    box_blur,
    build_mask,
    decode_mask_png,
    encode_mask_png,
    grayscale,
    open_slide,
    otsu_threshold,
    synth_slide,
    write_pyramid,
)
from slidepipe.mask import read_mask_text


def otsu_oracle(hist):
    """Independent brute force: textbook sigma_b2 per threshold in exact
    rational arithmetic, smallest argmax.  Returns (t, sigma) or None."""
    total = sum(hist)
    best_t, best_sigma = None, Fraction(0)
    for t in range(255):
        n0 = sum(hist[:t + 1])
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        mu0 = Fraction(sum(i * c for i, c in enumerate(hist[:t + 1])), n0)
        mu1 = Fraction(sum(i * c for i, c in enumerate(hist) if i > t), n1)
        w0 = Fraction(n0, total)
        w1 = Fraction(n1, total)
        sigma = w0 * w1 * (mu0 - mu1) ** 2
        if sigma > best_sigma:
            best_sigma, best_t = sigma, t
    if best_t is None:
        return None
    return best_t, best_sigma


class TestGrayscale:
    def test_white(self):
        px = np.full((2, 2, 3), 255, np.uint8)
        assert (grayscale(px) == 255).all()

    def test_pure_red(self):
        px = np.zeros((1, 1, 3), np.uint8)
        px[..., 0] = 255
        assert grayscale(px)[0, 0] == 76

    def test_gray_identity(self):
        for g in range(256):
            px = np.full((1, 1, 3), g, np.uint8)
            assert grayscale(px)[0, 0] == g


class TestBoxBlur:
    def test_radius_zero_identity(self, rng):
        img = rng.integers(0, 256, (9, 9), dtype=np.uint8)
        assert np.array_equal(box_blur(img, 0), img)

    def test_constant_unchanged(self):
        img = np.full((16, 16), 123, np.uint8)
        for r in (1, 2, 4):
            assert np.array_equal(box_blur(img, r), img)

    def test_single_bright_center(self):
        img = np.zeros((3, 3), np.uint8)
        img[1, 1] = 255
        out = box_blur(img, 1)
        assert out[1, 1] == 28  # 255/9 rounded

    def test_matches_direct_mean(self, rng):
        img = rng.integers(0, 256, (20, 15), dtype=np.uint8)
        r = 2
        out = box_blur(img, r)
        for y in range(20):
            for x in range(15):
                total = 0
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        yy = min(max(y + dy, 0), 19)
                        xx = min(max(x + dx, 0), 14)
                        total += int(img[yy, xx])
                n = (2 * r + 1) ** 2
                assert out[y, x] == (2 * total + n) // (2 * n)


class TestOtsu:
    def test_single_bin_degenerate(self):
        hist = np.zeros(256, np.int64)
        hist[128] = 1000
        with pytest.raises(DegenerateHistogram):
            otsu_threshold(hist)

    def test_two_spikes_tie_break(self):
        hist = np.zeros(256, np.int64)
        hist[10] = 60
        hist[200] = 40
        stats = otsu_threshold(hist)
        assert stats.threshold == 10  # every t in 10..199 ties; smallest wins
        assert stats.w0 == pytest.approx(0.6)
        assert stats.mu0 == pytest.approx(10.0)
        assert stats.mu1 == pytest.approx(200.0)
        assert stats.sigma_b2 == pytest.approx(0.6 * 0.4 * 190 ** 2)

    def test_matches_oracle_on_random_histograms(self, rng):
        for _ in range(100):
            hist = rng.integers(0, 50, 256).astype(np.int64)
            expected = otsu_oracle(hist.tolist())
            if expected is None:
                with pytest.raises(DegenerateHistogram):
                    otsu_threshold(hist)
                continue
            stats = otsu_threshold(hist)
            assert stats.threshold == expected[0]
            assert stats.sigma_b2 == pytest.approx(float(expected[1]))

    def test_sparse_histograms_against_oracle(self, rng):
        for _ in range(50):
            hist = np.zeros(256, np.int64)
            bins = rng.integers(0, 256, int(rng.integers(1, 5)))
            for b in bins:
                hist[b] += int(rng.integers(1, 100))
            expected = otsu_oracle(hist.tolist())
            if expected is None:
                with pytest.raises(DegenerateHistogram):
                    otsu_threshold(hist)
            else:
                assert otsu_threshold(hist).threshold == expected[0]

    def test_empty_histogram_rejected(self):
        with pytest.raises(ValueError):
            otsu_threshold(np.zeros(256, np.int64))


class TestErosion:
    def test_identity_at_zero(self, rng):
        bits = (rng.random((10, 10)) < 0.5).astype(np.uint8)
        assert np.array_equal(binary_erode(bits, 0), bits)

    def test_all_ones_border_shrinks(self):
        bits = np.ones((5, 5), np.uint8)
        out = binary_erode(bits, 1)
        expected = np.zeros((5, 5), np.uint8)
        expected[1:4, 1:4] = 1
        assert np.array_equal(out, expected)

    def test_isolated_pixel_dies(self):
        bits = np.zeros((7, 7), np.uint8)
        bits[3, 3] = 1
        assert not binary_erode(bits, 1).any()

    def test_anti_extensive_and_monotone(self, rng):
        for _ in range(20):
            a = (rng.random((24, 31)) < 0.7).astype(np.uint8)
            b = np.maximum(a, (rng.random((24, 31)) < 0.3).astype(np.uint8))
            ea, eb = binary_erode(a, 1), binary_erode(b, 1)
            assert (ea <= a).all()            # output subset of input
            assert (ea <= eb).all()           # A subset B -> erode(A) subset erode(B)

    def test_iterations_compose(self, rng):
        bits = (rng.random((30, 30)) < 0.8).astype(np.uint8)
        assert np.array_equal(binary_erode(bits, 3),
                              binary_erode(binary_erode(bits, 2), 1))


class TestBuildMask:
    def test_synth_mask_covers_ground_truth(self, synth_dir):
        d, truths = synth_dir
        for path in sorted(d.glob("*.tif")):
            with open_slide(path) as slide:
                mask = build_mask(slide, blur_radius=2, erode_iters=1)
            truth = truths[path.stem]
            assert not mask.degenerate
            assert mask.tissue_pixel_count > 0
            ds = int(mask.mask_downsample)
            # ground truth at mask scale: tissue if any level-0 px in footprint
            gt = truth.reshape(mask.height_px, ds, mask.width_px, ds)
            gt = gt.any(axis=(1, 3))
            agree = (mask.bits.astype(bool) & gt).sum()
            assert agree >= 0.9 * mask.tissue_pixel_count

    def test_every_mask_pixel_footprint_touches_truth(self, synth_dir):
        # no false tissue beyond one blurred mask pixel of boundary
        d, truths = synth_dir
        for path in sorted(d.glob("*.tif")):
            with open_slide(path) as slide:
                mask = build_mask(slide, blur_radius=2, erode_iters=1)
            truth = truths[path.stem]
            ds = int(mask.mask_downsample)
            gt = truth.reshape(mask.height_px, ds, mask.width_px, ds)
            gt = gt.any(axis=(1, 3))
            stray = mask.bits.astype(bool) & ~gt
            assert not stray.any()

    def test_blank_white_slide_degenerate(self, tmp_path):
        white = np.full((512, 512, 3), 255, np.uint8)
        levels = [white, np.full((128, 128, 3), 255, np.uint8),
                  np.full((32, 32, 3), 255, np.uint8)]
        path = write_pyramid(levels, 128, tmp_path / "white.tif")
        with open_slide(path) as slide:
            mask = build_mask(slide)
        assert mask.degenerate
        assert mask.tissue_pixel_count == 0

    def test_deterministic(self, synth_dir):
        d, _ = synth_dir
        path = sorted(d.glob("*.tif"))[0]
        with open_slide(path) as slide:
            m1 = build_mask(slide)
            m2 = build_mask(slide)
        assert m1 == m2
        assert encode_mask_png(m1) == encode_mask_png(m2)

    def test_oversized_thumbnail_reduced(self, tmp_path, rng):
        # single-level slide: the "coarsest" level is 4096 wide, so the
        # mask must be box-reduced to <= 2048 per side
        lv0 = rng.integers(200, 256, (512, 4096, 3), dtype=np.uint8)
        lv0[:, :100] = 30
        path = write_pyramid([lv0], 256, tmp_path / "wide.tif")
        with open_slide(path) as slide:
            mask = build_mask(slide)
        assert max(mask.width_px, mask.height_px) <= 2048
        assert mask.mask_downsample == 2.0


class TestMaskPng:
    def test_one_pixel_round_trip(self):
        mask = TissueMask(np.ones((1, 1), np.uint8), 32.0)
        assert decode_mask_png(encode_mask_png(mask)) == mask

    def test_round_trip_preserves_downsample(self, rng):
        bits = (rng.random((40, 50)) < 0.4).astype(np.uint8)
        mask = TissueMask(bits, 12.5)
        got = decode_mask_png(encode_mask_png(mask))
        assert got == mask
        assert got.mask_downsample == 12.5

    def test_all_zero_and_all_one(self):
        for fill in (0, 1):
            mask = TissueMask(np.full((17, 23), fill, np.uint8), 4.0)
            assert decode_mask_png(encode_mask_png(mask)) == mask

    def test_extra_text_preserved(self):
        mask = TissueMask(np.zeros((4, 4), np.uint8), 2.0)
        data = encode_mask_png(mask, {"slide_hash": "abc123"})
        assert read_mask_text(data)["slide_hash"] == "abc123"
        assert decode_mask_png(data) == mask
