import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tansr.errors import ArgumentError, ShapeError
from tansr.imaging import (DIHEDRAL, ImagePlane, bicubic_resize, gaussian_window, inverse_transform,
                           load_y, psnr, read_png, resize_array, rgb_to_y, rgb_to_ycbcr, self_ensemble,
                           ssim, transform, write_png, ycbcr_to_rgb)
from test_train import resample_1d


def byte(arr):
    return ImagePlane(np.asarray(arr, dtype=np.float64), "byte")


class TestColour:
    def test_white_and_black(self):
        assert rgb_to_y(np.full((1, 1, 3), 255.0)).data.item() == pytest.approx(235.0, abs=1e-9)
        assert rgb_to_y(np.zeros((1, 1, 3))).data.item() == pytest.approx(16.0, abs=1e-12)

    @pytest.mark.parametrize("v", [0, 17, 128, 200, 255])
    def test_gray(self, v):
        y = rgb_to_y(np.full((2, 2, 3), float(v))).data
        np.testing.assert_allclose(y, 16 + 219 * v / 255, atol=1e-9)

    def test_ycbcr_round_trip(self, rng):
        rgb = rng.uniform(0, 255, (5, 6, 3))
        np.testing.assert_allclose(ycbcr_to_rgb(rgb_to_ycbcr(rgb)), rgb, atol=1e-9)


class TestPng:
    def test_gray_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, (7, 9)).astype(np.uint8)
        write_png(tmp_path / "g.png", img)
        np.testing.assert_array_equal(read_png(tmp_path / "g.png"), img)

    def test_rgb_to_y_plane(self, tmp_path):
        write_png(tmp_path / "c.png", np.full((4, 4, 3), 255, np.uint8))
        y = load_y(tmp_path / "c.png")
        assert y.range == "byte"
        np.testing.assert_allclose(y.data, 235.0, atol=1e-9)


class TestResize:
    @pytest.mark.parametrize("size", [(3, 5), (20, 20), (40, 17)])
    def test_constant(self, size):
        out = bicubic_resize(ImagePlane(np.full((10, 12), 0.4), "unit"), *size)
        np.testing.assert_allclose(out.data, 0.4, atol=1e-12)

    def test_identity(self, rng):
        x = rng.random((9, 7))
        np.testing.assert_array_equal(bicubic_resize(ImagePlane(x, "unit"), 7, 9).data, x)

    def test_ramp_upsample_oracle(self):
        ramp = np.linspace(0, 1, 9) ** 2
        out = resize_array(np.tile(ramp, (4, 1)), 4, 18)
        np.testing.assert_allclose(out[0], resample_1d(ramp, 18), atol=1e-5)

    def test_linear_interior_reproduced(self):
        ramp = np.arange(16.0)
        out = resize_array(ramp[None], 1, 32)[0]
        centres = (np.arange(32) + 0.5) / 2 - 0.5
        np.testing.assert_allclose(out[4:-4], centres[4:-4], atol=1e-12)

    def test_mean_preserved_on_periodic_content(self):
        y, x = np.mgrid[0:64, 0:64]
        img = 100 + 20 * np.sin(2 * np.pi * x / 16) * np.cos(2 * np.pi * y / 8)
        for size in (32, 128):
            out = resize_array(img, size, size)
            b = size // 8
            assert out[b:-b, b:-b].mean() == pytest.approx(img[8:-8, 8:-8].mean(), rel=1e-3)

    def test_bad_size(self):
        with pytest.raises(ArgumentError):
            resize_array(np.zeros((4, 4)), 0, 4)


class TestPsnr:
    def test_identical_is_inf(self, rng):
        a = byte(rng.integers(0, 256, (8, 8)))
        assert psnr(a, a) == math.inf

    def test_byte_mse_one(self, rng):
        a = rng.integers(1, 255, (10, 10)).astype(float)
        sign = np.where(rng.random((10, 10)) < 0.5, -1.0, 1.0)
        assert psnr(byte(a), byte(a + sign)) == pytest.approx(10 * math.log10(255 ** 2), abs=1e-9)
        assert psnr(byte(a), byte(a + sign)) == pytest.approx(48.13, abs=5e-3)

    def test_unit_mse(self):
        a = ImagePlane(np.zeros((6, 6)), "unit")
        assert psnr(a, ImagePlane(np.full((6, 6), 0.1), "unit")) == pytest.approx(20.0, abs=1e-6)

    def test_symmetric(self, rng):
        a, b = byte(rng.random((8, 8)) * 255), byte(rng.random((8, 8)) * 255)
        assert psnr(a, b, 1) == psnr(b, a, 1)

    def test_shave(self):
        a = np.zeros((8, 8))
        b = a.copy()
        b[0, :] = 255
        assert psnr(byte(a), byte(b), shave=1) == math.inf

    def test_errors(self):
        with pytest.raises(ShapeError):
            psnr(byte(np.zeros((4, 4))), byte(np.zeros((4, 5))))
        with pytest.raises(ArgumentError):
            psnr(byte(np.zeros((4, 4))), ImagePlane(np.zeros((4, 4)), "unit"))
        with pytest.raises(ArgumentError):
            psnr(byte(np.zeros((4, 4))), byte(np.zeros((4, 4))), shave=2)


def naive_ssim(x, y):
    """Window-by-window SSIM with an explicit 2-D Gaussian."""
    g = gaussian_window()
    w2 = np.outer(g, g)
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    scores = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            mx, my = (w2 * px).sum(), (w2 * py).sum()
            vx = (w2 * (px - mx) ** 2).sum()
            vy = (w2 * (py - my) ** 2).sum()
            cxy = (w2 * (px - mx) * (py - my)).sum()
            scores.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(scores))


class TestSsim:
    def test_identical(self, rng):
        a = byte(rng.random((16, 16)) * 255)
        assert ssim(a, a) == 1.0

    def test_constant_pair(self):
        u, c = 100.0, 30.0
        c1 = (0.01 * 255) ** 2
        expected = (2 * u * (u + c) + c1) / (u * u + (u + c) ** 2 + c1)
        assert ssim(byte(np.full((15, 15), u)), byte(np.full((15, 15), u + c))) == pytest.approx(expected, abs=1e-9)

    def test_naive_oracle(self, rng):
        x = rng.random((19, 17)) * 255
        y = np.clip(x + rng.normal(0, 20, x.shape), 0, 255)
        assert ssim(byte(x), byte(y)) == pytest.approx(naive_ssim(x, y), abs=1e-6)

    def test_below_one_for_distinct(self, rng):
        for _ in range(5):
            x = rng.random((12, 12)) * 255
            y = x.copy()
            y[rng.integers(12), rng.integers(12)] += 1.0
            assert ssim(byte(x), byte(y)) < 1.0

    def test_unit_inputs_are_rescaled(self, rng):
        x, y = rng.random((12, 12)), rng.random((12, 12))
        assert ssim(ImagePlane(x, "unit"), ImagePlane(y, "unit")) == pytest.approx(
            ssim(byte(x * 255), byte(y * 255)), abs=1e-12)

    def test_too_small(self):
        with pytest.raises(ArgumentError):
            ssim(byte(np.zeros((8, 8))), byte(np.zeros((8, 8))))


def bicubic_x2(arr):
    return resize_array(arr, arr.shape[0] * 2, arr.shape[1] * 2)


class TestSelfEnsemble:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 7), st.integers(0, 2**31))
    def test_round_trip(self, h, w, i, seed):
        x = np.random.default_rng(seed).random((h, w))
        t = DIHEDRAL[i]
        np.testing.assert_array_equal(inverse_transform(transform(x, t), t), x)

    def test_eight_distinct_transforms(self, rng):
        x = rng.random((4, 4))
        assert len({transform(x, t).tobytes() for t in DIHEDRAL}) == 8

    def test_bicubic_stand_in(self, rng):
        x = ImagePlane(rng.random((9, 13)), "unit")
        np.testing.assert_allclose(self_ensemble(x, bicubic_x2).data, bicubic_x2(x.data), atol=1e-6)

    def test_identical_outputs(self, rng):
        fixed = rng.random((10, 10))
        out = self_ensemble(ImagePlane(np.zeros((10, 10)), "unit"), lambda a: fixed)
        # transform-independent model output, so the average is the symmetrised image
        sym = np.mean([inverse_transform(fixed, t) for t in DIHEDRAL], axis=0)
        np.testing.assert_allclose(out.data, sym, atol=1e-15)
        const = np.full((10, 10), 0.3)
        assert np.all(self_ensemble(ImagePlane(np.zeros((10, 10)), "unit"), lambda a: const).data == 0.3)

    def test_rotation_invariance_exact(self, rng):
        x = rng.random((7, 11))
        model = lambda a: np.tanh(bicubic_x2(a) * 3 + a.sum())  # arbitrary, not equivariant
        plain = self_ensemble(ImagePlane(x, "unit"), model).data
        rotated = self_ensemble(ImagePlane(np.rot90(x), "unit"), model).data
        np.testing.assert_array_equal(rotated, np.rot90(plain))
