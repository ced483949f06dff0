import numpy as np
import pytest

from maskvo.geometry import Intrinsics
from maskvo.image_pyramid import (
    PyramidError,
    box_downsample,
    build_pyramid,
    image_gradient,
    to_gray,
)

K = Intrinsics(100.0, 100.0, 207.5, 63.5, 416, 128)


class TestToGray:
    def test_white(self):
        img = np.full((2, 2, 3), 255, dtype=np.uint8)
        assert np.allclose(to_gray(img), 1.0)

    def test_black(self):
        img = np.zeros((2, 2, 3), dtype=np.uint8)
        assert np.allclose(to_gray(img), 0.0)

    def test_pure_red(self):
        img = np.zeros((1, 1, 3), dtype=np.uint8)
        img[..., 0] = 255
        assert to_gray(img)[0, 0] == pytest.approx(0.299)

    def test_gray_input_passthrough(self):
        img = np.array([[0, 128, 255]], dtype=np.uint8)
        assert np.allclose(to_gray(img), [[0.0, 128 / 255, 1.0]])

    def test_rejects_float_input(self):
        with pytest.raises(PyramidError):
            to_gray(np.zeros((2, 2), dtype=np.float64))


class TestPyramid:
    def test_level_dimensions(self):
        img = np.zeros((128, 416))
        pyr = build_pyramid(img, K, 4)
        dims = [lvl[0].shape for lvl in pyr.levels]
        assert dims == [(128, 416), (64, 208), (32, 104), (16, 52)]

    def test_constant_image_stays_constant(self):
        pyr = build_pyramid(np.full((64, 64), 0.42), K2(64, 64), 3)
        for img, _ in pyr.levels:
            assert np.allclose(img, 0.42)

    def test_intrinsics_scaling(self):
        img = np.zeros((128, 416))
        pyr = build_pyramid(img, K, 3)
        assert pyr[2][1].fx == pytest.approx(25.0)
        assert pyr[1][1].cx == pytest.approx((207.5 + 0.5) / 2 - 0.5)
        assert pyr[2][1].width == 104

    def test_too_many_levels(self):
        with pytest.raises(PyramidError):
            build_pyramid(np.zeros((32, 32)), K2(32, 32), 4)  # level 3 would be 4x4

    def test_mean_preserved_even_dims(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(64, 96))
        pyr = build_pyramid(img, K2(96, 64), 4)
        for lvl_img, _ in pyr.levels:
            assert abs(lvl_img.mean() - img.mean()) < 1e-6

    def test_values_stay_in_unit_interval(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(size=(33, 49))  # odd dims exercise the crop
        pyr = build_pyramid(img, K2(49, 33), 2)
        for lvl_img, _ in pyr.levels:
            assert lvl_img.min() >= 0.0 and lvl_img.max() <= 1.0


def K2(w, h):
    return Intrinsics(80.0, 80.0, (w - 1) / 2, (h - 1) / 2, w, h)


class TestGradient:
    def test_constant(self):
        gx, gy = image_gradient(np.full((5, 6), 0.3))
        assert np.allclose(gx, 0.0)
        assert np.allclose(gy, 0.0)

    def test_ramp(self):
        img = np.tile(np.arange(8.0), (5, 1))
        gx, gy = image_gradient(img)
        assert np.allclose(gx, 1.0)
        assert np.allclose(gy, 0.0)

    def test_downsampled_ramp_gradient(self):
        # box averaging a ramp gives a ramp at twice the per-pixel slope
        img = np.tile(np.arange(16.0), (8, 1))
        down = box_downsample(img)
        gx, gy = image_gradient(down)
        assert np.allclose(gx[:, 1:-1], 2.0)
        assert np.allclose(gy, 0.0)
