import unittest

import numpy as np
import pytest

from invcloud.core.errors import InvalidArgumentError, OutOfRangeError
from invcloud.core.geometry import (
    GradientField,
    HeightMap,
    PixelCoord,
    gradient_of,
    image_center_and_scale,
    integrate_gradients_dct,
    mm_to_world,
    pixels_to_world,
    sample_bilinear,
    sample_bilinear_many,
    world_to_mm,
    worlds_to_pixels,
)
from invcloud.sim.render import sphere_cap
from invcloud.util.config import SensorConfig


class TestCenterAndScale(unittest.TestCase):
    def test_default_sensor(self) -> None:
        assert image_center_and_scale(320, 240, 10.0) == (159.5, 119.5, 0.01)

    def test_rejects_bad_dims(self) -> None:
        with pytest.raises(InvalidArgumentError):
            image_center_and_scale(0, 240, 10.0)
        with pytest.raises(InvalidArgumentError):
            image_center_and_scale(320, 240, 0.0)

    def test_mm_conversion(self) -> None:
        # 1 mm = ppmm 画素 = ppmm * s ワールド
        assert mm_to_world(1.0, 10.0) == pytest.approx(0.1)
        assert world_to_mm(mm_to_world(2.5, 10.0), 10.0) == pytest.approx(2.5)


class TestBilinear(unittest.TestCase):
    def setUp(self) -> None:
        rng = np.random.default_rng(0)
        self.hm = HeightMap(rng.normal(size=(24, 32)), 10.0)

    def test_exact_at_lattice(self) -> None:
        for y in range(self.hm.height):
            for x in range(self.hm.width):
                assert sample_bilinear(self.hm, PixelCoord(x, y)) == self.hm.data[y, x]

    def test_many_matches_single(self) -> None:
        xs = np.array([0.0, 3.5, 31.0, 12.25])
        ys = np.array([0.0, 7.75, 23.0, 0.5])
        many = sample_bilinear_many(self.hm, xs, ys)
        single = [sample_bilinear(self.hm, PixelCoord(x, y)) for x, y in zip(xs, ys, strict=True)]
        assert np.array_equal(many, np.array(single))

    def test_constant_grid(self) -> None:
        hm = HeightMap.flat(8, 6, 10.0, value=3.25)
        assert sample_bilinear(hm, PixelCoord(2.3, 4.9)) == pytest.approx(3.25)

    def test_out_of_bounds(self) -> None:
        with pytest.raises(OutOfRangeError):
            sample_bilinear(self.hm, PixelCoord(-0.1, 0.0))
        with pytest.raises(OutOfRangeError):
            sample_bilinear(self.hm, PixelCoord(0.0, self.hm.height - 0.5))

    def test_non_finite_rejected(self) -> None:
        data = np.zeros((4, 4))
        data[1, 1] = np.nan
        with pytest.raises(InvalidArgumentError):
            HeightMap(data, 10.0)


class TestPixelWorld(unittest.TestCase):
    def test_round_trip(self) -> None:
        rng = np.random.default_rng(1)
        hm = HeightMap(rng.normal(size=(240, 320)), 10.0)
        xs = rng.uniform(0, 319, 100_000)
        ys = rng.uniform(0, 239, 100_000)
        back = worlds_to_pixels(pixels_to_world(hm, xs, ys), hm.cx, hm.cy, hm.s)
        assert np.max(np.abs(back - np.column_stack((xs, ys)))) <= 1e-12

    def test_center_maps_to_origin(self) -> None:
        hm = HeightMap.flat(320, 240, 10.0)
        w = pixels_to_world(hm, np.array([159.5]), np.array([119.5]))[0]
        assert np.allclose(w, 0.0)

    def test_y_axis_points_up(self) -> None:
        hm = HeightMap.flat(320, 240, 10.0)
        w = pixels_to_world(hm, np.array([159.5, 159.5]), np.array([0.0, 239.0]))
        assert w[0, 1] > 0 > w[1, 1]


class TestDctIntegration(unittest.TestCase):
    def test_cosine_surface(self) -> None:
        h, w = 64, 64
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        kx, ky = np.pi / (w - 1), 2 * np.pi / (h - 1)
        surface = np.cos(kx * xs) * np.cos(ky * ys)
        gx = -kx * np.sin(kx * xs) * np.cos(ky * ys)
        gy = -ky * np.cos(kx * xs) * np.sin(ky * ys)
        rec = integrate_gradients_dct(GradientField(gx, gy, 10.0))
        expected = surface - surface.mean()
        assert np.sqrt(np.mean((rec.data - expected) ** 2)) <= 1e-6

    def test_sphere_cap(self) -> None:
        indent = 1.0
        cap, grad = sphere_cap(SensorConfig(), radius_mm=8.0, indent_mm=indent)
        rec = integrate_gradients_dct(grad)
        expected = cap.data - cap.data.mean()
        depth = indent * cap.ppmm
        assert np.sqrt(np.mean((rec.data - expected) ** 2)) <= 0.01 * depth

    def test_zero_field(self) -> None:
        rec = integrate_gradients_dct(GradientField(np.zeros((8, 10)), np.zeros((8, 10)), 10.0))
        assert np.all(rec.data == 0.0)

    def test_reintegration_is_idempotent(self) -> None:
        rng = np.random.default_rng(2)
        g = GradientField(rng.normal(size=(20, 30)), rng.normal(size=(20, 30)), 10.0)
        first = integrate_gradients_dct(g)
        second = integrate_gradients_dct(gradient_of(first))
        assert np.sqrt(np.mean((second.data - first.data) ** 2)) <= 1e-6

    def test_gradient_of_integrable_field_round_trips(self) -> None:
        h, w = 32, 48
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        surface = np.cos(3 * np.pi * xs / (w - 1)) + 0.5 * np.cos(2 * np.pi * ys / (h - 1))
        hm = HeightMap(surface - surface.mean(), 10.0)
        rec = integrate_gradients_dct(gradient_of(hm))
        assert np.allclose(rec.data, hm.data, atol=1e-9)

    def test_mismatched_gradient_dims(self) -> None:
        with pytest.raises(InvalidArgumentError):
            GradientField(np.zeros((8, 10)), np.zeros((8, 9)), 10.0)

    def test_linear_in_gradients(self) -> None:
        rng = np.random.default_rng(5)
        g1 = GradientField(rng.normal(size=(24, 32)), rng.normal(size=(24, 32)), 10.0)
        g2 = GradientField(rng.normal(size=(24, 32)), rng.normal(size=(24, 32)), 10.0)
        a, b = 1.7, -0.4
        mixed = GradientField(a * g1.gx + b * g2.gx, a * g1.gy + b * g2.gy, 10.0)
        lhs = integrate_gradients_dct(mixed).data
        rhs = a * integrate_gradients_dct(g1).data + b * integrate_gradients_dct(g2).data
        assert np.max(np.abs(lhs - rhs)) <= 1e-9
