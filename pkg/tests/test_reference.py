import unittest

import numpy as np
import pytest

from invcloud.core.errors import DetectionFailureError, InvalidArgumentError
from invcloud.core.geometry import pixels_to_world
from invcloud.core.reference import build_reference_cloud, detect_markers, grid_index, interpolate_grid, lookup
from invcloud.sim.render import marker_centers, render_marker_mask, render_no_contact_frame
from invcloud.util.config import NoiseConfig, SensorConfig
from tests.scenes import reference


class TestDetectMarkers(unittest.TestCase):
    def setUp(self) -> None:
        self.sensor = SensorConfig()
        self.frame = render_no_contact_frame(self.sensor)
        assert self.frame.marker_mask is not None
        self.mask = self.frame.marker_mask

    def test_detects_all_markers_in_grid_order(self) -> None:
        grid = detect_markers(self.frame.height, self.mask, (7, 9))
        assert grid.count == 63
        assert np.array_equal(grid.pixels, marker_centers(self.sensor))

    def test_occluded_marker_reports_found_count(self) -> None:
        mask, _ = render_marker_mask(self.sensor, occlude=1)
        with pytest.raises(DetectionFailureError) as exc_info:
            detect_markers(self.frame.height, mask, (7, 9))
        assert exc_info.value.found == 62
        assert exc_info.value.expected == 63
        assert exc_info.value.exit_code == 3

    def test_mask_shape_mismatch(self) -> None:
        with pytest.raises(InvalidArgumentError):
            detect_markers(self.frame.height, self.mask[:-1], (7, 9))

    def test_jittered_markers_still_sorted(self) -> None:
        mask, centers = render_marker_mask(self.sensor, jitter_px=1.0, seed=3)
        grid = detect_markers(self.frame.height, mask, (7, 9))
        assert np.max(np.abs(grid.pixels - centers)) < 1.0


class TestReferenceCloud(unittest.TestCase):
    def test_default_grid_has_475_points(self) -> None:
        _, cloud = reference()
        assert cloud.size == 475
        assert np.array_equal(cloud.ids, np.arange(1, 476, dtype=np.uint64))

    def test_denser_grid(self) -> None:
        _, cloud = reference(31, 41)
        assert cloud.size == 1271
        assert np.unique(cloud.ids).size == 1271

    def test_index_formula_exhaustive(self) -> None:
        _, cloud = reference()
        n = cloud.n
        for r in range(cloud.grid_rows):
            for c in range(cloud.grid_cols):
                g = grid_index(r, c, n)
                assert int(cloud.ids[g - 1]) == g == r * (n + 1) + c + 1

    def test_marker_points_coincide_bitwise(self) -> None:
        height, cloud = reference()
        centers = marker_centers(SensorConfig())
        marker_world = pixels_to_world(height, centers[..., 0].ravel(), centers[..., 1].ravel()).reshape(7, 9, 3)
        for i in range(7):
            for j in range(9):
                g = grid_index(3 * i, 3 * j, cloud.n)
                assert np.array_equal(cloud.world[g - 1], marker_world[i, j])

    def test_lookup(self) -> None:
        _, cloud = reference()
        assert lookup(cloud, 1).is_ok()
        assert lookup(cloud, 475).is_ok()
        assert lookup(cloud, 0).is_err()
        assert "Unknown point id" in lookup(cloud, 476).unwrap_err()

    def test_not_divisible_target_rejected(self) -> None:
        frame = render_no_contact_frame()
        assert frame.marker_mask is not None
        markers = detect_markers(frame.height, frame.marker_mask, (7, 9))
        with pytest.raises(InvalidArgumentError):
            interpolate_grid(markers, frame.height, 19, 24)
        with pytest.raises(InvalidArgumentError):
            interpolate_grid(markers, frame.height, 3, 24)

    def test_cloud_is_immutable(self) -> None:
        _, cloud = reference()
        with pytest.raises(ValueError, match="read-only"):
            cloud.world[0, 0] = 1.0

    def test_noisy_frame_same_ids(self) -> None:
        sensor = SensorConfig()
        frame = render_no_contact_frame(sensor, NoiseConfig(0.02, 0.0, 0.0), seed=5)
        assert frame.marker_mask is not None
        cloud = build_reference_cloud(frame.height, frame.marker_mask, (7, 9), (19, 25))
        _, clean = reference()
        assert np.array_equal(cloud.ids, clean.ids)
        assert np.allclose(cloud.pixels, clean.pixels, atol=1e-9)
        assert cloud.built_from == clean.built_from
