import unittest

import numpy as np
import pytest

from invcloud.core.errors import InvalidArgumentError
from invcloud.core.pose import Pose
from invcloud.sim.render import (
    marker_centers,
    noise_seed_for,
    penetration_mm,
    render_contact_patches,
    render_frame,
    render_marker_mask,
    render_sequence,
    render_slip_sequence,
    sphere_cap,
)
from invcloud.sim.scene import SceneObject, object_from_config, scissors_outline
from invcloud.sim.trajectory import (
    Placement,
    Trajectory,
    check_continuity,
    multi_contact_trajectory,
    return_loop_trajectory,
    scissors_staircase,
    single_axis_trajectory,
    static_trajectory,
    trajectory_from_config,
)
from invcloud.util.config import NoiseConfig, SensorConfig
from tests.scenes import ELLIPSE, SPHERE


class TestSceneObject(unittest.TestCase):
    def test_sphere_underside(self) -> None:
        f = SPHERE.underside(np.array([0.0, 6.0, 11.0]), np.array([0.0, 6.0, 0.0]))
        assert f[0] == 0.0
        assert f[1] == pytest.approx(10.0 - np.sqrt(28.0))
        assert np.isinf(f[2])

    def test_ellipsoid_lowest_point_at_origin(self) -> None:
        f = ELLIPSE.underside(np.array([0.0, 6.0]), np.array([0.0, 0.0]))
        assert f[0] == 0.0
        assert f[1] == pytest.approx(6.0 * (1.0 - np.sqrt(0.75)))

    def test_box_corner_rounded_edge(self) -> None:
        box = SceneObject.box_corner(10.0, 8.0, 0.5)
        f = box.underside(np.array([5.0, 0.0, -1.0]), np.array([4.0, 4.0, 4.0]))
        assert f[0] == 0.0
        assert f[1] > 0.0
        assert np.isinf(f[2])

    def test_extruded_outline_contains(self) -> None:
        obj = SceneObject.extruded(scissors_outline())
        inside = obj.contains(np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]]))
        assert inside.tolist() == [True, True, False]

    def test_wrong_dims(self) -> None:
        with pytest.raises(InvalidArgumentError):
            SceneObject("ellipsoid", (1.0, 2.0))
        with pytest.raises(InvalidArgumentError):
            SceneObject.sphere(-1.0)

    def test_self_intersecting_outline(self) -> None:
        bowtie = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(InvalidArgumentError):
            SceneObject.extruded(bowtie)

    def test_from_config(self) -> None:
        assert object_from_config("sphere", (5.0,)).dims == (5.0,)
        assert object_from_config("extruded_outline", (0.5,)).outline is not None
        with pytest.raises(InvalidArgumentError):
            object_from_config("extruded_outline", (0.5,), "knife")


class TestTrajectory(unittest.TestCase):
    def test_static(self) -> None:
        traj = static_trajectory(5)
        assert len(traj) == 5
        assert all(p == Pose() for p in traj.poses)

    def test_single_axis_has_n_plus_one_points(self) -> None:
        traj = single_axis_trajectory("rz", -1.0, 90)
        assert len(traj) == 91
        assert traj.poses[-1].rz == -90.0
        assert traj.poses[-1].tx == 0.0

    def test_return_loop_is_bitwise_palindrome(self) -> None:
        traj = return_loop_trajectory("tx", 3.0, 7)
        poses = traj.poses
        assert len(poses) == 15
        assert poses == poses[::-1]
        assert poses[7].tx == 3.0

    def test_unknown_dof(self) -> None:
        with pytest.raises(InvalidArgumentError):
            single_axis_trajectory("yaw", 1.0, 3)  # type: ignore[arg-type]

    def test_indices_must_increase(self) -> None:
        with pytest.raises(InvalidArgumentError):
            Trajectory("static", [(1, Pose()), (1, Pose())])

    def test_continuity(self) -> None:
        check_continuity(single_axis_trajectory("rz", -5.0, 3))
        with pytest.raises(InvalidArgumentError):
            check_continuity(single_axis_trajectory("tx", 2.5, 3))

    def test_multi_contact_needs_two(self) -> None:
        with pytest.raises(InvalidArgumentError):
            multi_contact_trajectory([Placement(0.0, 0.0)])

    def test_staircase(self) -> None:
        traj = scissors_staircase()
        assert traj.kind == "multi_contact"
        assert len(traj.placements) == 5
        assert traj.schedule == []

    def test_from_config(self) -> None:
        assert trajectory_from_config("static", n_frames=3).kind == "static"
        assert len(trajectory_from_config("return_loop", dof="ry", amplitude=2.0, steps=4)) == 9
        assert len(trajectory_from_config("multi_contact").placements) == 5
        placed = trajectory_from_config("multi_contact", placements=((0.0, 0.0, 0.0), (5.0, 0.0, 10.0)))
        assert placed.placements[1] == Placement(5.0, 0.0, 10.0)


class TestRender(unittest.TestCase):
    def test_no_penetration_gives_empty_mask(self) -> None:
        bundle = render_frame(ELLIPSE, Pose(tz=5.0), indent_mm=1.5)
        assert not bundle.contact_mask_gt.bits.any()
        assert np.all(bundle.height.data == 0.0)

    def test_penetration_depth(self) -> None:
        sensor = SensorConfig()
        pen = penetration_mm(SPHERE, Pose(), sensor, 1.0)
        assert pen.max() == pytest.approx(1.0, abs=0.01)
        assert pen.min() == 0.0

    def test_heights_are_pressed_down(self) -> None:
        bundle = render_frame(ELLIPSE, Pose(), indent_mm=1.5)
        mask = bundle.contact_mask_gt.bits
        assert mask.any()
        assert np.all(bundle.height.data[mask] < 0)
        assert bundle.height.data.min() == pytest.approx(-15.0, abs=0.2)

    def test_rotation_turns_contact_region(self) -> None:
        a = render_frame(ELLIPSE, Pose(), indent_mm=1.5).contact_mask_gt.bits
        b = render_frame(ELLIPSE, Pose(rz=90.0), indent_mm=1.5).contact_mask_gt.bits
        ys, xs = np.nonzero(a)
        assert np.ptp(xs) > np.ptp(ys)
        ys, xs = np.nonzero(b)
        assert np.ptp(ys) > np.ptp(xs)

    def test_same_seed_same_frames(self) -> None:
        traj = single_axis_trajectory("rz", -1.0, 3)
        a = render_sequence(ELLIPSE, traj, noise=NoiseConfig(), seed=11)
        b = render_sequence(ELLIPSE, traj, noise=NoiseConfig(), seed=11)
        c = render_sequence(ELLIPSE, traj, noise=NoiseConfig(), seed=12)
        assert all(np.array_equal(x.height.data, y.height.data) for x, y in zip(a, b, strict=True))
        assert not np.array_equal(a[1].height.data, c[1].height.data)

    def test_noise_seed(self) -> None:
        assert noise_seed_for(0, 5) == 5
        assert noise_seed_for(2, 1) == 2_000_007
        assert noise_seed_for(1 << 64, 0) == 0

    def test_rejects_jumpy_trajectory(self) -> None:
        traj = Trajectory("single_axis", [(0, Pose()), (1, Pose(rz=30.0))])
        with pytest.raises(InvalidArgumentError):
            render_sequence(ELLIPSE, traj)

    def test_features_follow_object(self) -> None:
        a = render_frame(ELLIPSE, Pose(), indent_mm=1.5)
        b = render_frame(ELLIPSE, Pose(tx=1.0), indent_mm=1.5, ref_pose=Pose())
        assert a.features_px is not None
        assert b.features_px is not None
        assert a.features_px.shape == b.features_px.shape
        assert np.allclose(b.features_px[:, 0] - a.features_px[:, 0], 10.0)


class TestSlipSequence(unittest.TestCase):
    def test_requires_pure_yaw(self) -> None:
        with pytest.raises(InvalidArgumentError):
            render_slip_sequence(ELLIPSE, single_axis_trajectory("tx", 0.1, 3))

    def test_features_stay_in_sensor_frame(self) -> None:
        frames = render_slip_sequence(ELLIPSE, single_axis_trajectory("rz", -2.0, 10), indent_mm=1.5)
        first = frames[0].features_px
        last = frames[-1].features_px
        assert first is not None
        assert last is not None
        shared = {tuple(p) for p in first.tolist()} & {tuple(p) for p in last.tolist()}
        assert len(shared) > 0


class TestMarkers(unittest.TestCase):
    def test_marker_grid_pitch(self) -> None:
        c = marker_centers(SensorConfig())
        assert c.shape == (7, 9, 2)
        assert np.all(np.diff(c[0, :, 0]) == 34.0)
        assert np.all(np.diff(c[:, 0, 1]) == 33.0)
        assert np.array_equal(c, np.rint(c))

    def test_mask_dots(self) -> None:
        mask, centers = render_marker_mask(SensorConfig())
        for cx, cy in centers.reshape(-1, 2).astype(int):
            assert mask[cy, cx] == 255
        assert set(np.unique(mask).tolist()) == {0, 255}

    def test_occlusion_removes_dots(self) -> None:
        mask, centers = render_marker_mask(SensorConfig(), occlude=1)
        cx, cy = centers[0, 0].astype(int)
        assert mask[cy, cx] == 0


class TestSphereCap(unittest.TestCase):
    def test_depth_and_gradient(self) -> None:
        sensor = SensorConfig()
        hm, grad = sphere_cap(sensor, 10.0, 1.0)
        assert hm.data.min() == pytest.approx(-10.0, abs=0.1)
        assert np.all(grad.gx[hm.data == 0.0] == 0.0)


class TestContactPatches(unittest.TestCase):
    def test_patches_share_ids(self) -> None:
        obj = SceneObject.extruded(scissors_outline())
        scene = render_contact_patches(obj, scissors_staircase().placements)
        assert len(scene.patches) == 5
        shared = np.intersect1d(scene.patches[0].ids, scene.patches[1].ids)
        assert shared.size >= 3
        assert scene.template_points.shape[1] == 3

    def test_truth_maps_into_first_patch(self) -> None:
        obj = SceneObject.extruded(scissors_outline())
        scene = render_contact_patches(obj, [Placement(-7.0, 0.0), Placement(0.0, 0.0, 5.0)])
        a, b = scene.patches
        common, ia, ib = np.intersect1d(a.ids, b.ids, return_indices=True)
        assert common.size > 0
        assert np.allclose(scene.truths[1].apply(b.points[ib]), a.points[ia], atol=1e-9)

    def test_needs_two_placements(self) -> None:
        with pytest.raises(InvalidArgumentError):
            render_contact_patches(SPHERE, [Placement(0.0, 0.0)])
