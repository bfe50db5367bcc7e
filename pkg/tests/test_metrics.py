import math
import unittest

import numpy as np
import pytest

from invcloud.core.contact import ContactMask
from invcloud.core.errors import GateFailureError, InvalidArgumentError
from invcloud.core.metrics import (
    DriftReport,
    RepeatabilityReport,
    average_drift,
    average_repeatability,
    contour_similarity,
    final_frame_drift,
    geodesic_error_deg,
    repeatability_error,
    static_drift,
    summarize,
    tracking_accuracy,
)
from invcloud.core.pose import InvariantTracker, Pose, TrackRow
from invcloud.core.registration import baseline_nn_icp_track
from invcloud.sim.trajectory import return_loop_trajectory, static_trajectory
from invcloud.util.config import NoiseConfig
from tests.scenes import ELLIPSE, SLOW, contact_frames

# 順序比較用のノイズ: 高さ 0.002 mm、特徴点ジッタ 0.05 mm
ORDERING_NOISE = NoiseConfig(height_sigma_mm=0.002, mask_flip_prob=0.002, point_jitter_mm=0.05)


def _row(frame: int, pose: Pose, *, tracked: bool = True) -> TrackRow:
    return TrackRow(frame, frame * 40.0, pose, tracked, 10, math.nan)


def _disk(cx: int, cy: int, r: int, shape: tuple[int, int] = (60, 80)) -> ContactMask:
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]]
    return ContactMask((xs - cx) ** 2 + (ys - cy) ** 2 <= r**2)


class TestStaticDrift(unittest.TestCase):
    def test_mean_absolute_error(self) -> None:
        track = [_row(0, Pose()), _row(1, Pose(tx=0.2, rz=-1.0)), _row(2, Pose(tx=-0.4, rz=3.0))]
        report = static_drift(track)
        assert report.dx == pytest.approx(0.2)
        assert report.dthz == pytest.approx(4.0 / 3.0)
        assert report.final[0] == pytest.approx(0.4)
        assert report.final[5] == pytest.approx(3.0)

    def test_final_frame_skips_untracked_tail(self) -> None:
        track = [_row(0, Pose()), _row(1, Pose(ty=-0.3, rx=0.5)), _row(2, Pose(ty=5.0), tracked=False)]
        final = final_frame_drift(track)
        assert final[1] == pytest.approx(0.3)
        assert final[3] == pytest.approx(0.5)
        assert final_frame_drift([_row(0, Pose(tx=1.0), tracked=False)]) == (0.0,) * 6

    def test_untracked_frames_excluded(self) -> None:
        track = [_row(0, Pose()), _row(1, Pose(tx=9.0), tracked=False)]
        assert static_drift(track).dx == 0.0

    def test_angle_error_wraps(self) -> None:
        report = static_drift([_row(0, Pose(rz=359.0))])
        assert report.dthz == pytest.approx(1.0)

    def test_empty(self) -> None:
        with pytest.raises(InvalidArgumentError):
            static_drift([])

    def test_average_weights_by_sequences(self) -> None:
        a = DriftReport(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        b = DriftReport(3.0, 0.0, 0.0, 0.0, 0.0, 0.0, n_sequences=3)
        avg = average_drift([a, b])
        assert avg.dx == pytest.approx(2.5)
        assert avg.n_sequences == 4
        with pytest.raises(InvalidArgumentError):
            average_drift([])

    def test_geodesic(self) -> None:
        assert geodesic_error_deg(Pose(rz=10.0), Pose()) == pytest.approx(10.0)
        assert geodesic_error_deg(Pose(rx=3.0), Pose(rx=3.0)) == pytest.approx(0.0, abs=1e-9)


class TestContourSimilarity(unittest.TestCase):
    def test_identical(self) -> None:
        assert contour_similarity(_disk(40, 30, 10), _disk(40, 30, 10)) == 1.0

    def test_shifted(self) -> None:
        score = contour_similarity(_disk(40, 30, 10), _disk(45, 30, 10))
        assert 0.0 < score < 0.95

    def test_empty_is_zero(self) -> None:
        empty = ContactMask(np.zeros((60, 80), dtype=bool))
        assert contour_similarity(empty, _disk(40, 30, 10)) == 0.0
        assert contour_similarity(empty, empty) == 0.0

    def test_speckle_ignored(self) -> None:
        noisy = _disk(40, 30, 10).bits.copy()
        noisy[2, 2] = True
        assert contour_similarity(ContactMask(noisy), _disk(40, 30, 10)) == 1.0

    def test_symmetric(self) -> None:
        pairs = [
            (_disk(40, 30, 10), _disk(45, 33, 12)),
            (_disk(20, 20, 6), _disk(50, 35, 15)),
            (ContactMask(np.zeros((60, 80), dtype=bool)), _disk(40, 30, 10)),
        ]
        for a, b in pairs:
            assert contour_similarity(a, b) == contour_similarity(b, a)

    def test_dims_mismatch(self) -> None:
        with pytest.raises(InvalidArgumentError):
            contour_similarity(_disk(10, 10, 5, (30, 30)), _disk(10, 10, 5))


class TestRepeatability(unittest.TestCase):
    def test_final_pose_magnitude(self) -> None:
        track = [_row(0, Pose()), _row(1, Pose(ty=-0.3, ry=2.0))]
        report = repeatability_error(track)
        assert report.as_tuple() == pytest.approx((0.0, 0.3, 0.0, 0.0, 2.0, 0.0))

    def test_contour_gate(self) -> None:
        track = [_row(0, Pose()), _row(1, Pose())]
        with pytest.raises(GateFailureError):
            repeatability_error(track, _disk(40, 30, 10), _disk(46, 30, 10))
        repeatability_error(track, _disk(40, 30, 10), _disk(40, 30, 10))

    def test_untracked_final_frame(self) -> None:
        with pytest.raises(GateFailureError):
            repeatability_error([_row(0, Pose()), _row(1, Pose(), tracked=False)])

    def test_average(self) -> None:
        reports = [RepeatabilityReport(1.0, 0, 0, 0, 0, 0), RepeatabilityReport(2.0, 0, 0, 0, 0, 0)]
        avg = average_repeatability(reports)
        assert avg.dx == pytest.approx(1.5)
        assert avg.trials == 2


class TestTrackingAccuracy(unittest.TestCase):
    def test_signed_errors_and_rms(self) -> None:
        track = [_row(0, Pose(rz=-1.0)), _row(1, Pose(rz=-1.5)), _row(2, Pose(), tracked=False)]
        gt = [(0, Pose()), (1, Pose(rz=-2.0)), (2, Pose(rz=-3.0))]
        report = tracking_accuracy(track, gt)
        assert report.frames == [0, 1]
        assert report.errors[:, 5].tolist() == pytest.approx([-1.0, 0.5])
        assert report.rms[5] == pytest.approx(math.sqrt((1.0 + 0.25) / 2))
        assert report.max_abs[5] == pytest.approx(1.0)

    def test_frame_missing_from_schedule(self) -> None:
        with pytest.raises(InvalidArgumentError):
            tracking_accuracy([_row(5, Pose())], [(0, Pose())])

    def test_nothing_tracked(self) -> None:
        report = tracking_accuracy([_row(0, Pose(), tracked=False)], [(0, Pose())])
        assert report.frames == []
        assert report.rms == (0.0,) * 6


class TestSummarize(unittest.TestCase):
    def test_format(self) -> None:
        assert summarize([0.1, 0, 0, 0, 0, 2]).startswith("tx=0.1000, ty=0.0000")


class TestMethodOrdering(unittest.TestCase):
    """ノイズありの合成データで、ID 対応付けのトラッカーがフレーム間 ICP よりドリフトしないこと。"""

    def _drift(self, n_frames: int, seeds: range) -> tuple[DriftReport, DriftReport]:
        ours, base = [], []
        for seed in seeds:
            frames = contact_frames(ELLIPSE, static_trajectory(n_frames), ORDERING_NOISE, seed=seed)
            ours.append(static_drift(InvariantTracker().run(frames)))
            base.append(static_drift(baseline_nn_icp_track(frames)))
        return average_drift(ours), average_drift(base)

    def _repeat(self, seeds: range) -> tuple[RepeatabilityReport, RepeatabilityReport]:
        ours, base = [], []
        for seed in seeds:
            frames = contact_frames(ELLIPSE, return_loop_trajectory("rz", 20.0, 20), ORDERING_NOISE, seed=seed)
            first, last = frames[0].mask, frames[-1].mask
            ours.append(repeatability_error(InvariantTracker().run(frames), first, last))
            base.append(repeatability_error(baseline_nn_icp_track(frames), first, last))
        return average_repeatability(ours), average_repeatability(base)

    def test_static_drift_translation_and_yaw(self) -> None:
        ours, base = self._drift(150, range(2))
        for k in (0, 1, 2, 5):
            assert ours.as_tuple()[k] < base.as_tuple()[k]

    def test_return_loop_all_dofs(self) -> None:
        ours, base = self._repeat(range(5))
        assert all(a < b for a, b in zip(ours.as_tuple(), base.as_tuple(), strict=True))

    @pytest.mark.slow
    @unittest.skipUnless(SLOW, "IC_SLOW_TESTS=1 で実行")
    def test_static_drift_all_dofs_full_length(self) -> None:
        ours, base = self._drift(1500, range(5))
        assert all(a < b for a, b in zip(ours.as_tuple(), base.as_tuple(), strict=True))
