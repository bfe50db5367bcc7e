"""`invcloud selftest` の小規模チェック群。"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from invcloud.core.errors import InvCloudError
from invcloud.core.geometry import HeightMap, pixels_to_world, worlds_to_pixels
from invcloud.core.pose import Correspondences, InvariantTracker, kabsch_rotation
from invcloud.core.reference import build_reference_cloud
from invcloud.sim.render import bundle_to_contact_frame, render_no_contact_frame, render_sequence
from invcloud.sim.scene import SceneObject
from invcloud.sim.trajectory import single_axis_trajectory
from invcloud.util.config import RunConfig

ROUND_TRIP_TOL = 1e-12
KABSCH_TOL = 1e-9
YAW_RAMP_TOL_DEG = 2.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def check_round_trip(cfg: RunConfig, n: int = 10_000) -> CheckResult:
    rng = np.random.default_rng(cfg.seed)
    s = cfg.sensor
    hm = HeightMap(rng.normal(0.0, 1.0, (s.height, s.width)), s.ppmm)
    xs = rng.uniform(0, s.width - 1, n)
    ys = rng.uniform(0, s.height - 1, n)
    back = worlds_to_pixels(pixels_to_world(hm, xs, ys), hm.cx, hm.cy, hm.s)
    err = float(np.max(np.abs(back - np.column_stack((xs, ys)))))
    return CheckResult("pixel-world round trip", err <= ROUND_TRIP_TOL, f"max error {err:.3e} px")


def check_kabsch(cfg: RunConfig, n: int = 100) -> CheckResult:
    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for r in Rotation.random(n, random_state=rng):
        q = rng.normal(0.0, 1.0, (10, 3))
        rot = r.as_matrix()
        est = kabsch_rotation(Correspondences(np.arange(10), q @ rot.T, q))
        worst = max(worst, float(np.linalg.norm(est - rot)))
    return CheckResult("kabsch recovery", worst <= KABSCH_TOL, f"max Frobenius error {worst:.3e}")


def check_reference_cloud(cfg: RunConfig) -> CheckResult:
    s = cfg.sensor
    ref = render_no_contact_frame(s)
    assert ref.marker_mask is not None  # noqa: S101
    cloud = build_reference_cloud(ref.height, ref.marker_mask, (s.marker_rows, s.marker_cols), (cfg.grid.rows, cfg.grid.cols))
    expected = cfg.grid.rows * cfg.grid.cols
    ids_ok = bool(np.array_equal(cloud.ids, np.arange(1, expected + 1)))
    return CheckResult("reference cloud", cloud.size == expected and ids_ok, f"{cloud.size} points (expected {expected})")


def check_yaw_ramp(cfg: RunConfig, n_frames: int = 90) -> CheckResult:
    s = cfg.sensor
    ref = render_no_contact_frame(s)
    assert ref.marker_mask is not None  # noqa: S101
    cloud = build_reference_cloud(ref.height, ref.marker_mask, (s.marker_rows, s.marker_cols), (cfg.grid.rows, cfg.grid.cols))
    obj = SceneObject.ellipsoid(12.0, 6.0, 6.0)
    bundles = render_sequence(obj, single_axis_trajectory("rz", -1.0, n_frames), s, None, indent_mm=1.5)
    frames = [bundle_to_contact_frame(b, ref.height, cloud, cfg.contact) for b in bundles]
    rows = InvariantTracker(cfg.tracker_config()).run(frames)
    final = rows[-1].pose.rz
    err = abs(final + float(n_frames))
    return CheckResult("yaw ramp", err <= YAW_RAMP_TOL_DEG, f"final rz {final:.3f} deg (target {-float(n_frames):.1f})")


CHECKS: list[Callable[[RunConfig], CheckResult]] = [check_round_trip, check_kabsch, check_reference_cloud, check_yaw_ramp]


def run_selftest(cfg: RunConfig) -> list[CheckResult]:
    results = []
    for check in CHECKS:
        try:
            results.append(check(cfg))
        except InvCloudError as e:
            results.append(CheckResult(check.__name__.removeprefix("check_"), False, f"{type(e).__name__}: {e!s}"))
    return results
