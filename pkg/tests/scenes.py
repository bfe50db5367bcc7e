"""テスト用の合成シーン生成ヘルパー。"""

from __future__ import annotations

import os
from functools import lru_cache

from invcloud.core.contact import ContactFrame
from invcloud.core.geometry import HeightMap
from invcloud.core.reference import ReferenceCloud, build_reference_cloud
from invcloud.sim.render import bundle_to_contact_frame, render_no_contact_frame, render_sequence, render_slip_sequence
from invcloud.sim.scene import SceneObject
from invcloud.sim.trajectory import Trajectory
from invcloud.util.config import ContactConfig, NoiseConfig, SensorConfig

SLOW = os.environ.get("IC_SLOW_TESTS") == "1"

ELLIPSE = SceneObject.ellipsoid(12.0, 6.0, 6.0)
SPHERE = SceneObject.sphere(10.0)


@lru_cache(maxsize=4)
def reference(rows: int = 19, cols: int = 25) -> tuple[HeightMap, ReferenceCloud]:
    sensor = SensorConfig()
    ref = render_no_contact_frame(sensor)
    assert ref.marker_mask is not None
    cloud = build_reference_cloud(ref.height, ref.marker_mask, (sensor.marker_rows, sensor.marker_cols), (rows, cols))
    return ref.height, cloud


def contact_frames(
    obj: SceneObject,
    traj: Trajectory,
    noise: NoiseConfig | None = None,
    *,
    seed: int = 0,
    slip: bool = False,
    indent_mm: float = 1.5,
) -> list[ContactFrame]:
    height, cloud = reference()
    render = render_slip_sequence if slip else render_sequence
    bundles = render(obj, traj, SensorConfig(), noise, indent_mm=indent_mm, seed=seed)
    return [bundle_to_contact_frame(b, height, cloud, ContactConfig()) for b in bundles]
