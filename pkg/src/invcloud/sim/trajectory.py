"""実験プロトコル (静止、単軸運動、往復、複数接触) の正解姿勢スケジュール。"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from invcloud.core.errors import InvalidArgumentError
from invcloud.core.pose import Pose

TrajectoryKind = Literal["static", "single_axis", "return_loop", "multi_contact"]
Dof = Literal["tx", "ty", "tz", "rx", "ry", "rz"]

DOFS: tuple[Dof, ...] = ("tx", "ty", "tz", "rx", "ry", "rz")
MAX_STEP_MM = 2.0
MAX_STEP_DEG = 5.0


@dataclass(frozen=True)
class Placement:
    """複数接触シナリオでの 1 回分のセンサ配置 (物体座標系でのセンサ中心 x, y [mm] と yaw [deg])。"""

    x: float
    y: float
    yaw: float = 0.0


@dataclass(frozen=True)
class Trajectory:
    kind: TrajectoryKind
    schedule: list[tuple[int, Pose]] = field(default_factory=list)
    placements: list[Placement] = field(default_factory=list)

    def __post_init__(self) -> None:
        frames = [i for i, _ in self.schedule]
        if any(b <= a for a, b in zip(frames, frames[1:], strict=False)):
            _msg = "trajectory frame indices must be strictly increasing"
            raise InvalidArgumentError(_msg)

    @property
    def poses(self) -> list[Pose]:
        return [p for _, p in self.schedule]

    def __len__(self) -> int:
        return len(self.schedule)


def check_continuity(traj: Trajectory, max_step_mm: float = MAX_STEP_MM, max_step_deg: float = MAX_STEP_DEG) -> None:
    """隣接フレーム間の姿勢差が上限を超えたら InvalidArgumentError。"""
    for (i0, p0), (i1, p1) in zip(traj.schedule, traj.schedule[1:], strict=False):
        a = np.array(p0.as_tuple())
        b = np.array(p1.as_tuple())
        dt = np.abs(b[:3] - a[:3]).max()
        dr = np.abs(b[3:] - a[3:]).max()
        if dt > max_step_mm or dr > max_step_deg:
            _msg = f"discontinuous schedule between frames {i0} and {i1} (step {dt:.3f} mm / {dr:.3f} deg)"
            raise InvalidArgumentError(_msg)


def _with(dof: Dof, value: float) -> Pose:
    values = dict.fromkeys(DOFS, 0.0)
    values[dof] = value
    return Pose(**values)


def static_trajectory(n_frames: int = 1500) -> Trajectory:
    if n_frames < 1:
        _msg = f"n_frames must be positive, got {n_frames}"
        raise InvalidArgumentError(_msg)
    return Trajectory("static", [(i, Pose()) for i in range(n_frames)])


def single_axis_trajectory(dof: Dof, rate: float, n_frames: int) -> Trajectory:
    """0 から rate / frame で n_frames ステップ進む (スケジュールは n_frames + 1 点)。"""
    if dof not in DOFS:
        _msg = f"unknown dof: {dof}"
        raise InvalidArgumentError(_msg)
    if n_frames < 1:
        _msg = f"n_frames must be positive, got {n_frames}"
        raise InvalidArgumentError(_msg)
    return Trajectory("single_axis", [(i, _with(dof, rate * i)) for i in range(n_frames + 1)])


def return_loop_trajectory(dof: Dof, amplitude: float, steps: int) -> Trajectory:
    """0 -> amplitude -> 0 の回文スケジュール。先頭と末尾はビット単位で一致する。"""
    if dof not in DOFS:
        _msg = f"unknown dof: {dof}"
        raise InvalidArgumentError(_msg)
    if steps < 1:
        _msg = f"steps must be positive, got {steps}"
        raise InvalidArgumentError(_msg)
    forward = [_with(dof, amplitude * k / steps) for k in range(steps + 1)]
    poses = forward + forward[-2::-1]
    return Trajectory("return_loop", list(enumerate(poses)))


def multi_contact_trajectory(placements: list[Placement]) -> Trajectory:
    if len(placements) < 2:  # noqa: PLR2004
        _msg = "multi-contact scenario needs at least 2 placements"
        raise InvalidArgumentError(_msg)
    return Trajectory("multi_contact", [], list(placements))


def scissors_staircase(n: int = 5, step_mm: float = 7.0, yaw_step_deg: float = 4.0) -> Trajectory:
    """はさみ外形に沿って少しずつずらした接触配置。"""
    placements = [
        Placement(-14.0 + step_mm * k, 0.5 * (k % 2), yaw_step_deg * (k - (n - 1) / 2.0))
        for k in range(n)
    ]
    return multi_contact_trajectory(placements)


def trajectory_from_config(
    kind: TrajectoryKind,
    *,
    n_frames: int = 1500,
    dof: Dof = "rz",
    rate: float = -1.0,
    amplitude: float = 20.0,
    steps: int = 20,
    placements: tuple[tuple[float, float, float], ...] = (),
) -> Trajectory:
    match kind:
        case "static":
            return static_trajectory(n_frames)
        case "single_axis":
            return single_axis_trajectory(dof, rate, n_frames)
        case "return_loop":
            return return_loop_trajectory(dof, amplitude, steps)
        case "multi_contact":
            if not placements:
                return scissors_staircase()
            return multi_contact_trajectory([Placement(*p) for p in placements])
    _msg = f"unknown trajectory kind: {kind}"
    raise InvalidArgumentError(_msg)
