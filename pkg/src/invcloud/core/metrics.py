"""評価指標: 静止時の累積ドリフト、往復の再現誤差、追従精度、接触輪郭の類似度。"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from invcloud.core.contact import ContactMask, largest_component
from invcloud.core.errors import GateFailureError, InvalidArgumentError
from invcloud.core.geometry import FloatArray
from invcloud.core.pose import Pose, TrackRow, normalize_deg

DOF_NAMES = ("tx", "ty", "tz", "rx", "ry", "rz")
DEFAULT_RETURN_GATE = 0.95


def _pose_error(est: Pose, gt: Pose) -> FloatArray:
    e = np.array(est.as_tuple()) - np.array(gt.as_tuple())
    e[3:] = [normalize_deg(float(a)) for a in e[3:]]
    return e


def geodesic_error_deg(est: Pose, gt: Pose) -> float:
    """回転誤差の測地距離 [deg] (補助列)。"""
    rel = est.rotation.T @ gt.rotation
    return float(np.degrees(Rotation.from_matrix(rel).magnitude()))


@dataclass(frozen=True)
class DriftReport:
    dx: float
    dy: float
    dz: float
    dthx: float
    dthy: float
    dthz: float
    n_sequences: int = 1
    final: tuple[float, ...] = (0.0,) * 6
    geodesic_deg: float = 0.0

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.dx, self.dy, self.dz, self.dthx, self.dthy, self.dthz)


@dataclass(frozen=True)
class RepeatabilityReport:
    dx: float
    dy: float
    dz: float
    dthx: float
    dthy: float
    dthz: float
    trials: int = 1

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.dx, self.dy, self.dz, self.dthx, self.dthy, self.dthz)


@dataclass(frozen=True)
class AccuracyReport:
    frames: list[int]
    errors: FloatArray  # (N, 6) 符号付き
    rms: tuple[float, ...]
    max_abs: tuple[float, ...]


def _tracked(track: Sequence[TrackRow]) -> list[TrackRow]:
    return [r for r in track if r.tracked]


def final_frame_drift(track: Sequence[TrackRow], gt: Pose | None = None) -> tuple[float, ...]:
    """最後の追跡済みフレームでの各 DoF の絶対誤差。"""
    rows = _tracked(track)
    if not rows:
        return (0.0,) * 6
    return tuple(float(v) for v in np.abs(_pose_error(rows[-1].pose, gt or Pose())))


def static_drift(track: Sequence[TrackRow], gt: Pose | None = None) -> DriftReport:
    """追跡済みフレームに対する、一定の正解姿勢との MAE。"""
    if not track:
        _msg = "track is empty"
        raise InvalidArgumentError(_msg)
    gt = gt or Pose()
    rows = _tracked(track)
    if not rows:
        return DriftReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    errors = np.abs(np.array([_pose_error(r.pose, gt) for r in rows]))
    mae = errors.mean(axis=0)
    geo = float(np.mean([geodesic_error_deg(r.pose, gt) for r in rows]))
    return DriftReport(*(float(v) for v in mae), final=final_frame_drift(track, gt), geodesic_deg=geo)


def average_drift(reports: Sequence[DriftReport]) -> DriftReport:
    if not reports:
        _msg = "no drift reports to average"
        raise InvalidArgumentError(_msg)
    total = sum(r.n_sequences for r in reports)
    mean = np.sum([np.array(r.as_tuple()) * r.n_sequences for r in reports], axis=0) / total
    final = np.sum([np.array(r.final) * r.n_sequences for r in reports], axis=0) / total
    geo = sum(r.geodesic_deg * r.n_sequences for r in reports) / total
    return DriftReport(*(float(v) for v in mean), n_sequences=total, final=tuple(float(v) for v in final), geodesic_deg=geo)


def contour_similarity(a: ContactMask, b: ContactMask) -> float:
    """最大連結成分同士の IoU。どちらかが空なら 0。"""
    if a.bits.shape != b.bits.shape:
        _msg = f"mask dims differ: {a.bits.shape} vs {b.bits.shape}"
        raise InvalidArgumentError(_msg)
    la = largest_component(a).bits
    lb = largest_component(b).bits
    union = int(np.logical_or(la, lb).sum())
    if union == 0 or not la.any() or not lb.any():
        return 0.0
    return int(np.logical_and(la, lb).sum()) / union


def repeatability_error(
    track: Sequence[TrackRow],
    first_mask: ContactMask | None = None,
    last_mask: ContactMask | None = None,
    return_gate: float = DEFAULT_RETURN_GATE,
) -> RepeatabilityReport:
    """最終フレームの姿勢の絶対値 (期待値はゼロ姿勢)。

    Raises:
        GateFailureError: 最終フレームの接触輪郭が初期フレームと十分一致しない、または最終フレームが未追跡
    """
    if not track:
        _msg = "track is empty"
        raise InvalidArgumentError(_msg)
    if first_mask is not None and last_mask is not None:
        score = contour_similarity(first_mask, last_mask)
        if score < return_gate:
            _msg = f"return contour similarity {score:.3f} below gate {return_gate:.3f}"
            raise GateFailureError(_msg)
    last = track[-1]
    if not last.tracked:
        _msg = f"final frame {last.frame} was not tracked"
        raise GateFailureError(_msg)
    err = np.abs(_pose_error(last.pose, Pose()))
    return RepeatabilityReport(*(float(v) for v in err))


def average_repeatability(reports: Sequence[RepeatabilityReport]) -> RepeatabilityReport:
    if not reports:
        _msg = "no repeatability trials to average"
        raise InvalidArgumentError(_msg)
    total = sum(r.trials for r in reports)
    mean = np.sum([np.array(r.as_tuple()) * r.trials for r in reports], axis=0) / total
    return RepeatabilityReport(*(float(v) for v in mean), trials=total)


def tracking_accuracy(track: Sequence[TrackRow], gt_schedule: Sequence[tuple[int, Pose]]) -> AccuracyReport:
    """フレームごとの符号付き誤差と DoF ごとの RMS / 最大絶対誤差。未追跡フレームは除外する。"""
    gt = dict(gt_schedule)
    rows = _tracked(track)
    missing = [r.frame for r in rows if r.frame not in gt]
    if missing:
        _msg = f"{len(missing)} tracked frame(s) not in the schedule (first: {missing[0]})"
        raise InvalidArgumentError(_msg)
    if not rows:
        zeros = (0.0,) * 6
        return AccuracyReport([], np.zeros((0, 6)), zeros, zeros)
    errors = np.array([_pose_error(r.pose, gt[r.frame]) for r in rows])
    rms = np.sqrt(np.mean(errors**2, axis=0))
    mx = np.abs(errors).max(axis=0)
    return AccuracyReport(
        [r.frame for r in rows],
        errors,
        tuple(float(v) for v in rms),
        tuple(float(v) for v in mx),
    )


def summarize(values: Sequence[float]) -> str:
    return ", ".join(f"{n}={v:.4f}" for n, v in zip(DOF_NAMES, values, strict=True))
