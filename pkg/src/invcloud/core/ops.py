"""CLI から呼ばれるユースケース層 (点群初期化、シナリオ生成、追跡、評価、SLAM)。

ファイル読み込みの Err はここで InvalidArgumentError (exit 3) に変換する。
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, TypeVar

import numpy as np
from pyresults import Err, Ok, Result

from invcloud.core.contact import ContactFrame, ContactMask, make_contact_frame
from invcloud.core.errors import GateFailureError, InvalidArgumentError
from invcloud.core.geometry import HeightMap, mm_to_world
from invcloud.core.metrics import (
    AccuracyReport,
    DriftReport,
    RepeatabilityReport,
    average_drift,
    average_repeatability,
    repeatability_error,
    static_drift,
    tracking_accuracy,
)
from invcloud.core.pose import InvariantTracker, Pose, TrackRow
from invcloud.core.reference import ReferenceCloud, build_reference_cloud
from invcloud.core.registration import (
    BaselineTracker,
    FusedMap,
    PatchCloud,
    RegistrationResult,
    accumulate,
    hausdorff_distance,
    patch_from_subset,
)
from invcloud.io import frames as frame_io
from invcloud.io.cloud_io import read_cloud
from invcloud.io.map_io import PATCH_NAME, TEMPLATE_NAME, read_patch, read_points, write_patch, write_points
from invcloud.sim.render import render_contact_patches, render_frame, render_no_contact_frame, render_slip_sequence
from invcloud.sim.scene import object_from_config
from invcloud.sim.trajectory import check_continuity, trajectory_from_config
from invcloud.util.config import RunConfig, write_effective_config
from invcloud.util.dirs import ensure_output_dir
from invcloud.util.logger import setup_logger

logger = setup_logger("invcloud")

T = TypeVar("T")
Method = Literal["invariant", "baseline"]
Experiment = Literal["drift", "repeat", "accuracy"]

TRACKED_RATIO_GATE = 0.95


def _require(res: Result[T, str]) -> T:
    match res:
        case Ok(value):
            return value
        case Err(e):
            raise InvalidArgumentError(e)
    _msg = "unreachable result state"
    raise InvalidArgumentError(_msg)


# ---- init-cloud ------------------------------------------------------------


def init_cloud(frame_path: str | Path, markers_path: str | Path, cfg: RunConfig) -> ReferenceCloud:
    """非接触フレームとマーカーマスクから一意 ID 付きの参照点群を作ります。

    Args:
        frame_path: 非接触フレーム (`*.ichm`)
        markers_path: マーカーマスク PNG
        cfg: マーカー格子と目標格子の大きさを持つ設定

    Returns:
        ReferenceCloud: 目標格子の参照点群

    Raises:
        InvalidArgumentError: ファイルが読めない場合
        GridLayoutError: マーカー数が合わない、または補間点が画像の外に出る場合
    """
    hm = _require(frame_io.load_height_map(frame_path))
    markers = _require(frame_io.load_marker_png(markers_path))
    cloud = build_reference_cloud(
        hm,
        markers,
        (cfg.sensor.marker_rows, cfg.sensor.marker_cols),
        (cfg.grid.rows, cfg.grid.cols),
    )
    logger.info("reference cloud: %d points (%dx%d)", cloud.size, cloud.grid_rows, cloud.grid_cols)
    return cloud


# ---- simulate --------------------------------------------------------------


@dataclass(frozen=True)
class SimulationSummary:
    out_dir: Path
    n_frames: int = 0
    n_patches: int = 0


def simulate(cfg: RunConfig, out_dir: str | Path, *, slip: bool | None = None) -> SimulationSummary:
    """シナリオをフレームファイル群 (または接触パッチ群) として書き出す。同じ設定とシードなら出力は同一。"""
    out = ensure_output_dir(out_dir)
    oc, tc = cfg.object, cfg.trajectory
    obj = object_from_config(oc.shape, oc.dims, oc.outline)
    traj = trajectory_from_config(
        tc.kind,
        n_frames=tc.n_frames,
        dof=tc.dof,
        rate=tc.rate,
        amplitude=tc.amplitude,
        steps=tc.steps,
        placements=tc.placements,
    )
    write_effective_config(cfg, out)

    if traj.kind == "multi_contact":
        scene = render_contact_patches(obj, traj.placements, cfg.sensor, cfg.noise, indent_mm=oc.indent_mm, seed=cfg.seed)
        for k, patch in enumerate(scene.patches):
            write_patch(patch, ensure_output_dir(out / f"contact_{k:03d}") / PATCH_NAME)
        write_points(scene.template_points, out / TEMPLATE_NAME)
        logger.info("wrote %d contact patches to %s", len(scene.patches), out)
        return SimulationSummary(out, n_patches=len(scene.patches))

    ref = render_no_contact_frame(cfg.sensor, cfg.noise, seed=cfg.seed)
    frame_io.save_height_map(ref.height, out / frame_io.REFERENCE_NAME)
    if ref.marker_mask is not None:
        frame_io.save_mask_png(ref.marker_mask, out / frame_io.MARKERS_NAME)

    check_continuity(traj)
    use_slip = tc.slip if slip is None else slip
    if use_slip:
        bundles = iter(render_slip_sequence(obj, traj, cfg.sensor, cfg.noise, indent_mm=oc.indent_mm, seed=cfg.seed))
    else:
        origin = traj.schedule[0][1]
        bundles = (
            render_frame(obj, p, cfg.sensor, cfg.noise, indent_mm=oc.indent_mm, index=i, seed=cfg.seed, ref_pose=origin)
            for i, p in traj.schedule
        )
    gt: list[tuple[int, float, Pose]] = []
    for b in bundles:
        frame_io.write_frame(out, b.index, b.height, b.contact_mask_gt.bits, b.features_px)
        gt.append((b.index, b.t_ms, b.pose_gt))
    frame_io.write_ground_truth(out, gt)
    logger.info("wrote %d frames to %s", len(gt), out)
    return SimulationSummary(out, n_frames=len(gt))


# ---- track -----------------------------------------------------------------


def _contact_frame(stored: frame_io.StoredFrame, reference: HeightMap, cloud: ReferenceCloud, cfg: RunConfig) -> ContactFrame:
    c = cfg.contact
    return make_contact_frame(
        stored.index,
        stored.height,
        reference,
        cloud,
        depth_threshold=float(mm_to_world(c.depth_threshold_mm, stored.height.ppmm)),
        aux_mask=stored.aux_mask,
        kernel_px=c.kernel_px,
        despeckle_px=c.despeckle_kernel_px,
        min_component_px=c.min_component_px,
        border_margin=c.border_margin_px,
        t_ms=stored.t_ms,
        features_px=stored.features_px,
    )


def iter_contact_frames(frames_dir: str | Path, cloud: ReferenceCloud, cfg: RunConfig) -> Iterator[ContactFrame]:
    """フレームを 1 枚ずつ読み込んで ContactFrame に変換する。"""
    d = Path(frames_dir)
    paths = _require(frame_io.list_frame_files(d))
    reference = _require(frame_io.load_height_map(d / frame_io.REFERENCE_NAME))
    if (reference.width, reference.height) != (cloud.width, cloud.height):
        _msg = f"reference frame {reference.width}x{reference.height} does not match cloud {cloud.width}x{cloud.height}"
        raise InvalidArgumentError(_msg)
    for p in paths:
        stored = _require(frame_io.load_stored_frame(p, cfg.sensor.fps))
        if stored.height.data.shape != reference.data.shape:
            _msg = f"frame {p.name} has dims {stored.height.data.shape}, expected {reference.data.shape}"
            raise InvalidArgumentError(_msg)
        yield _contact_frame(stored, reference, cloud, cfg)


def track(frames_dir: str | Path, cloud_path: str | Path, cfg: RunConfig, method: Method = "invariant") -> list[TrackRow]:
    """フレームディレクトリを先頭から追跡します。

    Args:
        frames_dir: `reference.ichm` とフレーム列を含むディレクトリ
        cloud_path: 参照点群ファイル
        cfg: 接触・姿勢・レジストレーション設定
        method: "invariant" (ID 対応) または "baseline" (フレーム間 NN-ICP)

    Returns:
        list[TrackRow]: フレームごとの姿勢 (追跡できなかったフレームは直前の姿勢を保持)

    Raises:
        InvalidArgumentError: 未知の手法、ファイル破損、点群とフレームの大きさの不一致
    """
    cloud = _require(read_cloud(cloud_path))
    tracker: InvariantTracker | BaselineTracker
    if method == "invariant":
        tracker = InvariantTracker(cfg.tracker_config())
    elif method == "baseline":
        tracker = BaselineTracker(cfg.registration)
    else:
        _msg = f"unknown method: {method}"
        raise InvalidArgumentError(_msg)
    rows = [tracker.update(f) for f in iter_contact_frames(frames_dir, cloud, cfg)]
    logger.info("%s: tracked %d/%d frames", method, sum(r.tracked for r in rows), len(rows))
    return rows


def tracked_ratio(rows: Sequence[TrackRow]) -> float:
    return sum(r.tracked for r in rows) / len(rows) if rows else 0.0


# ---- evaluate --------------------------------------------------------------


@dataclass
class TrialInput:
    method: str
    track: list[TrackRow]
    first_mask: ContactMask | None = None
    last_mask: ContactMask | None = None


def boundary_masks(frames_dir: str | Path) -> tuple[ContactMask | None, ContactMask | None]:
    """最初と最後のフレームの補助マスク (あれば)。往復実験の輪郭ゲートに使う。"""
    paths = _require(frame_io.list_frame_files(frames_dir))
    first = _require(frame_io.load_stored_frame(paths[0]))
    last = _require(frame_io.load_stored_frame(paths[-1]))
    if first.aux_mask is None or last.aux_mask is None:
        return None, None
    return ContactMask(first.aux_mask), ContactMask(last.aux_mask)


def _by_method(trials: Sequence[TrialInput]) -> dict[str, list[TrialInput]]:
    grouped: dict[str, list[TrialInput]] = {}
    for t in trials:
        grouped.setdefault(t.method, []).append(t)
    return grouped


def evaluate_drift(trials: Sequence[TrialInput], gt: Pose | None = None) -> dict[str, DriftReport]:
    """手法ごとに静止ドリフト (MAE) を平均します。

    Args:
        trials: 試行ごとの追跡結果
        gt: 静止姿勢の正解 (省略時は原点)

    Returns:
        dict[str, DriftReport]: 手法名 -> 平均ドリフト
    """
    return {m: average_drift([static_drift(t.track, gt) for t in ts]) for m, ts in _by_method(trials).items()}


def evaluate_repeat(trials: Sequence[TrialInput], return_gate: float) -> dict[str, RepeatabilityReport]:
    """手法ごとに往復の戻り誤差を平均します。

    最初と最後の接触マスクがある試行は、輪郭類似度が `return_gate` 以上であることを確かめます。

    Args:
        trials: 試行ごとの追跡結果と境界フレームのマスク
        return_gate: 輪郭類似度 (IoU) の下限

    Returns:
        dict[str, RepeatabilityReport]: 手法名 -> 平均の戻り誤差

    Raises:
        GateFailureError: 輪郭が戻っていない、または最終フレームが未追跡の試行がある場合
    """
    out: dict[str, RepeatabilityReport] = {}
    for m, ts in _by_method(trials).items():
        reports = []
        for t in ts:
            if t.first_mask is None:
                logger.warning("%s: no contact masks available; skipping the return contour gate", m)
            reports.append(repeatability_error(t.track, t.first_mask, t.last_mask, return_gate))
        out[m] = average_repeatability(reports)
    return out


def evaluate_accuracy(trials: Sequence[TrialInput], schedule: Sequence[tuple[int, Pose]]) -> dict[str, AccuracyReport]:
    """手法ごとに正解との差の RMS とフレームごとの誤差系列を求めます。

    Args:
        trials: 試行ごとの追跡結果 (手法ごとに最初の 1 本のみ使用)
        schedule: (フレーム番号, 正解姿勢) の列

    Returns:
        dict[str, AccuracyReport]: 手法名 -> 追跡精度
    """
    out: dict[str, AccuracyReport] = {}
    for m, ts in _by_method(trials).items():
        if len(ts) > 1:
            logger.warning("%s: %d tracks given for accuracy; using the first", m, len(ts))
        out[m] = tracking_accuracy(ts[0].track, schedule)
    return out


# ---- slam ------------------------------------------------------------------


@dataclass
class SlamOutcome:
    fused: FusedMap
    results: list[RegistrationResult] = field(default_factory=list)
    hausdorff_mm: float = math.nan

    @property
    def n_accepted(self) -> int:
        return sum(r.accepted for r in self.results)


def load_patch(source: str | Path, cfg: RunConfig, cloud: ReferenceCloud | None = None) -> PatchCloud:
    """`patch.txt` を含むディレクトリ、パッチファイル、またはフレームディレクトリ (最後の接触フレーム) から読む。"""
    src = Path(source)
    if src.is_file():
        return _require(read_patch(src))
    if (src / PATCH_NAME).exists():
        return _require(read_patch(src / PATCH_NAME))
    if cloud is None:
        _msg = f"{src} holds frames; a reference cloud is required to extract a patch"
        raise InvalidArgumentError(_msg)
    last: ContactFrame | None = None
    for f in iter_contact_frames(src, cloud, cfg):
        if f.subset.k >= 3:  # noqa: PLR2004
            last = f
    if last is None:
        _msg = f"no contact frame with >= 3 points in {src}"
        raise InvalidArgumentError(_msg)
    return patch_from_subset(last.subset, last.height.ppmm, cfg.pose.anisotropy_threshold)


def run_slam(
    sources: Sequence[str | Path],
    cfg: RunConfig,
    *,
    cloud_path: str | Path | None = None,
    template_path: str | Path | None = None,
) -> SlamOutcome:
    """接触パッチを順にレジストレーションし、1 枚の地図に統合します。

    Args:
        sources: パッチファイル、パッチを含むディレクトリ、またはフレームディレクトリ
        cfg: レジストレーション設定
        cloud_path: フレームディレクトリを入力にする場合の参照点群
        template_path: 指定すると統合地図とのハウスドルフ距離を求める

    Returns:
        SlamOutcome: 統合地図、各パッチの登録結果、ハウスドルフ距離 (mm)

    Raises:
        InvalidArgumentError: 入力が 2 つ未満、またはパッチを読めない場合
    """
    if len(sources) < 2:  # noqa: PLR2004
        _msg = f"slam needs at least 2 contact inputs, got {len(sources)}"
        raise InvalidArgumentError(_msg)
    cloud = _require(read_cloud(cloud_path)) if cloud_path is not None else None
    patches = [load_patch(s, cfg, cloud) for s in sources]
    outcome = SlamOutcome(FusedMap.seed(patches[0]))
    for patch in patches[1:]:
        outcome.fused, res = accumulate(outcome.fused, patch, cfg.registration)
        outcome.results.append(res)
    if template_path is not None:
        template = _require(read_points(template_path))
        _, pts, _ = outcome.fused.points()
        outcome.hausdorff_mm = hausdorff_distance(pts, template)
        logger.info("fused map vs template: Hausdorff %.3f mm", outcome.hausdorff_mm)
    return outcome


def check_slam(outcome: SlamOutcome) -> None:
    if outcome.results and outcome.n_accepted == 0:
        _msg = f"all {len(outcome.results)} registrations were rejected"
        raise GateFailureError(_msg)


def fused_ids_unique(fused: FusedMap) -> bool:
    ids, _, _ = fused.points()
    return bool(np.unique(ids).size == ids.size)
