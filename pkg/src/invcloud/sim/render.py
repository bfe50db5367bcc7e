"""合成触覚シーンのレンダリング。

剛体交差モデル: ゲル面 z = 0 に物体の下面を押し当て、侵入深さ分だけ高さを下げる。
高さマップの値は画素高さ単位 (1 mm = ppmm) で `-penetration`。
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from numpy.typing import NDArray

from invcloud.core.contact import ContactFrame, ContactMask, make_contact_frame
from invcloud.core.errors import InvalidArgumentError
from invcloud.core.geometry import FloatArray, GradientField, HeightMap, image_center_and_scale, mm_to_world
from invcloud.core.pose import Pose
from invcloud.core.reference import ReferenceCloud
from invcloud.core.registration import PatchCloud, RigidTransform, make_patch
from invcloud.sim.scene import SceneObject
from invcloud.sim.trajectory import Placement, Trajectory, check_continuity
from invcloud.util.config import ContactConfig, NoiseConfig, SensorConfig
from invcloud.util.logger import setup_logger

logger = setup_logger("invcloud")

FEATURE_PITCH_PX = 12
MARKER_MARGIN_PX = 20
SURFACE_ITERS = 4
SLIP_TEXTURE_MM = 0.05


@dataclass(frozen=True, eq=False)
class FrameBundle:
    index: int
    height: HeightMap
    contact_mask_gt: ContactMask
    pose_gt: Pose
    noise_seed: int
    t_ms: float = 0.0
    marker_mask: NDArray[np.uint8] | None = None
    features_px: FloatArray | None = None


def noise_seed_for(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index) % (1 << 64)


def pixel_grid_mm(sensor: SensorConfig) -> tuple[FloatArray, FloatArray]:
    """各画素中心のセンサ座標 (X 右, Y 上) [mm]。"""
    cx, cy, _ = image_center_and_scale(sensor.width, sensor.height, sensor.ppmm)
    ys, xs = np.mgrid[0 : sensor.height, 0 : sensor.width].astype(np.float64)
    return (xs - cx) / sensor.ppmm, (cy - ys) / sensor.ppmm


def _mm_to_pixels(xy: FloatArray, sensor: SensorConfig) -> FloatArray:
    cx, cy, _ = image_center_and_scale(sensor.width, sensor.height, sensor.ppmm)
    return np.column_stack((xy[:, 0] * sensor.ppmm + cx, cy - xy[:, 1] * sensor.ppmm))


def penetration_mm(obj: SceneObject, pose: Pose, sensor: SensorConfig, indent_mm: float) -> FloatArray:
    """画素ごとの侵入深さ [mm]。物体原点 (最下点) は (tx, ty, tz - indent) に置かれる。"""
    gx, gy = pixel_grid_mm(sensor)
    rot = pose.rotation
    t = np.array([pose.tx, pose.ty, pose.tz - indent_mm])
    tilted = not (pose.rx == 0.0 and pose.ry == 0.0)
    z = np.full(gx.shape, t[2])
    live = np.ones(gx.shape, dtype=np.bool_)
    for _ in range(SURFACE_ITERS if tilted else 1):
        w = np.stack((gx - t[0], gy - t[1], z - t[2]), axis=-1)
        p = w @ rot  # R^T (w - t)
        f = obj.underside(p[..., 0], p[..., 1])
        live &= np.isfinite(f)
        step = np.where(live, (p[..., 2] - np.where(live, f, 0.0)) / rot[2, 2], 0.0)
        z = z - step
    pen = np.where(live, -z, 0.0)
    return np.maximum(pen, 0.0)


def _boundary_flip(bits: NDArray[np.bool_], prob: float, rng: np.random.Generator) -> NDArray[np.bool_]:
    if prob <= 0 or not bits.any():
        return bits
    img = bits.astype(np.uint8)
    kernel = np.ones((3, 3), np.uint8)
    boundary = (cv2.dilate(img, kernel) != cv2.erode(img, kernel)).astype(np.bool_)
    flips = boundary & (rng.random(bits.shape) < prob)
    return bits ^ flips


def _planar(pose: Pose) -> RigidTransform:
    return RigidTransform.about_z(pose.rz, np.array([pose.tx, pose.ty, 0.0]))


def feature_lattice_mm(sensor: SensorConfig, pitch_px: int = FEATURE_PITCH_PX) -> FloatArray:
    cx, cy, _ = image_center_and_scale(sensor.width, sensor.height, sensor.ppmm)
    xs = np.arange(pitch_px // 2, sensor.width, pitch_px, dtype=np.float64)
    ys = np.arange(pitch_px // 2, sensor.height, pitch_px, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack(((gx.ravel() - cx) / sensor.ppmm, (cy - gy.ravel()) / sensor.ppmm, np.zeros(gx.size)))


def _features(
    pose: Pose,
    ref_pose: Pose,
    gt: NDArray[np.bool_],
    sensor: SensorConfig,
    jitter_mm: float,
    rng: np.random.Generator,
    *,
    slip: bool,
) -> FloatArray:
    lattice = feature_lattice_mm(sensor)
    moved = lattice if slip else _planar(pose).compose(_planar(ref_pose).inverse()).apply(lattice)
    px = _mm_to_pixels(moved[:, :2], sensor)
    xi = np.rint(px[:, 0]).astype(np.intp)
    yi = np.rint(px[:, 1]).astype(np.intp)
    ok = (xi >= 0) & (xi < sensor.width) & (yi >= 0) & (yi < sensor.height)
    ok[ok] = gt[yi[ok], xi[ok]]
    px = px[ok]
    if jitter_mm > 0 and px.shape[0]:
        px = px + rng.normal(0.0, jitter_mm * sensor.ppmm, px.shape)
    return px


def _finish(
    index: int,
    pen: FloatArray,
    gt: NDArray[np.bool_],
    pose: Pose,
    ref_pose: Pose,
    sensor: SensorConfig,
    noise: NoiseConfig,
    seed: int,
    *,
    slip: bool,
    height_px: FloatArray | None = None,
) -> FrameBundle:
    nseed = noise_seed_for(seed, index)
    rng = np.random.default_rng(nseed)
    data = -pen * sensor.ppmm if height_px is None else height_px
    if noise.height_sigma_mm > 0:
        data = data + rng.normal(0.0, noise.height_sigma_mm * sensor.ppmm, data.shape)
    mask_bits = _boundary_flip(gt, noise.mask_flip_prob, rng)
    features = _features(pose, ref_pose, gt, sensor, noise.point_jitter_mm, rng, slip=slip)
    return FrameBundle(
        index=index,
        height=HeightMap(data, sensor.ppmm),
        contact_mask_gt=ContactMask(mask_bits),
        pose_gt=pose,
        noise_seed=nseed,
        t_ms=index * 1000.0 / sensor.fps,
        features_px=features,
    )


def render_frame(
    obj: SceneObject,
    pose: Pose,
    sensor: SensorConfig | None = None,
    noise: NoiseConfig | None = None,
    *,
    indent_mm: float = 1.0,
    index: int = 0,
    seed: int = 0,
    ref_pose: Pose | None = None,
) -> FrameBundle:
    """1 フレームをレンダリングする。侵入がなければ空マスクのフレーム。"""
    sensor = sensor or SensorConfig()
    noise = noise if noise is not None else NoiseConfig(0.0, 0.0, 0.0)
    pen = penetration_mm(obj, pose, sensor, indent_mm)
    gt = pen > 0
    return _finish(index, pen, gt, pose, ref_pose or Pose(), sensor, noise, seed, slip=False)


def render_sequence(
    obj: SceneObject,
    traj: Trajectory,
    sensor: SensorConfig | None = None,
    noise: NoiseConfig | None = None,
    *,
    indent_mm: float = 1.0,
    seed: int = 0,
) -> list[FrameBundle]:
    if not traj.schedule:
        _msg = f"trajectory of kind {traj.kind} has no frame schedule"
        raise InvalidArgumentError(_msg)
    check_continuity(traj)
    ref = traj.schedule[0][1]
    frames = [
        render_frame(obj, pose, sensor, noise, indent_mm=indent_mm, index=i, seed=seed, ref_pose=ref)
        for i, pose in traj.schedule
    ]
    logger.info("rendered %d frames (%s)", len(frames), traj.kind)
    return frames


def render_slip_sequence(
    obj: SceneObject,
    traj: Trajectory,
    sensor: SensorConfig | None = None,
    noise: NoiseConfig | None = None,
    *,
    indent_mm: float = 1.0,
    seed: int = 0,
) -> list[FrameBundle]:
    """接触領域は物体とともに回転するが、領域内の高さテクスチャはセンサに固定されたまま。"""
    sensor = sensor or SensorConfig()
    noise = noise if noise is not None else NoiseConfig(0.0, 0.0, 0.0)
    for _, p in traj.schedule:
        if (p.tx, p.ty, p.tz, p.rx, p.ry) != (0.0, 0.0, 0.0, 0.0, 0.0):
            _msg = "slip sequence requires a pure Z-rotation trajectory"
            raise InvalidArgumentError(_msg)
    if not traj.schedule:
        _msg = "slip sequence needs a frame schedule"
        raise InvalidArgumentError(_msg)
    check_continuity(traj)

    gx, gy = pixel_grid_mm(sensor)
    r2 = gx**2 + gy**2
    first = penetration_mm(obj, traj.schedule[0][1], sensor, indent_mm) > 0
    r_max2 = float(r2[first].max()) if first.any() else 1.0
    depth = indent_mm * (1.0 - 0.5 * np.minimum(1.0, r2 / r_max2))
    texture = SLIP_TEXTURE_MM * np.sin(1.3 * gx) * np.cos(1.7 * gy)
    field_px = -(depth + texture) * sensor.ppmm

    frames: list[FrameBundle] = []
    for i, pose in traj.schedule:
        gt = penetration_mm(obj, pose, sensor, indent_mm) > 0
        height = np.where(gt, field_px, 0.0)
        frames.append(
            _finish(i, np.zeros_like(height), gt, pose, traj.schedule[0][1], sensor, noise, seed, slip=True, height_px=height),
        )
    logger.info("rendered %d slip frames", len(frames))
    return frames


# ---- 初期化フレーム --------------------------------------------------------


def marker_centers(sensor: SensorConfig) -> FloatArray:
    """(rows, cols, 2) の整数画素マーカー中心。"""
    pitch_x = (sensor.width - 1 - 2 * MARKER_MARGIN_PX) // (sensor.marker_cols - 1)
    pitch_y = (sensor.height - 1 - 2 * MARKER_MARGIN_PX) // (sensor.marker_rows - 1)
    x0 = (sensor.width - 1 - pitch_x * (sensor.marker_cols - 1)) // 2
    y0 = (sensor.height - 1 - pitch_y * (sensor.marker_rows - 1)) // 2
    xs = x0 + pitch_x * np.arange(sensor.marker_cols)
    ys = y0 + pitch_y * np.arange(sensor.marker_rows)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack((gx, gy), axis=-1).astype(np.float64)


def render_marker_mask(
    sensor: SensorConfig | None = None,
    *,
    jitter_px: float = 0.0,
    seed: int = 0,
    occlude: int = 0,
) -> tuple[NDArray[np.uint8], FloatArray]:
    """ドット格子のマーカーマスク (0/255) と真の中心を返す。`occlude` 個のドットを先頭から消す。"""
    sensor = sensor or SensorConfig()
    centers = marker_centers(sensor)
    if jitter_px > 0:
        centers = centers + np.random.default_rng(seed).normal(0.0, jitter_px, centers.shape)
    ys, xs = np.mgrid[0 : sensor.height, 0 : sensor.width].astype(np.float64)
    mask = np.zeros((sensor.height, sensor.width), dtype=np.uint8)
    r2 = sensor.marker_radius_px**2
    for k, (cx, cy) in enumerate(centers.reshape(-1, 2)):
        if k < occlude:
            continue
        mask[(xs - cx) ** 2 + (ys - cy) ** 2 <= r2] = 255
    return mask, centers


def render_no_contact_frame(
    sensor: SensorConfig | None = None,
    noise: NoiseConfig | None = None,
    *,
    seed: int = 0,
    occlude: int = 0,
) -> FrameBundle:
    sensor = sensor or SensorConfig()
    noise = noise if noise is not None else NoiseConfig(0.0, 0.0, 0.0)
    nseed = noise_seed_for(seed, 0)
    rng = np.random.default_rng(nseed)
    data = np.zeros((sensor.height, sensor.width))
    if noise.height_sigma_mm > 0:
        data = data + rng.normal(0.0, noise.height_sigma_mm * sensor.ppmm, data.shape)
    marker_mask, _ = render_marker_mask(sensor, seed=seed, occlude=occlude)
    return FrameBundle(
        index=0,
        height=HeightMap(data, sensor.ppmm),
        contact_mask_gt=ContactMask.empty(sensor.width, sensor.height),
        pose_gt=Pose(),
        noise_seed=nseed,
        marker_mask=marker_mask,
    )


def bundle_to_contact_frame(
    bundle: FrameBundle,
    reference: HeightMap,
    cloud: ReferenceCloud,
    contact: ContactConfig | None = None,
    *,
    use_gt_mask: bool = True,
) -> ContactFrame:
    """レンダリング結果をトラッカー入力に変換する。正解マスクは色差チャネルの代わりの補助マスク。"""
    contact = contact or ContactConfig()
    return make_contact_frame(
        bundle.index,
        bundle.height,
        reference,
        cloud,
        depth_threshold=float(mm_to_world(contact.depth_threshold_mm, bundle.height.ppmm)),
        aux_mask=bundle.contact_mask_gt.bits if use_gt_mask else None,
        kernel_px=contact.kernel_px,
        despeckle_px=contact.despeckle_kernel_px,
        min_component_px=contact.min_component_px,
        border_margin=contact.border_margin_px,
        t_ms=bundle.t_ms,
        features_px=bundle.features_px,
    )


# ---- 解析解 ----------------------------------------------------------------


def sphere_cap(sensor: SensorConfig, radius_mm: float, indent_mm: float) -> tuple[HeightMap, GradientField]:
    """中心に押し当てた球の高さマップと、その解析的な勾配場。"""
    gx, gy = pixel_grid_mm(sensor)
    rho2 = gx**2 + gy**2
    inner = radius_mm**2 - rho2
    lowest = radius_mm - np.sqrt(np.maximum(inner, 0.0))
    contact = (inner > 0) & (lowest < indent_mm)
    h_mm = np.where(contact, lowest - indent_mm, 0.0)
    root = np.sqrt(np.where(contact, inner, 1.0))
    # 画素高さ / 画素 = mm / mm
    dx = np.where(contact, gx / root, 0.0)
    dy = np.where(contact, -gy / root, 0.0)
    return HeightMap(h_mm * sensor.ppmm, sensor.ppmm), GradientField(dx, dy, sensor.ppmm)


# ---- 複数接触 --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PatchScene:
    patches: list[PatchCloud]
    truths: list[RigidTransform]  # パッチ k の座標 -> パッチ 0 の座標
    template_points: FloatArray  # パッチ 0 の座標系、被覆範囲内


def _sensor_from_object(pl: Placement) -> RigidTransform:
    # p_s = Rz(-yaw) (p_o - c)
    to_sensor = RigidTransform.about_z(-pl.yaw)
    return RigidTransform(to_sensor.rotation, -to_sensor.rotation @ np.array([pl.x, pl.y, 0.0]))


def render_contact_patches(
    obj: SceneObject,
    placements: list[Placement],
    sensor: SensorConfig | None = None,
    noise: NoiseConfig | None = None,
    *,
    pitch_mm: float = 34.0 / 3.0 / 10.0,
    indent_mm: float = 1.0,
    window_margin_mm: float = 1.0,
    seed: int = 0,
) -> PatchScene:
    """物体座標系の格子 (ID = 物体表面上の点) を各接触ごとにセンサ座標で観測したパッチ列。"""
    if len(placements) < 2:  # noqa: PLR2004
        _msg = "need at least 2 placements"
        raise InvalidArgumentError(_msg)
    sensor = sensor or SensorConfig()
    noise = noise if noise is not None else NoiseConfig(0.0, 0.0, 0.0)
    if obj.outline is not None:
        lo, hi = obj.outline.min(axis=0), obj.outline.max(axis=0)
    else:
        extent = max(obj.dims)
        lo, hi = np.array([-extent, -extent]), np.array([extent, extent])
    us = np.arange(lo[0], hi[0] + pitch_mm, pitch_mm)
    vs = np.arange(lo[1], hi[1] + pitch_mm, pitch_mm)
    gu, gv = np.meshgrid(us, vs)
    ids = np.arange(1, gu.size + 1, dtype=np.int64)
    f = obj.underside(gu.ravel(), gv.ravel())
    pen = indent_mm - f
    on = np.isfinite(f) & (pen > 0)
    surface = np.column_stack((gu.ravel(), gv.ravel(), -np.where(on, pen, 0.0)))[on]
    ids = ids[on]

    half_w = sensor.width / 2.0 / sensor.ppmm - window_margin_mm
    half_h = sensor.height / 2.0 / sensor.ppmm - window_margin_mm
    to_map = _sensor_from_object(placements[0])
    patches: list[PatchCloud] = []
    truths: list[RigidTransform] = []
    covered = np.zeros(ids.size, dtype=np.bool_)
    for k, pl in enumerate(placements):
        to_sensor = _sensor_from_object(pl)
        local = to_sensor.apply(surface)
        seen = (np.abs(local[:, 0]) <= half_w) & (np.abs(local[:, 1]) <= half_h)
        pts = local[seen]
        rng = np.random.default_rng(noise_seed_for(seed, k))
        if noise.point_jitter_mm > 0:
            pts = pts + np.column_stack((rng.normal(0.0, noise.point_jitter_mm, (pts.shape[0], 2)), np.zeros(pts.shape[0])))
        if noise.height_sigma_mm > 0:
            pts = pts + np.column_stack((np.zeros((pts.shape[0], 2)), rng.normal(0.0, noise.height_sigma_mm, pts.shape[0])))
        patches.append(make_patch(pts, ids[seen]))
        truths.append(to_map.compose(to_sensor.inverse()))
        covered |= seen
        logger.debug("placement %d: %d points", k, int(seen.sum()))
    template = to_map.apply(surface[covered])
    return PatchScene(patches, truths, template)
