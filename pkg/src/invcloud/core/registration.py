"""接触間の点群レジストレーション (主軸による事前整列 + ICP + 重なり率ゲート) と、
最近傍 ICP によるベースライン追跡。長さの単位はすべて mm。
"""

from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field

import cv2
import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree
from scipy.spatial.distance import directed_hausdorff

from invcloud.core.contact import ContactFrame, ContactMask, ContactSubset, close_mask
from invcloud.core.errors import (
    DegenerateGeometryError,
    InsufficientOverlapError,
    InvalidArgumentError,
    PrealignUnavailableError,
    YawUnobservableError,
)
from invcloud.core.geometry import FloatArray, pixels_to_world, world_to_mm
from invcloud.core.pose import (
    DEFAULT_ANISOTROPY_THRESHOLD,
    Correspondences,
    Pose,
    TrackRow,
    kabsch_rotation,
    normalize_deg,
    pca_yaw,
    rotation_to_zxy,
)
from invcloud.util.logger import setup_logger

logger = setup_logger("invcloud")

DIVERGENCE_STREAK = 3
ADAPTIVE_GATE_FACTOR = 3.0
FEATURE_STRIDE_PX = 4


@dataclass(frozen=True)
class RegistrationConfig:
    overlap_gate: float = 0.35
    rmse_gate_mm: float = 0.5
    nn_gate_mm: float = 1.0
    max_iters: int = 50
    tol_mm: float = 1e-6
    anisotropy_threshold: float = DEFAULT_ANISOTROPY_THRESHOLD
    require_shared_ids: bool = True


# ---- 剛体変換 --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """x -> R x + t"""

    rotation: FloatArray = field(default_factory=lambda: np.eye(3))
    translation: FloatArray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def about_z(cls, yaw_deg: float, translation: FloatArray | None = None) -> RigidTransform:
        c, s = math.cos(math.radians(yaw_deg)), math.sin(math.radians(yaw_deg))
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rot, np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64))

    def apply(self, points: FloatArray) -> FloatArray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other: RigidTransform) -> RigidTransform:
        """self ∘ other (other を先に適用)。"""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    @property
    def yaw_deg(self) -> float:
        return math.degrees(math.atan2(self.rotation[1, 0], self.rotation[0, 0]))


def fit_rigid(p: FloatArray, q: FloatArray) -> RigidTransform:
    """p ~= R q + t となる最小二乗剛体変換 (Kabsch + 並進)。"""
    corr = Correspondences(np.arange(p.shape[0]), p, q)
    rot = kabsch_rotation(corr)
    t = p.mean(axis=0) - rot @ q.mean(axis=0)
    return RigidTransform(rot, t)


# ---- パッチ ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PatchCloud:
    points: FloatArray  # (N, 3) mm
    ids: NDArray[np.int64]
    principal_axis: tuple[float, float] | None
    centroid: FloatArray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        ids = np.asarray(self.ids, dtype=np.int64).ravel()
        if pts.shape[0] != ids.shape[0] or pts.shape[0] < 3:  # noqa: PLR2004
            _msg = f"patch needs >= 3 points with matching ids, got {pts.shape[0]} points / {ids.shape[0]} ids"
            raise InvalidArgumentError(_msg)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "centroid", np.asarray(self.centroid, dtype=np.float64))

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def axis_deg(self) -> float | None:
        if self.principal_axis is None:
            return None
        return math.degrees(math.atan2(self.principal_axis[1], self.principal_axis[0]))

    def transformed(self, tf: RigidTransform) -> PatchCloud:
        axis = self.principal_axis
        if axis is not None:
            v = tf.rotation[:2, :2] @ np.array(axis)
            v /= np.linalg.norm(v)
            axis = (float(v[0]), float(v[1]))
        return PatchCloud(tf.apply(self.points), self.ids, axis, tf.apply(self.centroid[None, :])[0])


def make_patch(
    points_mm: FloatArray,
    ids: NDArray[np.integer],
    anisotropy_threshold: float = DEFAULT_ANISOTROPY_THRESHOLD,
) -> PatchCloud:
    pts = np.asarray(points_mm, dtype=np.float64).reshape(-1, 3)
    order = np.argsort(np.asarray(ids), kind="stable")
    pts = pts[order]
    sorted_ids = np.asarray(ids, dtype=np.int64)[order]
    axis: tuple[float, float] | None = None
    try:
        yaw = pca_yaw(ContactSubset(sorted_ids.astype(np.uint64), pts), anisotropy_threshold)
        axis = yaw.axis
    except YawUnobservableError:
        axis = None
    return PatchCloud(pts, sorted_ids, axis, pts.mean(axis=0))


def patch_from_subset(
    subset: ContactSubset,
    ppmm: float,
    anisotropy_threshold: float = DEFAULT_ANISOTROPY_THRESHOLD,
) -> PatchCloud:
    pts = np.asarray(world_to_mm(subset.world_points, ppmm), dtype=np.float64)
    return make_patch(pts, subset.ids.astype(np.int64), anisotropy_threshold)


# ---- 事前整列 --------------------------------------------------------------


def wrap_half_turn(angle_deg: float) -> float:
    """mod 180 で 0 に最も近い代表値 ((-90, 90])。"""
    a = math.fmod(angle_deg, 180.0)
    if a <= -90.0:  # noqa: PLR2004
        a += 180.0
    elif a > 90.0:  # noqa: PLR2004
        a -= 180.0
    return a


def centroid_alignment(a: PatchCloud, b: PatchCloud) -> RigidTransform:
    return RigidTransform(np.eye(3), a.centroid - b.centroid)


def prealign(a: PatchCloud, b: PatchCloud, *, flip: bool = False) -> RigidTransform:
    """b の主軸を a の主軸に合わせる Z 回転と、重心の一致からなる b -> a の変換。

    Raises:
        PrealignUnavailableError: どちらかのパッチが等方的で主軸を持たない場合
    """
    if a.axis_deg is None or b.axis_deg is None:
        _msg = "principal axis unavailable (isotropic patch)"
        raise PrealignUnavailableError(_msg)
    yaw = wrap_half_turn(a.axis_deg - b.axis_deg)
    if flip:
        yaw = yaw - 180.0 if yaw > 0 else yaw + 180.0
    rot = RigidTransform.about_z(yaw)
    return RigidTransform(rot.rotation, a.centroid - rot.rotation @ b.centroid)


def anchor_by_ids(a: PatchCloud, b: PatchCloud) -> RigidTransform | None:
    """共通 ID が 3 点以上あれば、それを対応として b -> a を直接解く。"""
    common, ia, ib = np.intersect1d(a.ids, b.ids, assume_unique=True, return_indices=True)
    if common.size < 3:  # noqa: PLR2004
        return None
    try:
        return fit_rigid(a.points[ia], b.points[ib])
    except (DegenerateGeometryError, InsufficientOverlapError):
        return None


# ---- ICP -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    transform: RigidTransform
    overlap_ratio: float
    rmse: float
    accepted: bool
    iterations: int = 0
    converged: bool = True

    @property
    def rotation(self) -> FloatArray:
        return self.transform.rotation

    @property
    def translation(self) -> FloatArray:
        return self.transform.translation


def _score(tree: cKDTree, moved: FloatArray, nn_gate: float) -> tuple[float, float]:
    d, _ = tree.query(moved)
    within = d <= nn_gate
    overlap = float(within.mean())
    rmse = float(np.sqrt(np.mean(d[within] ** 2))) if within.any() else math.inf
    return overlap, rmse


def icp_refine(
    a: PatchCloud,
    b: PatchCloud,
    init: RigidTransform | None = None,
    config: RegistrationConfig | None = None,
) -> RegistrationResult:
    """最近傍対応 + Kabsch で b を a に合わせる。

    対応の棄却距離は max(nn_gate, 3 * 中央値) で反復ごとに縮む。
    平均残差の変化が tol 未満で収束、3 回連続で残差が増えたら発散とみなす。
    """
    config = config or RegistrationConfig()
    tree = cKDTree(a.points)
    init = init or RigidTransform.identity()
    tf = init
    _, rmse0 = _score(tree, tf.apply(b.points), config.nn_gate_mm)

    prev_mean = math.inf
    rising = 0
    converged = False
    diverged = False
    it = 0
    for it in range(1, config.max_iters + 1):  # noqa: B007
        moved = tf.apply(b.points)
        d, idx = tree.query(moved)
        gate = max(config.nn_gate_mm, ADAPTIVE_GATE_FACTOR * float(np.median(d)))
        sel = d <= gate
        if sel.sum() < 3:  # noqa: PLR2004
            diverged = True
            break
        mean_res = float(d[sel].mean())
        if abs(prev_mean - mean_res) < config.tol_mm:
            converged = True
            break
        rising = rising + 1 if mean_res > prev_mean else 0
        if rising >= DIVERGENCE_STREAK:
            diverged = True
            break
        prev_mean = mean_res
        try:
            step = fit_rigid(a.points[idx[sel]], moved[sel])
        except DegenerateGeometryError:
            diverged = True
            break
        tf = step.compose(tf)
    else:
        converged = True

    overlap, rmse = _score(tree, tf.apply(b.points), config.nn_gate_mm)
    if rmse > rmse0:
        # 初期値より悪化した場合は初期値を返す
        tf = init
        overlap, rmse = _score(tree, tf.apply(b.points), config.nn_gate_mm)
    accepted = (not diverged) and overlap >= config.overlap_gate and rmse <= config.rmse_gate_mm
    logger.debug("icp: iters=%d overlap=%.3f rmse=%.4f accepted=%s", it, overlap, rmse, accepted)
    return RegistrationResult(tf, overlap, rmse, accepted, it, converged and not diverged)


# ---- 地図の蓄積 ------------------------------------------------------------


@dataclass(frozen=True)
class JournalRow:
    patch_idx: int
    accepted: bool
    yaw_deg: float
    tx: float
    ty: float
    tz: float
    overlap: float
    rmse: float


@dataclass
class FusedMap:
    """地図座標系に変換済みのパッチ列と、グローバル ID ごとの平均化済み点。"""

    patches: list[PatchCloud] = field(default_factory=list)
    journal: list[JournalRow] = field(default_factory=list)
    sums: dict[int, FloatArray] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)

    def _absorb(self, patch: PatchCloud) -> None:
        for pid, pt in zip(patch.ids.tolist(), patch.points, strict=True):
            if pid in self.sums:
                self.sums[pid] = self.sums[pid] + pt
                self.counts[pid] += 1
            else:
                self.sums[pid] = pt.copy()
                self.counts[pid] = 1
        self.patches.append(patch)

    @classmethod
    def seed(cls, patch: PatchCloud) -> FusedMap:
        fmap = cls()
        fmap._absorb(patch)  # noqa: SLF001
        fmap.journal.append(JournalRow(0, True, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0))
        return fmap

    @property
    def unique_ids(self) -> list[int]:
        return sorted(self.sums)

    def points(self) -> tuple[NDArray[np.int64], FloatArray, NDArray[np.int64]]:
        """(ids, 平均位置, 観測回数) を ID 昇順で返す。"""
        ids = np.array(self.unique_ids, dtype=np.int64)
        if ids.size == 0:
            return ids, np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
        pts = np.array([self.sums[i] / self.counts[i] for i in ids.tolist()])
        n_obs = np.array([self.counts[i] for i in ids.tolist()], dtype=np.int64)
        return ids, pts, n_obs


def shared_id_ratio(a: PatchCloud, b: PatchCloud) -> float:
    """b の点のうち a と同じグローバル ID を持つ割合。"""
    return float(np.intersect1d(a.ids, b.ids).size / b.size)


def _candidate_inits(ref: PatchCloud, nxt: PatchCloud) -> list[tuple[RigidTransform, bool]]:
    """(初期値, ID アンカーか) の列。"""
    inits: list[tuple[RigidTransform, bool]] = []
    anchored = anchor_by_ids(ref, nxt)
    if anchored is not None:
        inits.append((anchored, True))
    try:
        inits.append((prealign(ref, nxt), False))
        inits.append((prealign(ref, nxt, flip=True), False))
    except PrealignUnavailableError:
        inits.append((centroid_alignment(ref, nxt), False))
    return inits


def register_patch(ref: PatchCloud, nxt: PatchCloud, config: RegistrationConfig | None = None) -> RegistrationResult:
    """候補初期値 (ID アンカー、主軸の 2 分岐) それぞれで ICP を行い、最良を返す。

    主軸・重心の初期値は重心を重ねてしまうため、幾何的な重なり率は共通面の有無を表さない。
    `require_shared_ids` のとき、これらの結果は共通 ID の割合でも重なりゲートを通す必要がある。
    """
    config = config or RegistrationConfig()
    id_ratio = shared_id_ratio(ref, nxt)
    best: RegistrationResult | None = None
    for init, anchored in _candidate_inits(ref, nxt):
        res = icp_refine(ref, nxt, init, config)
        if config.require_shared_ids and not anchored and id_ratio < config.overlap_gate:
            res = dataclasses.replace(res, overlap_ratio=min(res.overlap_ratio, id_ratio), accepted=False)
        if best is None or (res.accepted, -res.rmse, res.overlap_ratio) > (best.accepted, -best.rmse, best.overlap_ratio):
            best = res
    if best is None:
        _msg = "no registration candidate"
        raise PrealignUnavailableError(_msg)
    return best


def accumulate(
    fused: FusedMap,
    nxt: PatchCloud,
    config: RegistrationConfig | None = None,
) -> tuple[FusedMap, RegistrationResult]:
    """直近の受理パッチに対して登録し、受理されれば地図に統合する (元の地図は変更しない)。"""
    config = config or RegistrationConfig()
    if not fused.patches:
        _msg = "map must be seeded with a first patch"
        raise InvalidArgumentError(_msg)
    ref = fused.patches[-1]
    res = register_patch(ref, nxt, config)
    updated = copy.deepcopy(fused)
    t = res.transform
    updated.journal.append(
        JournalRow(
            patch_idx=len(fused.journal),
            accepted=res.accepted,
            yaw_deg=t.yaw_deg,
            tx=float(t.translation[0]),
            ty=float(t.translation[1]),
            tz=float(t.translation[2]),
            overlap=res.overlap_ratio,
            rmse=res.rmse,
        ),
    )
    if res.accepted:
        updated._absorb(nxt.transformed(t))  # noqa: SLF001
        logger.info("patch %d accepted (overlap %.2f, rmse %.3f mm)", len(fused.journal), res.overlap_ratio, res.rmse)
    else:
        logger.warning("patch %d rejected (overlap %.2f, rmse %.3f mm)", len(fused.journal), res.overlap_ratio, res.rmse)
    return updated, res


def hausdorff_distance(a: FloatArray, b: FloatArray) -> float:
    """対称ハウスドルフ距離。"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0]))


def map_contour(fused: FusedMap, *, close_kernel_px: int = 3) -> FloatArray:
    """融合地図を XY 平面に投影した外形 (x, y) [mm]。

    点の間隔 (最近傍距離の中央値) をセルとして二値化し、閉処理した最大連結成分の輪郭を返す。
    """
    _, pts, _ = fused.points()
    if pts.shape[0] < 3:  # noqa: PLR2004
        _msg = f"map contour needs at least 3 points, got {pts.shape[0]}"
        raise InvalidArgumentError(_msg)
    xy = pts[:, :2]
    d, _ = cKDTree(xy).query(xy, k=2)
    cell = float(np.median(d[:, 1]))
    if not cell > 0:
        _msg = "map points are coincident"
        raise DegenerateGeometryError(_msg)
    origin = xy.min(axis=0)
    ij = np.rint((xy - origin) / cell).astype(np.int64)
    bits = np.zeros((int(ij[:, 1].max()) + 1, int(ij[:, 0].max()) + 1), dtype=np.bool_)
    bits[ij[:, 1], ij[:, 0]] = True
    closed = close_mask(ContactMask(bits), close_kernel_px, 1)
    contours, _ = cv2.findContours(closed.bits.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    gamma = max(contours, key=cv2.contourArea).reshape(-1, 2).astype(np.float64)
    return origin + gamma * cell


# ---- ベースライン (最近傍 ICP 追跡) ----------------------------------------


def frame_features_mm(frame: ContactFrame) -> FloatArray:
    """ICP 用の生の接触点 (ID なし)。シミュレータの特徴点追跡結果があればそれを使う。"""
    hm = frame.height
    px = frame.features_px
    if px is None:
        ys, xs = np.nonzero(frame.mask.bits[::FEATURE_STRIDE_PX, ::FEATURE_STRIDE_PX])
        px = np.column_stack((xs * FEATURE_STRIDE_PX, ys * FEATURE_STRIDE_PX)).astype(np.float64)
    if px.shape[0] == 0:
        return np.zeros((0, 3))
    px = np.asarray(px, dtype=np.float64)
    keep = (px[:, 0] >= 0) & (px[:, 0] <= hm.width - 1) & (px[:, 1] >= 0) & (px[:, 1] <= hm.height - 1)
    px = px[keep]
    world = pixels_to_world(hm, px[:, 0], px[:, 1])
    return np.asarray(world_to_mm(world, hm.ppmm), dtype=np.float64)


def _feature_patch(points: FloatArray) -> PatchCloud:
    return PatchCloud(points, np.arange(points.shape[0]), None, points.mean(axis=0))


class BaselineTracker:
    """ID を使わないフレーム間 ICP を累積する逐次トラッカー (ドリフトする比較対象)。"""

    def __init__(self, config: RegistrationConfig | None = None) -> None:
        self.config = config or RegistrationConfig()
        self.pose = Pose()
        self._total = RigidTransform.identity()
        self._origin: FloatArray | None = None
        self._prev: FloatArray | None = None

    def update(self, frame: ContactFrame) -> TrackRow:
        curr = frame_features_mm(frame)
        if self._prev is None:
            self._origin = curr.mean(axis=0) if curr.shape[0] else np.zeros(3)
            self._prev = curr
            return TrackRow(frame.index, frame.t_ms, self.pose, curr.shape[0] >= 3, curr.shape[0], math.nan)  # noqa: PLR2004
        prev = self._prev
        if prev.shape[0] < 3 or curr.shape[0] < 3:  # noqa: PLR2004
            if curr.shape[0] >= 3:  # noqa: PLR2004
                self._prev = curr
            return TrackRow(frame.index, frame.t_ms, self.pose, False, 0, math.nan)
        res = icp_refine(_feature_patch(prev), _feature_patch(curr), RigidTransform.identity(), self.config)
        self._prev = curr
        if not res.converged:
            logger.warning("baseline frame %d: ICP did not converge; coasting", frame.index)
            return TrackRow(frame.index, frame.t_ms, self.pose, False, 0, math.nan)
        # res は 現 -> 前 の変換なので、物体運動はその逆
        self._total = res.transform.inverse().compose(self._total)
        pose = self.pose
        angles = rotation_to_zxy(self._total.rotation)
        rz, rx, ry = angles if angles is not None else (pose.rz, pose.rx, pose.ry)
        rz = pose.rz + normalize_deg(rz - pose.rz)
        origin = self._origin if self._origin is not None else np.zeros(3)
        tx, ty, tz = (float(v) for v in self._total.apply(origin[None, :])[0] - origin)
        self.pose = Pose(tx, ty, tz, rx, ry, rz)
        return TrackRow(frame.index, frame.t_ms, self.pose, True, curr.shape[0], math.nan)


def baseline_nn_icp_track(frames: list[ContactFrame], config: RegistrationConfig | None = None) -> list[TrackRow]:
    if len(frames) < 2:  # noqa: PLR2004
        _msg = f"baseline tracking needs >= 2 frames, got {len(frames)}"
        raise InvalidArgumentError(_msg)
    tracker = BaselineTracker(config)
    return [tracker.update(f) for f in frames]
