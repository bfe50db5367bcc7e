"""ID 対応の Kabsch 回転 (roll/pitch)、PCA 主軸ヨー、重心並進による 6-DoF トラッカー。

姿勢は Z-X-Y 右手系オイラー角 (R = Rz @ Rx @ Ry) で表す。
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from invcloud.core.contact import CentroidMode, ContactFrame, ContactSubset, contact_centroid
from invcloud.core.errors import (
    DegenerateGeometryError,
    InsufficientOverlapError,
    NoContactError,
    YawUnobservableError,
)
from invcloud.core.geometry import FloatArray, world_to_mm
from invcloud.util.logger import setup_logger

logger = setup_logger("invcloud")

DEFAULT_ANISOTROPY_THRESHOLD = 1.15
MIN_CORRESPONDENCES = 3
RANK_TOL = 1e-12
GIMBAL_COS_TOL = 1e-6


def normalize_deg(angle: float) -> float:
    """(-180, 180] に正規化する。"""
    a = math.fmod(angle, 360.0)
    if a <= -180.0:  # noqa: PLR2004
        a += 360.0
    elif a > 180.0:  # noqa: PLR2004
        a -= 360.0
    return a


def zxy_to_rotation(rz: float, rx: float, ry: float) -> FloatArray:
    return Rotation.from_euler("ZXY", [rz, rx, ry], degrees=True).as_matrix()


def rotation_to_zxy(rot: FloatArray) -> tuple[float, float, float] | None:
    """回転行列を (rz, rx, ry) [deg] に分解する。X 角が ±90° 付近の特異姿勢では None。"""
    # R = Rz Rx Ry の第 3 行第 2 列が sin(rx)
    sin_x = float(np.clip(rot[2, 1], -1.0, 1.0))
    if math.sqrt(max(0.0, 1.0 - sin_x * sin_x)) < GIMBAL_COS_TOL:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        rz, rx, ry = Rotation.from_matrix(rot).as_euler("ZXY", degrees=True)
    return float(rz), float(rx), float(ry)


@dataclass(frozen=True)
class Pose:
    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0
    rx: float = 0.0
    ry: float = 0.0
    rz: float = 0.0

    @property
    def rotation(self) -> FloatArray:
        return zxy_to_rotation(self.rz, self.rx, self.ry)

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.tx, self.ty, self.tz, self.rx, self.ry, self.rz)

    @classmethod
    def from_tuple(cls, values: tuple[float, ...] | list[float]) -> Pose:
        tx, ty, tz, rx, ry, rz = (float(v) for v in values)
        return cls(tx, ty, tz, rx, ry, rz)


@dataclass(frozen=True, eq=False)
class Correspondences:
    ids: np.ndarray
    p: FloatArray  # 前フレーム (N, 3)
    q: FloatArray  # 現フレーム (N, 3)

    @property
    def n(self) -> int:
        return int(self.ids.shape[0])


@dataclass(frozen=True)
class YawState:
    theta: float  # deg, 連続化済み
    axis: tuple[float, float]
    k: int
    ratio: float = math.inf


# ---- 対応付けと回転 --------------------------------------------------------


def match_by_id(prev: ContactSubset, curr: ContactSubset, min_count: int = MIN_CORRESPONDENCES) -> Correspondences:
    """ID の共通部分で 1 対 1 対応を作る (探索なし)。

    Raises:
        InsufficientOverlapError: 共通 ID が `min_count` 未満の場合
    """
    common, ip, iq = np.intersect1d(prev.ids, curr.ids, assume_unique=True, return_indices=True)
    if common.size < min_count:
        raise InsufficientOverlapError(int(common.size), min_count)
    return Correspondences(common, prev.world_points[ip], curr.world_points[iq])


def kabsch_rotation(c: Correspondences) -> FloatArray:
    """sum ||p~ - R q~||^2 を最小化する R in SO(3) を返す (p ~= R q)。

    Raises:
        InsufficientOverlapError: 点数が 3 未満
        DegenerateGeometryError: 共線など rank(H) < 2
    """
    if c.n < MIN_CORRESPONDENCES:
        raise InsufficientOverlapError(c.n, MIN_CORRESPONDENCES)
    p = c.p - c.p.mean(axis=0)
    q = c.q - c.q.mean(axis=0)
    h = p.T @ q
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0 or s[1] <= RANK_TOL * s[0]:
        _msg = f"degenerate correspondence geometry: singular values {s.tolist()}"
        raise DegenerateGeometryError(_msg)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def kabsch_residual(c: Correspondences, rot: FloatArray) -> float:
    p = c.p - c.p.mean(axis=0)
    q = c.q - c.q.mean(axis=0)
    return float(np.sum((p - q @ rot.T) ** 2))


# ---- PCA ヨー --------------------------------------------------------------


def pca_yaw(subset: ContactSubset, anisotropy_threshold: float = DEFAULT_ANISOTROPY_THRESHOLD) -> YawState:
    """接触点の XY 共分散の主軸からヨー角を求める (連続化前、(-90, 90])。

    Raises:
        YawUnobservableError: 点数不足、または固有値比が閾値未満 (等方的な接触)
    """
    if subset.k < 2:  # noqa: PLR2004
        raise YawUnobservableError(0.0, anisotropy_threshold)
    xy = subset.world_points[:, :2]
    centered = xy - xy.mean(axis=0)
    cov = centered.T @ centered / subset.k
    evals, evecs = np.linalg.eigh(cov)
    lam2, lam1 = float(evals[0]), float(evals[1])
    ratio = math.inf if lam2 <= 0 else lam1 / lam2
    if lam1 <= 0 or ratio < anisotropy_threshold:
        raise YawUnobservableError(ratio if lam1 > 0 else 0.0, anisotropy_threshold)
    ax, ay = float(evecs[0, 1]), float(evecs[1, 1])
    # 主軸の符号を固定して theta を (-90, 90] に収める
    if ax < 0 or (ax == 0 and ay < 0):
        ax, ay = -ax, -ay
    theta = math.degrees(math.atan2(ay, ax))
    return YawState(theta=theta, axis=(ax, ay), k=subset.k, ratio=ratio)


def yaw_continuity(prev: YawState, raw: YawState) -> YawState:
    """主軸の 180° 不定性を解消し、前回値に最も近い代表値を選ぶ。"""
    theta = raw.theta + 180.0 * round((prev.theta - raw.theta) / 180.0)
    if theta - prev.theta > 90.0:  # noqa: PLR2004
        theta -= 180.0
    elif theta - prev.theta < -90.0:  # noqa: PLR2004
        theta += 180.0
    # |theta - prev.theta| <= 90 なので、この向きは前回の主軸と内積が非負 (符号反転済み)
    rad = math.radians(theta)
    axis = (math.cos(rad), math.sin(rad))
    return YawState(theta=theta, axis=axis, k=raw.k, ratio=raw.ratio)


# ---- トラッカー ------------------------------------------------------------


@dataclass(frozen=True)
class TrackerConfig:
    anisotropy_threshold: float = DEFAULT_ANISOTROPY_THRESHOLD
    min_correspondences: int = MIN_CORRESPONDENCES
    close_kernel_px: int = 7
    close_iters: int = 2
    centroid_mode: CentroidMode = "contour"


@dataclass(frozen=True)
class TrackRow:
    frame: int
    t_ms: float
    pose: Pose
    tracked: bool
    n_corr: int
    aniso_ratio: float


@dataclass
class TrackerState:
    pose: Pose = field(default_factory=Pose)
    yaw: YawState | None = None
    yaw_origin: float | None = None
    centroid_origin_mm: FloatArray | None = None


def _centroid_mm(frame: ContactFrame, config: TrackerConfig) -> FloatArray:
    c = contact_centroid(
        frame.mask,
        frame.height,
        close_kernel_px=config.close_kernel_px,
        close_iters=config.close_iters,
        mode=config.centroid_mode,
    )
    return np.asarray(world_to_mm(c.as_array(), frame.height.ppmm), dtype=np.float64)


def _tilt_increment(corr: Correspondences, current: Pose) -> tuple[float, float]:
    # p ~= R q なので、前フレーム -> 現フレームの物体回転は R^T
    inc = kabsch_rotation(corr).T
    angles = rotation_to_zxy(inc)
    if angles is None:
        rotvec = Rotation.from_matrix(inc).as_rotvec(degrees=True)
        logger.warning("Euler singularity; holding roll/pitch (axis-angle increment %s deg)", rotvec.round(4).tolist())
        return current.rx, current.ry
    _, dx, dy = angles
    return normalize_deg(current.rx + dx), normalize_deg(current.ry + dy)


def init_tracker(first: ContactFrame, config: TrackerConfig | None = None) -> tuple[TrackerState, TrackRow]:
    """最初のフレームで原点 (ヨー、重心) を固定する。"""
    config = config or TrackerConfig()
    state = TrackerState()
    ratio = math.nan
    tracked = False
    try:
        state.centroid_origin_mm = _centroid_mm(first, config)
        tracked = True
    except NoContactError:
        logger.warning("frame %d: no contact at tracker start", first.index)
    try:
        raw = pca_yaw(first.subset, config.anisotropy_threshold)
        state.yaw = raw
        state.yaw_origin = raw.theta
        ratio = raw.ratio
    except YawUnobservableError as e:
        ratio = e.ratio
    return state, TrackRow(first.index, first.t_ms, state.pose, tracked, first.subset.k, ratio)


def step_tracker(
    state: TrackerState,
    prev_frame: ContactFrame,
    curr_frame: ContactFrame,
    config: TrackerConfig | None = None,
) -> TrackRow:
    """1 フレーム進める。`state` は更新される。

    対応不足・接触なしのフレームは姿勢を保持し tracked=False とする。ヨーが観測不能なら rz のみ保持する。
    """
    config = config or TrackerConfig()
    pose = state.pose
    try:
        corr = match_by_id(prev_frame.subset, curr_frame.subset, config.min_correspondences)
        centroid = _centroid_mm(curr_frame, config)
        rx, ry = _tilt_increment(corr, pose)
    except (InsufficientOverlapError, NoContactError, DegenerateGeometryError) as e:
        logger.warning("frame %d: coasting (%s)", curr_frame.index, e)
        return TrackRow(curr_frame.index, curr_frame.t_ms, pose, tracked=False, n_corr=0, aniso_ratio=math.nan)

    if state.centroid_origin_mm is None:
        state.centroid_origin_mm = centroid
    tx, ty, tz = (float(v) for v in centroid - state.centroid_origin_mm)

    rz = pose.rz
    ratio = math.nan
    try:
        raw = pca_yaw(curr_frame.subset, config.anisotropy_threshold)
        ratio = raw.ratio
        yaw = raw if state.yaw is None else yaw_continuity(state.yaw, raw)
        if state.yaw_origin is None:
            state.yaw_origin = yaw.theta
        state.yaw = yaw
        rz = yaw.theta - state.yaw_origin
    except YawUnobservableError as e:
        ratio = e.ratio
        logger.debug("frame %d: yaw unobservable (ratio %.4f)", curr_frame.index, e.ratio)

    state.pose = Pose(tx, ty, tz, rx, ry, rz)
    logger.debug("frame %d: n_corr=%d aniso=%.3f pose=%s", curr_frame.index, corr.n, ratio, state.pose)
    return TrackRow(curr_frame.index, curr_frame.t_ms, state.pose, tracked=True, n_corr=corr.n, aniso_ratio=ratio)


class InvariantTracker:
    """フレームを順に受け取る逐次トラッカー。"""

    def __init__(self, config: TrackerConfig | None = None) -> None:
        self.config = config or TrackerConfig()
        self._state: TrackerState | None = None
        self._prev: ContactFrame | None = None

    @property
    def pose(self) -> Pose:
        return self._state.pose if self._state is not None else Pose()

    def update(self, frame: ContactFrame) -> TrackRow:
        if self._state is None or self._prev is None:
            self._state, row = init_tracker(frame, self.config)
        else:
            row = step_tracker(self._state, self._prev, frame, self.config)
        # 追跡できなかったフレームは次の比較相手にしない (接触が戻るまで直前の有効フレームを保持)
        if row.tracked or self._prev is None or self._prev.subset.k < self.config.min_correspondences:
            self._prev = frame
        return row

    def run(self, frames: list[ContactFrame]) -> list[TrackRow]:
        return [self.update(f) for f in frames]
