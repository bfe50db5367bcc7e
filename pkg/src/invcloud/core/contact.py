"""フレームごとの接触マスク生成、参照点群からの接触部分集合抽出、接触重心 (輪郭平均)。"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import cv2
import numpy as np
from numpy.typing import NDArray

from invcloud.core.errors import InvalidArgumentError, NoContactError
from invcloud.core.geometry import FloatArray, HeightMap, PixelCoord, WorldPoint, pixel_to_world, pixels_to_world
from invcloud.core.reference import ReferenceCloud
from invcloud.util.logger import setup_logger

logger = setup_logger("invcloud")

CentroidMode = Literal["contour", "moments"]

DEFAULT_KERNEL_PX = 5
DEFAULT_CLOSE_KERNEL_PX = 7
DEFAULT_CLOSE_ITERS = 2
DEFAULT_BORDER_MARGIN_PX = 2
DEFAULT_MIN_COMPONENT_PX = 16
DEFAULT_DESPECKLE_KERNEL_PX = 3


@dataclass(frozen=True, eq=False)
class ContactMask:
    bits: NDArray[np.bool_]

    def __post_init__(self) -> None:
        arr = np.array(self.bits, dtype=np.bool_, copy=True)
        if arr.ndim != 2:  # noqa: PLR2004
            _msg = f"contact mask must be 2-D, got shape {arr.shape}"
            raise InvalidArgumentError(_msg)
        arr.flags.writeable = False
        object.__setattr__(self, "bits", arr)

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not bool(self.bits.any())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ContactMask):
            return NotImplemented
        return bool(np.array_equal(self.bits, other.bits))

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def empty(cls, width: int, height: int) -> ContactMask:
        return cls(np.zeros((height, width), dtype=np.bool_))


@dataclass(frozen=True, eq=False)
class ContactSubset:
    ids: NDArray[np.uint64]
    world_points: FloatArray  # (K, 3)
    frame_index: int = 0

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids, dtype=np.uint64).ravel()
        pts = np.asarray(self.world_points, dtype=np.float64).reshape(-1, 3)
        if ids.shape[0] != pts.shape[0]:
            _msg = f"ids ({ids.shape[0]}) and world points ({pts.shape[0]}) differ in length"
            raise InvalidArgumentError(_msg)
        if ids.size > 1 and not np.all(np.diff(ids.astype(np.int64)) > 0):
            _msg = "contact subset ids must be strictly increasing"
            raise InvalidArgumentError(_msg)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "world_points", pts)

    @property
    def k(self) -> int:
        return int(self.ids.shape[0])


@dataclass(frozen=True, eq=False)
class ContactFrame:
    """1 フレーム分の観測 (高さマップ、接触マスク、接触部分集合)。"""

    index: int
    height: HeightMap
    mask: ContactMask
    subset: ContactSubset
    t_ms: float = 0.0
    features_px: FloatArray | None = None  # ID を持たない特徴点 (x, y)。ベースライン追跡用
    extras: dict[str, float] = field(default_factory=dict)


# ---- モルフォロジー --------------------------------------------------------


def ellipse_kernel(size_px: int) -> NDArray[np.uint8]:
    if size_px < 1:
        _msg = f"kernel size must be positive, got {size_px}"
        raise InvalidArgumentError(_msg)
    return cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (size_px, size_px))


def _morph(bits: NDArray[np.bool_], op: int, kernel_px: int, iters: int) -> NDArray[np.bool_]:
    # 画像外を 0 とした厳密な演算にするため、影響範囲分だけゼロパディングする
    pad = kernel_px * iters
    img = np.pad(bits.astype(np.uint8), pad, mode="constant")
    out = cv2.morphologyEx(img, op, ellipse_kernel(kernel_px), iterations=iters)
    return out[pad:-pad, pad:-pad].astype(np.bool_)


def close_mask(mask: ContactMask, kernel_px: int = DEFAULT_CLOSE_KERNEL_PX, iters: int = DEFAULT_CLOSE_ITERS) -> ContactMask:
    return ContactMask(_morph(mask.bits, cv2.MORPH_CLOSE, kernel_px, iters))


def remove_small_components(bits: NDArray[np.bool_], min_area_px: int) -> NDArray[np.bool_]:
    count, labels, stats, _ = cv2.connectedComponentsWithStats(bits.astype(np.uint8), connectivity=8)
    keep = np.zeros(count, dtype=np.bool_)
    keep[1:] = stats[1:, cv2.CC_STAT_AREA] >= min_area_px
    return keep[labels]


def largest_component(mask: ContactMask) -> ContactMask:
    """面積最大の連結成分だけを残す (空なら空)。"""
    count, labels, stats, _ = cv2.connectedComponentsWithStats(mask.bits.astype(np.uint8), connectivity=8)
    if count <= 1:
        return ContactMask.empty(mask.width, mask.height)
    best = 1 + int(np.argmax(stats[1:, cv2.CC_STAT_AREA]))
    return ContactMask(labels == best)


# ---- 接触マスク ------------------------------------------------------------


def build_contact_mask(
    current: HeightMap,
    reference: HeightMap,
    depth_threshold: float,
    aux_mask: NDArray[np.generic] | None = None,
    *,
    kernel_px: int = DEFAULT_KERNEL_PX,
    despeckle_px: int = DEFAULT_DESPECKLE_KERNEL_PX,
    min_component_px: int = DEFAULT_MIN_COMPONENT_PX,
) -> ContactMask:
    """高さの沈み込み (ワールド単位) の閾値処理とモルフォロジーで接触マスクを作る。

    Args:
        current: 現フレームの高さマップ
        reference: 無接触時の高さマップ
        depth_threshold: 沈み込み閾値 (ワールド単位、画素高さ h に s を掛けた値)
        aux_mask: 色差チャネルの代替となる任意の二値マスク (AND で合成)
        kernel_px: 膨張・収縮の楕円カーネル径
        despeckle_px: 閉処理の前に行うオープニングのカーネル径 (0 で行わない)
        min_component_px: この面積未満の孤立成分を除去する (0 で行わない)
    """
    if current.data.shape != reference.data.shape:
        _msg = f"height map dims differ: {current.data.shape} vs {reference.data.shape}"
        raise InvalidArgumentError(_msg)
    if not depth_threshold > 0:
        _msg = f"depth threshold must be positive, got {depth_threshold}"
        raise InvalidArgumentError(_msg)

    bits = (reference.data - current.data) * current.s > depth_threshold
    if aux_mask is not None:
        aux = np.asarray(aux_mask).astype(np.bool_)
        if aux.shape != bits.shape:
            _msg = f"aux mask dims {aux.shape} != height map dims {bits.shape}"
            raise InvalidArgumentError(_msg)
        bits &= aux

    if not bits.any():
        return ContactMask(bits)
    if despeckle_px > 0:
        bits = _morph(bits, cv2.MORPH_OPEN, despeckle_px, 1)
    bits = _morph(bits, cv2.MORPH_CLOSE, kernel_px, 1)
    if min_component_px > 0:
        bits = remove_small_components(bits, min_component_px)
    return ContactMask(bits)


# ---- 接触部分集合 ----------------------------------------------------------


def extract_contact_subset(
    cloud: ReferenceCloud,
    mask: ContactMask,
    hm: HeightMap,
    border_margin: int = DEFAULT_BORDER_MARGIN_PX,
    frame_index: int = 0,
) -> ContactSubset:
    """境界フィルタの後、整数画素位置でマスクを引いた参照点を、このフレームの高さで 3-D に持ち上げる。"""
    if mask.bits.shape != hm.data.shape or (mask.width, mask.height) != (cloud.width, cloud.height):
        _msg = f"mask {mask.bits.shape} / height {hm.data.shape} do not match cloud frame {cloud.height}x{cloud.width}"
        raise InvalidArgumentError(_msg)
    xi = np.rint(cloud.pixels[:, 0]).astype(np.intp)
    yi = np.rint(cloud.pixels[:, 1]).astype(np.intp)
    inside = (
        (xi >= border_margin)
        & (xi <= mask.width - 1 - border_margin)
        & (yi >= border_margin)
        & (yi <= mask.height - 1 - border_margin)
    )
    hit = np.zeros(cloud.size, dtype=np.bool_)
    hit[inside] = mask.bits[yi[inside], xi[inside]]
    idx = np.flatnonzero(hit)
    if idx.size == 0:
        return ContactSubset(np.zeros(0, dtype=np.uint64), np.zeros((0, 3)), frame_index)
    world = pixels_to_world(hm, cloud.pixels[idx, 0], cloud.pixels[idx, 1])
    return ContactSubset(cloud.ids[idx], world, frame_index)


# ---- 接触重心 --------------------------------------------------------------


def contact_centroid_pixel(
    mask: ContactMask,
    *,
    close_kernel_px: int = DEFAULT_CLOSE_KERNEL_PX,
    close_iters: int = DEFAULT_CLOSE_ITERS,
    mode: CentroidMode = "contour",
) -> PixelCoord:
    closed = close_mask(mask, close_kernel_px, close_iters)
    if closed.is_empty():
        _msg = "contact mask is empty after closing"
        raise NoContactError(_msg)
    contours, _ = cv2.findContours(closed.bits.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    gamma = max(contours, key=cv2.contourArea)
    if mode == "moments":
        mo = cv2.moments(gamma)
        if mo["m00"] > 0:
            return PixelCoord(mo["m10"] / mo["m00"], mo["m01"] / mo["m00"])
    pts = gamma.reshape(-1, 2).astype(np.float64)
    cx, cy = pts.mean(axis=0)
    return PixelCoord(float(cx), float(cy))


def contact_centroid(
    mask: ContactMask,
    hm: HeightMap,
    *,
    close_kernel_px: int = DEFAULT_CLOSE_KERNEL_PX,
    close_iters: int = DEFAULT_CLOSE_ITERS,
    mode: CentroidMode = "contour",
) -> WorldPoint:
    """閉処理 -> 最大輪郭 -> 輪郭点の平均 -> 3-D 持ち上げ。

    Raises:
        NoContactError: 閉処理後にマスクが空の場合
    """
    p = contact_centroid_pixel(mask, close_kernel_px=close_kernel_px, close_iters=close_iters, mode=mode)
    return pixel_to_world(hm, p)


def make_contact_frame(
    index: int,
    height: HeightMap,
    reference: HeightMap,
    cloud: ReferenceCloud,
    *,
    depth_threshold: float,
    aux_mask: NDArray[np.generic] | None = None,
    kernel_px: int = DEFAULT_KERNEL_PX,
    despeckle_px: int = DEFAULT_DESPECKLE_KERNEL_PX,
    min_component_px: int = DEFAULT_MIN_COMPONENT_PX,
    border_margin: int = DEFAULT_BORDER_MARGIN_PX,
    t_ms: float = 0.0,
    features_px: FloatArray | None = None,
) -> ContactFrame:
    """高さマップ 1 枚から ContactFrame を組み立てる (マスク生成 + 部分集合抽出)。"""
    mask = build_contact_mask(
        height,
        reference,
        depth_threshold,
        aux_mask,
        kernel_px=kernel_px,
        despeckle_px=despeckle_px,
        min_component_px=min_component_px,
    )
    subset = extract_contact_subset(cloud, mask, height, border_margin, index)
    logger.debug("frame %d: mask area=%d subset k=%d", index, mask.area, subset.k)
    return ContactFrame(index, height, mask, subset, t_ms, features_px)
