"""無接触フレームからマーカー格子を検出し、一意 ID 付きの高密度参照点群を構築する。"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from pyresults import Err, Ok, Result
from scipy import ndimage

from invcloud.core.errors import DetectionFailureError, GridLayoutError, InvalidArgumentError
from invcloud.core.geometry import (
    FloatArray,
    HeightMap,
    PixelCoord,
    WorldPoint,
    pixels_to_world,
    worlds_to_pixels,
)
from invcloud.util.logger import setup_logger

logger = setup_logger("invcloud")

MIN_BLOB_AREA_PX = 2
THRESHOLD_LEVELS = 16


@dataclass(frozen=True, eq=False)
class MarkerGrid:
    rows: int
    cols: int
    pixels: FloatArray  # (rows, cols, 2) [x, y]

    @property
    def count(self) -> int:
        return self.rows * self.cols

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.rows}x{self.cols}".encode())
        h.update(np.ascontiguousarray(self.pixels, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class ReferenceCloud:
    """グローバル不変な参照点群。`ids[k] == k + 1` が常に成り立つ。"""

    grid_rows: int
    grid_cols: int
    ids: NDArray[np.uint64]
    pixels: FloatArray  # (N, 2)
    world: FloatArray  # (N, 3)
    built_from: str
    width: int
    height: int
    ppmm: float

    def __post_init__(self) -> None:
        for name in ("ids", "pixels", "world"):
            arr = np.array(getattr(self, name), copy=True)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])

    @property
    def m(self) -> int:
        return self.grid_rows - 1

    @property
    def n(self) -> int:
        return self.grid_cols - 1

    def lookup(self, point_id: int) -> Result[tuple[PixelCoord, WorldPoint], str]:
        if not 1 <= point_id <= self.size:
            return Err(f"Unknown point id: {point_id} (valid 1..{self.size})")
        k = point_id - 1
        px, py = self.pixels[k]
        wx, wy, wz = self.world[k]
        return Ok((PixelCoord(float(px), float(py)), WorldPoint(float(wx), float(wy), float(wz))))


def grid_index(r: int, c: int, n: int) -> int:
    """格子 (r, c) のグローバル ID。"""
    return r * (n + 1) + c + 1


def lookup(cloud: ReferenceCloud, point_id: int) -> Result[tuple[PixelCoord, WorldPoint], str]:
    return cloud.lookup(point_id)


# ---- マーカー検出 ----------------------------------------------------------


def _blob_centroids(binary: NDArray[np.bool_]) -> FloatArray:
    labels, count = ndimage.label(binary)
    if count == 0:
        return np.zeros((0, 2))
    index = np.arange(1, count + 1)
    areas = ndimage.sum_labels(np.ones_like(labels), labels, index)
    keep = index[areas >= MIN_BLOB_AREA_PX]
    if keep.size == 0:
        return np.zeros((0, 2))
    com = np.array(ndimage.center_of_mass(binary, labels, keep), dtype=np.float64).reshape(-1, 2)
    return com[:, ::-1]  # (row, col) -> (x, y)


def _threshold_levels(mask: NDArray[np.generic]) -> list[float]:
    if mask.dtype == np.bool_:
        return [0.5]
    values = mask[mask > 0]
    if values.size == 0:
        return [0.5]
    hi, lo = float(values.max()), float(values.min())
    if hi == lo:
        return [hi]
    return [float(v) for v in np.linspace(hi, lo, THRESHOLD_LEVELS)]


def sort_into_grid(centroids: FloatArray, rows: int, cols: int) -> FloatArray:
    """重心列を y の帯でクラスタリングし、帯内を x でソートして (rows, cols, 2) にする。"""
    order = np.argsort(centroids[:, 1], kind="stable")
    bands = centroids[order].reshape(rows, cols, 2)
    band_y = bands[:, :, 1].mean(axis=1)
    spacing = float(np.median(np.diff(band_y))) if rows > 1 else np.inf
    tolerance = spacing / 2.0
    for r in range(rows):
        spread = bands[r, :, 1].max() - bands[r, :, 1].min()
        if spread >= tolerance:
            _msg = f"row band {r} spread {spread:.2f} px exceeds tolerance {tolerance:.2f} px"
            raise GridLayoutError(_msg)
        if r > 0 and bands[r, :, 1].min() <= bands[r - 1, :, 1].max():
            _msg = f"row bands {r - 1} and {r} overlap"
            raise GridLayoutError(_msg)
    out = np.empty_like(bands)
    for r in range(rows):
        out[r] = bands[r, np.argsort(bands[r, :, 0], kind="stable")]
    return out


def detect_markers(
    no_contact_height: HeightMap,
    marker_mask: NDArray[np.generic],
    expected: tuple[int, int],
) -> MarkerGrid:
    """マーカーマスクから R x C 個のサブピクセル重心を検出する。

    マスクが多値の場合は閾値を高い方から下げていき、期待個数に一致した時点で採用する。

    Raises:
        InvalidArgumentError: 寸法や期待格子が不正な場合
        DetectionFailureError: どの閾値でも期待個数に一致しない場合
        GridLayoutError: 行帯が重なり格子順に並べられない場合
    """
    rows, cols = expected
    if rows < 2 or cols < 2:  # noqa: PLR2004
        _msg = f"expected marker grid must be at least 2x2, got {rows}x{cols}"
        raise InvalidArgumentError(_msg)
    mask = np.asarray(marker_mask)
    if mask.shape != no_contact_height.data.shape:
        _msg = f"marker mask shape {mask.shape} != height map shape {no_contact_height.data.shape}"
        raise InvalidArgumentError(_msg)

    n_expected = rows * cols
    found = 0
    for level in _threshold_levels(mask):
        centroids = _blob_centroids(mask >= level if mask.dtype != np.bool_ else mask)
        found = centroids.shape[0]
        logger.debug("marker detection: level=%.3f found=%d expected=%d", level, found, n_expected)
        if found == n_expected:
            return MarkerGrid(rows, cols, sort_into_grid(centroids, rows, cols))
    raise DetectionFailureError(found, n_expected)


# ---- 格子補間 --------------------------------------------------------------


def interpolate_grid(markers: MarkerGrid, hm: HeightMap, m: int, n: int) -> ReferenceCloud:
    """マーカー格子を (m+1) x (n+1) 点に高密度化する。

    Args:
        markers: 検出済みマーカー格子
        hm: 無接触フレームの高さマップ
        m: 目標格子の行区間数 (点数は m + 1)
        n: 目標格子の列区間数 (点数は n + 1)
    """
    r_orig, c_orig = markers.rows, markers.cols
    if m < r_orig - 1 or n < c_orig - 1:
        _msg = f"target ({m}, {n}) would decimate the {r_orig}x{c_orig} marker grid"
        raise InvalidArgumentError(_msg)
    if m % (r_orig - 1) != 0 or n % (c_orig - 1) != 0:
        _msg = f"target ({m}, {n}) not divisible by marker intervals ({r_orig - 1}, {c_orig - 1})"
        raise InvalidArgumentError(_msg)

    a = m // (r_orig - 1)
    b = n // (c_orig - 1)
    flat_px = markers.pixels.reshape(-1, 2)
    marker_world = pixels_to_world(hm, flat_px[:, 0], flat_px[:, 1]).reshape(r_orig, c_orig, 3)

    r, c = np.meshgrid(np.arange(m + 1), np.arange(n + 1), indexing="ij")
    i = r // a
    j = c // b
    u = ((c % b) / b)[..., None]
    v = ((r % a) / a)[..., None]
    i1 = np.minimum(i + 1, r_orig - 1)
    j1 = np.minimum(j + 1, c_orig - 1)
    # u=0 / v=0 では重みが厳密に 0 になり、角・辺・内部の各ケースと一致する
    q = (
        (1 - u) * (1 - v) * marker_world[i, j]
        + u * (1 - v) * marker_world[i, j1]
        + (1 - u) * v * marker_world[i1, j]
        + u * v * marker_world[i1, j1]
    )
    world = q.reshape(-1, 3)
    pixels = worlds_to_pixels(world, hm.cx, hm.cy, hm.s)
    inside = (pixels[:, 0] > 0) & (pixels[:, 0] < hm.width - 1) & (pixels[:, 1] > 0) & (pixels[:, 1] < hm.height - 1)
    if not np.all(inside):
        _msg = f"{int((~inside).sum())} interpolated points fall on or outside the image border"
        raise GridLayoutError(_msg)

    ids = (r * (n + 1) + c + 1).reshape(-1).astype(np.uint64)
    cloud = ReferenceCloud(
        grid_rows=m + 1,
        grid_cols=n + 1,
        ids=ids,
        pixels=pixels,
        world=world,
        built_from=markers.digest(),
        width=hm.width,
        height=hm.height,
        ppmm=hm.ppmm,
    )
    logger.info("reference cloud built: %dx%d = %d points", m + 1, n + 1, cloud.size)
    return cloud


def build_reference_cloud(
    no_contact_height: HeightMap,
    marker_mask: NDArray[np.generic],
    expected: tuple[int, int],
    grid_points: tuple[int, int],
) -> ReferenceCloud:
    """検出と補間をまとめて実行する。`grid_points` は (m+1, n+1)。"""
    markers = detect_markers(no_contact_height, marker_mask, expected)
    return interpolate_grid(markers, no_contact_height, grid_points[0] - 1, grid_points[1] - 1)
