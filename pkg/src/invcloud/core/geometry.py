"""画素格子上のスカラー場、サブピクセル補間、画素 <-> ワールド座標変換、勾配場の積分。

ワールド座標の長さ単位は `s = ppmm / 1000` を掛けた値で、mm への換算は `world_to_mm` を使う。
高さ値は「画素高さ」単位 (1 mm = ppmm 単位) で保持する。
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import fft

from invcloud.core.errors import InvalidArgumentError, OutOfRangeError

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class PixelCoord:
    x: float
    y: float


@dataclass(frozen=True)
class WorldPoint:
    x: float
    y: float
    z: float

    def as_array(self) -> FloatArray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


def _frozen(data: NDArray[np.generic]) -> FloatArray:
    arr = np.array(data, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class HeightMap:
    """行優先の高さ格子 `data[y, x]` と画素スケール `ppmm`。"""

    data: FloatArray
    ppmm: float
    _center: tuple[float, float, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        arr = _frozen(self.data)
        if arr.ndim != 2:  # noqa: PLR2004
            _msg = f"height map must be 2-D, got shape {arr.shape}"
            raise InvalidArgumentError(_msg)
        h, w = arr.shape
        if w < 2 or h < 2:  # noqa: PLR2004
            _msg = f"height map must be at least 2x2, got {w}x{h}"
            raise InvalidArgumentError(_msg)
        if not np.all(np.isfinite(arr)):
            _msg = "height map contains non-finite values"
            raise InvalidArgumentError(_msg)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "_center", image_center_and_scale(w, h, self.ppmm))

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def cx(self) -> float:
        return self._center[0]

    @property
    def cy(self) -> float:
        return self._center[1]

    @property
    def s(self) -> float:
        return self._center[2]

    @classmethod
    def flat(cls, width: int, height: int, ppmm: float, value: float = 0.0) -> HeightMap:
        return cls(np.full((height, width), value, dtype=np.float64), ppmm)


@dataclass(frozen=True, eq=False)
class GradientField:
    """表面勾配 dh/dx, dh/dy (画素高さ / 画素)。"""

    gx: FloatArray
    gy: FloatArray
    ppmm: float = 1.0

    def __post_init__(self) -> None:
        gx = _frozen(self.gx)
        gy = _frozen(self.gy)
        if gx.shape != gy.shape or gx.ndim != 2:  # noqa: PLR2004
            _msg = f"gradient grids must be 2-D with identical dims, got {gx.shape} and {gy.shape}"
            raise InvalidArgumentError(_msg)
        if gx.shape[0] < 2 or gx.shape[1] < 2:  # noqa: PLR2004
            _msg = f"gradient field must be at least 2x2, got {gx.shape[1]}x{gx.shape[0]}"
            raise InvalidArgumentError(_msg)
        if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gy))):
            _msg = "gradient field contains non-finite values"
            raise InvalidArgumentError(_msg)
        object.__setattr__(self, "gx", gx)
        object.__setattr__(self, "gy", gy)

    @property
    def width(self) -> int:
        return int(self.gx.shape[1])

    @property
    def height(self) -> int:
        return int(self.gx.shape[0])


# ---- 中心とスケール --------------------------------------------------------


def image_center_and_scale(width: int, height: int, ppmm: float) -> tuple[float, float, float]:
    if width < 1 or height < 1:
        _msg = f"image dims must be positive, got {width}x{height}"
        raise InvalidArgumentError(_msg)
    if not (ppmm > 0 and np.isfinite(ppmm)):
        _msg = f"ppmm must be positive, got {ppmm}"
        raise InvalidArgumentError(_msg)
    return (width - 1) / 2.0, (height - 1) / 2.0, ppmm / 1000.0


def world_to_mm(value: float | FloatArray, ppmm: float) -> float | FloatArray:
    """ワールド長さを mm に換算する (1 画素 = 1/ppmm mm)。"""
    return value / ((ppmm / 1000.0) * ppmm)


def mm_to_world(value: float | FloatArray, ppmm: float) -> float | FloatArray:
    return value * ((ppmm / 1000.0) * ppmm)


# ---- 双線形補間 ------------------------------------------------------------


def _check_bounds(hm: HeightMap, xs: FloatArray, ys: FloatArray) -> None:
    bad = ~((xs >= 0) & (xs <= hm.width - 1) & (ys >= 0) & (ys <= hm.height - 1) & np.isfinite(xs) & np.isfinite(ys))
    if np.any(bad):
        i = int(np.argmax(bad))
        _msg = f"pixel ({xs[i]}, {ys[i]}) outside [0, {hm.width - 1}] x [0, {hm.height - 1}]"
        raise OutOfRangeError(_msg)


def sample_bilinear_many(hm: HeightMap, xs: FloatArray, ys: FloatArray) -> FloatArray:
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    _check_bounds(hm, xs, ys)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, hm.width - 1)
    y1 = np.minimum(y0 + 1, hm.height - 1)
    alpha = xs - x0
    beta = ys - y0
    d = hm.data
    return (
        (1 - alpha) * (1 - beta) * d[y0, x0]
        + alpha * (1 - beta) * d[y0, x1]
        + (1 - alpha) * beta * d[y1, x0]
        + alpha * beta * d[y1, x1]
    )


def sample_bilinear(hm: HeightMap, p: PixelCoord) -> float:
    return float(sample_bilinear_many(hm, np.array([p.x]), np.array([p.y]))[0])


# ---- 画素 <-> ワールド -----------------------------------------------------


def pixels_to_world(hm: HeightMap, xs: FloatArray, ys: FloatArray) -> FloatArray:
    """(N,) 画素座標列を (N, 3) のワールド点に持ち上げる。"""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    z = sample_bilinear_many(hm, xs, ys)
    return np.column_stack(((xs - hm.cx) * hm.s, (hm.cy - ys) * hm.s, z * hm.s))


def pixel_to_world(hm: HeightMap, p: PixelCoord) -> WorldPoint:
    x, y, z = pixels_to_world(hm, np.array([p.x]), np.array([p.y]))[0]
    return WorldPoint(float(x), float(y), float(z))


def worlds_to_pixels(points: FloatArray, cx: float, cy: float, s: float) -> FloatArray:
    if not s > 0:
        _msg = f"scale must be positive, got {s}"
        raise InvalidArgumentError(_msg)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.column_stack((pts[:, 0] / s + cx, -pts[:, 1] / s + cy))


def world_to_pixel(w: WorldPoint, cx: float, cy: float, s: float) -> PixelCoord:
    if not s > 0:
        _msg = f"scale must be positive, got {s}"
        raise InvalidArgumentError(_msg)
    return PixelCoord(w.x / s + cx, -w.y / s + cy)


# ---- 勾配場の積分 (DCT) ----------------------------------------------------
#
# 高さは節点 0..N-1 上の余弦級数 (DCT-I, Neumann 境界)、勾配は対応する正弦級数 (DST-I) で表す。
# 振幅 a_k と scipy の非正規化変換係数の換算は _cos_factor / _sin_factor が受け持つ。


def _cos_factor(n: int) -> FloatArray:
    period = n - 1
    f = np.full(n, 1.0 / period)
    f[0] = f[-1] = 1.0 / (2 * period)
    return f


def _sin_factor(n: int) -> float:
    return 1.0 / (n - 1)


def _omega(n: int) -> FloatArray:
    return np.pi * np.arange(n) / (n - 1)


def _cos_analysis(arr: FloatArray, axis: int) -> FloatArray:
    n = arr.shape[axis]
    shape = [1, 1]
    shape[axis] = n
    return fft.dct(arr, type=1, axis=axis) * _cos_factor(n).reshape(shape)


def _cos_synthesis(amp: FloatArray, axis: int) -> FloatArray:
    n = amp.shape[axis]
    shape = [1, 1]
    shape[axis] = n
    return fft.idct(amp / _cos_factor(n).reshape(shape), type=1, axis=axis)


def _sin_analysis(arr: FloatArray, axis: int) -> FloatArray:
    """節点 1..N-2 の値から正弦振幅 (モード 1..N-2) を得る。"""
    n = arr.shape[axis]
    inner = np.take(arr, np.arange(1, n - 1), axis=axis)
    if inner.shape[axis] == 0:
        return inner
    return fft.dst(inner, type=1, axis=axis) * _sin_factor(n)


def _sin_synthesis(amp: FloatArray, axis: int, n: int) -> FloatArray:
    out_shape = list(amp.shape)
    out_shape[axis] = n
    out = np.zeros(out_shape)
    if amp.shape[axis] == 0:
        return out
    inner = fft.idst(amp / _sin_factor(n), type=1, axis=axis)
    idx: list[slice] = [slice(None), slice(None)]
    idx[axis] = slice(1, n - 1)
    out[tuple(idx)] = inner
    return out


def integrate_gradients_dct(g: GradientField) -> HeightMap:
    """勾配場を Neumann 境界の Poisson 方程式として積分し、平均ゼロの高さ場を返す。"""
    h, w = g.height, g.width
    wx = _omega(w)
    wy = _omega(h)

    # gx: y 方向は余弦、x 方向は正弦。gy はその逆。
    ax = _sin_analysis(_cos_analysis(g.gx, axis=0), axis=1)
    ay = _sin_analysis(_cos_analysis(g.gy, axis=1), axis=0)

    num = np.zeros((h, w))
    num[:, 1 : w - 1] += wx[1 : w - 1][None, :] * ax
    num[1 : h - 1, :] += wy[1 : h - 1][:, None] * ay
    den = wx[None, :] ** 2 + wy[:, None] ** 2
    den[0, 0] = 1.0
    coeff = -num / den
    coeff[0, 0] = 0.0
    # 最高次モードは節点上で勾配が消えるため復元対象から外す (積分 -> 勾配 -> 積分が射影になる)
    coeff[-1, :] = 0.0
    coeff[:, -1] = 0.0

    height = _cos_synthesis(_cos_synthesis(coeff, axis=0), axis=1)
    height -= height.mean()
    return HeightMap(height, g.ppmm)


def gradient_of(hm: HeightMap) -> GradientField:
    """`integrate_gradients_dct` と対になる (スペクトル) 勾配。"""
    h, w = hm.height, hm.width
    coeff = _cos_analysis(_cos_analysis(hm.data, axis=0), axis=1)
    wx = _omega(w)
    wy = _omega(h)
    ax = -coeff[:, 1 : w - 1] * wx[1 : w - 1][None, :]
    ay = -coeff[1 : h - 1, :] * wy[1 : h - 1][:, None]
    gx = _sin_synthesis(_cos_synthesis(ax, axis=0), axis=1, n=w)
    gy = _sin_synthesis(_cos_synthesis(ay, axis=1), axis=0, n=h)
    return GradientField(gx, gy, hm.ppmm)
