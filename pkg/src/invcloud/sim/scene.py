"""シミュレータの物体形状。

各形状は物体座標系での「下面」の高さ f(u, v) >= 0 (最下点が 0) と、その定義域を返す。
長さの単位はすべて mm。
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from matplotlib.path import Path as PolygonPath
from numpy.typing import NDArray

from invcloud.core.errors import InvalidArgumentError
from invcloud.core.geometry import FloatArray

ShapeKind = Literal["sphere", "ellipsoid", "box_corner", "extruded_outline"]


def _edge_profile(d_in: FloatArray, radius: float) -> FloatArray:
    """境界から内側へ d_in の位置での丸め量 (境界で radius、radius 以上内側で 0)。"""
    if radius <= 0:
        return np.zeros_like(d_in)
    d = np.clip(d_in, 0.0, radius)
    return radius - np.sqrt(np.maximum(radius**2 - (radius - d) ** 2, 0.0))


def _segments_distance(points: FloatArray, polygon: FloatArray) -> FloatArray:
    a = polygon
    b = np.roll(polygon, -1, axis=0)
    ab = b - a
    ab2 = np.maximum((ab**2).sum(axis=1), 1e-300)
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None, :, :]).sum(axis=2) / ab2[None, :], 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.sqrt(((points[:, None, :] - closest) ** 2).sum(axis=2)).min(axis=1)


def _is_simple(polygon: FloatArray) -> bool:
    n = polygon.shape[0]

    def cross(o: FloatArray, p: FloatArray, q: FloatArray) -> float:
        return float((p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0]))

    for i in range(n):
        a1, a2 = polygon[i], polygon[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            b1, b2 = polygon[j], polygon[(j + 1) % n]
            d1, d2 = cross(a1, a2, b1), cross(a1, a2, b2)
            d3, d4 = cross(b1, b2, a1), cross(b1, b2, a2)
            if d1 * d2 < 0 and d3 * d4 < 0:
                return False
    return True


@dataclass(frozen=True, eq=False)
class SceneObject:
    """押し当てる物体。`dims` の意味は形状ごとに異なる。

    - sphere: (radius,)
    - ellipsoid: (a, b, c)
    - box_corner: (w, h, edge_round) 角が原点
    - extruded_outline: (edge_round,) と `outline` (K, 2) の多角形
    """

    shape: ShapeKind
    dims: tuple[float, ...]
    outline: FloatArray | None = None

    def __post_init__(self) -> None:
        expected = {"sphere": 1, "ellipsoid": 3, "box_corner": 3, "extruded_outline": 1}
        if self.shape not in expected:
            _msg = f"unknown shape: {self.shape}"
            raise InvalidArgumentError(_msg)
        if len(self.dims) != expected[self.shape]:
            _msg = f"{self.shape} takes {expected[self.shape]} dims, got {len(self.dims)}"
            raise InvalidArgumentError(_msg)
        positive = self.dims if self.shape != "box_corner" else self.dims[:2]
        if any(not d > 0 for d in positive) or any(d < 0 for d in self.dims):
            _msg = f"dimensions must be positive, got {self.dims}"
            raise InvalidArgumentError(_msg)
        if self.shape == "extruded_outline":
            if self.outline is None:
                _msg = "extruded_outline needs an outline polygon"
                raise InvalidArgumentError(_msg)
            poly = np.asarray(self.outline, dtype=np.float64).reshape(-1, 2)
            if poly.shape[0] < 3 or not _is_simple(poly):  # noqa: PLR2004
                _msg = "outline must be a simple polygon with at least 3 vertices"
                raise InvalidArgumentError(_msg)
            object.__setattr__(self, "outline", poly)

    @classmethod
    def sphere(cls, radius: float) -> SceneObject:
        return cls("sphere", (radius,))

    @classmethod
    def ellipsoid(cls, a: float, b: float, c: float) -> SceneObject:
        return cls("ellipsoid", (a, b, c))

    @classmethod
    def box_corner(cls, w: float, h: float, edge_round: float = 0.5) -> SceneObject:
        return cls("box_corner", (w, h, edge_round))

    @classmethod
    def extruded(cls, outline: FloatArray, edge_round: float = 0.5) -> SceneObject:
        return cls("extruded_outline", (edge_round,), np.asarray(outline, dtype=np.float64))

    def underside(self, u: FloatArray, v: FloatArray) -> FloatArray:
        """下面の高さ。定義域外は +inf。"""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        out = np.full(u.shape, np.inf)
        match self.shape:
            case "sphere":
                (r,) = self.dims
                rho2 = u**2 + v**2
                inside = rho2 < r**2
                out[inside] = r - np.sqrt(r**2 - rho2[inside])
            case "ellipsoid":
                a, b, c = self.dims
                q = (u / a) ** 2 + (v / b) ** 2
                inside = q < 1.0
                out[inside] = c * (1.0 - np.sqrt(1.0 - q[inside]))
            case "box_corner":
                w, h, rr = self.dims
                inside = (u >= 0) & (u <= w) & (v >= 0) & (v <= h)
                d_in = np.minimum(np.minimum(u, w - u), np.minimum(v, h - v))
                out[inside] = _edge_profile(d_in[inside], rr)
            case "extruded_outline":
                (rr,) = self.dims
                assert self.outline is not None  # noqa: S101
                flat = np.column_stack((u.ravel(), v.ravel()))
                inside = PolygonPath(self.outline).contains_points(flat).reshape(u.shape)
                if inside.any():
                    d_in = _segments_distance(flat[inside.ravel()], self.outline)
                    out[inside] = _edge_profile(d_in, rr)
        return out

    def contains(self, uv: FloatArray) -> NDArray[np.bool_]:
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        return np.isfinite(self.underside(uv[:, 0], uv[:, 1]))


def scissors_outline() -> FloatArray:
    """はさみ (片側の持ち手 + 刃) の外形。原点付近が支点、+x 方向に刃が伸びる (mm)。"""
    handle = [
        (-34.0, 2.0),
        (-31.0, 9.0),
        (-24.0, 12.0),
        (-16.0, 11.0),
        (-10.0, 6.0),
    ]
    blade_top = [
        (-4.0, 4.5),
        (8.0, 4.0),
        (22.0, 2.8),
        (34.0, 1.0),
    ]
    blade_bottom = [
        (34.5, -0.5),
        (22.0, -2.5),
        (8.0, -3.5),
        (-4.0, -4.0),
    ]
    handle_bottom = [
        (-10.0, -3.0),
        (-16.0, -6.0),
        (-24.0, -7.0),
        (-31.0, -5.0),
    ]
    return np.array(handle + blade_top + blade_bottom + handle_bottom, dtype=np.float64)


OUTLINES = {"scissors": scissors_outline}


def object_from_config(shape: ShapeKind, dims: tuple[float, ...], outline: str = "scissors") -> SceneObject:
    """設定ファイルの `object` セクションから物体を作る。"""
    if shape == "extruded_outline":
        if outline not in OUTLINES:
            _msg = f"unknown outline: {outline} (known: {', '.join(sorted(OUTLINES))})"
            raise InvalidArgumentError(_msg)
        return SceneObject(shape, tuple(dims), OUTLINES[outline]())
    return SceneObject(shape, tuple(dims))
