"""高さマップ / 勾配場のバイナリ形式 (ICHM / ICGF)、PNG 形式、フレームディレクトリ。

ヘッダは 16 バイト: magic (4), u32 width, u32 height, f32 ppmm (リトルエンディアン)。
続いて行優先の f32 ペイロード (ICGF は gx, gy の 2 面)。
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import pandas as pd
import yaml
from numpy.typing import NDArray
from pyresults import Err, Ok, Result

from invcloud.core.geometry import FloatArray, GradientField, HeightMap
from invcloud.core.pose import Pose
from invcloud.util.logger import setup_logger

logger = setup_logger("invcloud")

HEADER = struct.Struct("<4sIIf")
MAGIC_HEIGHT = b"ICHM"
MAGIC_GRADIENT = b"ICGF"
PNG_MAX = 65535

REFERENCE_NAME = "reference.ichm"
MARKERS_NAME = "markers.png"
GT_NAME = "ground_truth.csv"


def _write_planes(path: Path, magic: bytes, planes: list[FloatArray], ppmm: float) -> None:
    h, w = planes[0].shape
    with path.open("wb") as f:
        f.write(HEADER.pack(magic, w, h, ppmm))
        for p in planes:
            f.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def _read_planes(path: Path, magic: bytes, n_planes: int) -> Result[tuple[list[FloatArray], float], str]:
    if not path.exists():
        return Err(f"File not found: {path}")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        return Err(f"Truncated header: {path}")
    got, w, h, ppmm = HEADER.unpack_from(raw)
    if got != magic:
        return Err(f"Bad magic {got!r} in {path} (expected {magic!r})")
    expected = HEADER.size + 4 * w * h * n_planes
    if len(raw) != expected:
        return Err(f"Payload size {len(raw) - HEADER.size} != {expected - HEADER.size} bytes in {path}")
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).astype(np.float64)
    planes = [data[k * w * h : (k + 1) * w * h].reshape(h, w) for k in range(n_planes)]
    return Ok((planes, float(ppmm)))


def save_height_map(hm: HeightMap, path: str | Path) -> None:
    _write_planes(Path(path), MAGIC_HEIGHT, [hm.data], hm.ppmm)


def load_height_map(path: str | Path) -> Result[HeightMap, str]:
    match _read_planes(Path(path), MAGIC_HEIGHT, 1):
        case Ok((planes, ppmm)):
            try:
                return Ok(HeightMap(planes[0], ppmm))
            except ValueError as e:
                return Err(f"Corrupt height map {path}: {e!s}")
        case Err(e):
            return Err(e)
    return Err(f"Unreadable height map: {path}")


def save_gradient_field(g: GradientField, path: str | Path) -> None:
    _write_planes(Path(path), MAGIC_GRADIENT, [g.gx, g.gy], g.ppmm)


def load_gradient_field(path: str | Path) -> Result[GradientField, str]:
    match _read_planes(Path(path), MAGIC_GRADIENT, 2):
        case Ok((planes, ppmm)):
            try:
                return Ok(GradientField(planes[0], planes[1], ppmm))
            except ValueError as e:
                return Err(f"Corrupt gradient field {path}: {e!s}")
        case Err(e):
            return Err(e)
    return Err(f"Unreadable gradient field: {path}")


# ---- PNG -------------------------------------------------------------------


def _scale_path(path: Path) -> Path:
    return path.with_suffix(".scale")


def export_height_png(hm: HeightMap, path: str | Path) -> None:
    """16 bit グレースケール PNG と、値域を記録した `.scale` ファイルを書く (可視化用)。"""
    _path = Path(path)
    lo = float(hm.data.min())
    hi = float(hm.data.max())
    span = hi - lo if hi > lo else 1.0
    img = np.rint((hm.data - lo) / span * PNG_MAX).astype(np.uint16)
    cv2.imwrite(str(_path), img)
    with _scale_path(_path).open("w", encoding="utf-8") as f:
        yaml.safe_dump({"ppmm": float(hm.ppmm), "offset": lo, "span": span}, f, sort_keys=True)


def import_height_png(path: str | Path) -> Result[HeightMap, str]:
    _path = Path(path)
    scale = _scale_path(_path)
    if not _path.exists() or not scale.exists():
        return Err(f"PNG or scale sidecar missing: {_path}")
    img = cv2.imread(str(_path), cv2.IMREAD_UNCHANGED)
    if img is None or img.dtype != np.uint16 or img.ndim != 2:  # noqa: PLR2004
        return Err(f"Not a 16-bit grayscale PNG: {_path}")
    try:
        with scale.open(encoding="utf-8") as f:
            meta = yaml.safe_load(f)
        data = img.astype(np.float64) / PNG_MAX * float(meta["span"]) + float(meta["offset"])
        return Ok(HeightMap(data, float(meta["ppmm"])))
    except (yaml.YAMLError, KeyError, TypeError, ValueError) as e:
        return Err(f"Invalid scale sidecar {scale}: {e!s}")


def save_mask_png(bits: NDArray[np.generic], path: str | Path) -> None:
    img = (np.asarray(bits).astype(np.bool_) * 255).astype(np.uint8)
    cv2.imwrite(str(path), img, [cv2.IMWRITE_PNG_BILEVEL, 1])


def load_mask_png(path: str | Path) -> Result[NDArray[np.bool_], str]:
    _path = Path(path)
    if not _path.exists():
        return Err(f"File not found: {_path}")
    img = cv2.imread(str(_path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        return Err(f"Unreadable mask image: {_path}")
    return Ok(img > 127)  # noqa: PLR2004


def load_marker_png(path: str | Path) -> Result[NDArray[np.uint8], str]:
    _path = Path(path)
    if not _path.exists():
        return Err(f"File not found: {_path}")
    img = cv2.imread(str(_path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        return Err(f"Unreadable marker image: {_path}")
    return Ok(img)


# ---- フレームディレクトリ --------------------------------------------------


@dataclass(frozen=True, eq=False)
class StoredFrame:
    index: int
    t_ms: float
    height: HeightMap
    aux_mask: NDArray[np.bool_] | None
    features_px: FloatArray | None


def frame_stem(index: int) -> str:
    return f"frame_{index:05d}"


def write_frame(
    out_dir: str | Path,
    index: int,
    height: HeightMap,
    aux_mask: NDArray[np.generic] | None = None,
    features_px: FloatArray | None = None,
) -> None:
    d = Path(out_dir)
    stem = frame_stem(index)
    save_height_map(height, d / f"{stem}.ichm")
    if aux_mask is not None:
        save_mask_png(aux_mask, d / f"{stem}_mask.png")
    if features_px is not None:
        np.savetxt(d / f"{stem}_features.txt", np.asarray(features_px).reshape(-1, 2), fmt="%.6f")


def write_ground_truth(out_dir: str | Path, rows: list[tuple[int, float, Pose]]) -> Path:
    path = Path(out_dir) / GT_NAME
    df = pd.DataFrame(
        [(i, t, *p.as_tuple()) for i, t, p in rows],
        columns=["frame", "t_ms", "tx_mm", "ty_mm", "tz_mm", "rx_deg", "ry_deg", "rz_deg"],
    )
    df.to_csv(path, index=False, float_format="%.9g")
    return path


def read_ground_truth(path: str | Path) -> Result[list[tuple[int, Pose]], str]:
    _path = Path(path)
    if not _path.exists():
        return Err(f"File not found: {_path}")
    try:
        df = pd.read_csv(_path)
        cols = ["tx_mm", "ty_mm", "tz_mm", "rx_deg", "ry_deg", "rz_deg"]
        return Ok([(int(r.frame), Pose.from_tuple([getattr(r, c) for c in cols])) for r in df.itertuples()])
    except (KeyError, AttributeError, ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        return Err(f"Invalid ground-truth CSV {_path}: {e!s}")


def list_frame_files(frames_dir: str | Path) -> Result[list[Path], str]:
    d = Path(frames_dir)
    if not d.is_dir():
        return Err(f"Frames directory not found: {d}")
    paths = sorted(d.glob("frame_*.ichm"))
    if not paths:
        return Err(f"No frame files in {d}")
    return Ok(paths)


def load_stored_frame(path: str | Path, fps: float = 25.0) -> Result[StoredFrame, str]:
    """`frame_XXXXX.ichm` と、あれば `_mask.png` / `_features.txt` を読む。"""
    p = Path(path)
    try:
        index = int(p.stem.split("_")[1])
    except (IndexError, ValueError):
        return Err(f"Unexpected frame file name: {p.name}")
    match load_height_map(p):
        case Ok(hm):
            height = hm
        case Err(e):
            return Err(e)
    aux = None
    mask_path = p.with_name(f"{p.stem}_mask.png")
    if mask_path.exists():
        match load_mask_png(mask_path):
            case Ok(bits):
                aux = bits
            case Err(e):
                return Err(e)
    features = None
    feat_path = p.with_name(f"{p.stem}_features.txt")
    if feat_path.exists():
        try:
            features = np.loadtxt(feat_path, ndmin=2).reshape(-1, 2)
        except ValueError as e:
            return Err(f"Invalid feature file {feat_path}: {e!s}")
    return Ok(StoredFrame(index, index * 1000.0 / fps, height, aux, features))


def load_frame_dir(frames_dir: str | Path, fps: float = 25.0) -> Result[list[StoredFrame], str]:
    """ディレクトリ内の全フレームを番号順に読む。"""
    match list_frame_files(frames_dir):
        case Ok(paths):
            pass
        case Err(e):
            return Err(e)
    frames: list[StoredFrame] = []
    for p in paths:
        match load_stored_frame(p, fps):
            case Ok(frame):
                frames.append(frame)
            case Err(e):
                return Err(e)
    logger.info("loaded %d frames from %s", len(frames), frames_dir)
    return Ok(frames)
