"""参照点群のテキスト形式。

1 行目はヘッダ (`# invcloud-cloud rows=.. cols=.. width=.. height=.. ppmm=.. built_from=..`)、
以降 1 行 1 点で `id px py wx wy wz`。
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from pyresults import Err, Ok, Result

from invcloud.core.reference import ReferenceCloud

HEADER_TAG = "invcloud-cloud"
_HEADER_KEYS = ("rows", "cols", "width", "height", "ppmm", "built_from")


def write_cloud(cloud: ReferenceCloud, path: str | Path) -> Path:
    _path = Path(path)
    header = (
        f"# {HEADER_TAG} rows={cloud.grid_rows} cols={cloud.grid_cols} "
        f"width={cloud.width} height={cloud.height} ppmm={float(cloud.ppmm)!r} built_from={cloud.built_from}"
    )
    with _path.open("w", encoding="utf-8") as f:
        f.write(header + "\n")
        for pid, (px, py), (wx, wy, wz) in zip(cloud.ids.tolist(), cloud.pixels, cloud.world, strict=True):
            f.write(f"{pid} {float(px)!r} {float(py)!r} {float(wx)!r} {float(wy)!r} {float(wz)!r}\n")
    return _path


def _parse_header(line: str) -> Result[dict[str, str], str]:
    parts = line.lstrip("#").split()
    if not parts or parts[0] != HEADER_TAG:
        return Err("Missing cloud header line")
    meta = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
    missing = [k for k in _HEADER_KEYS if k not in meta]
    if missing:
        return Err(f"Cloud header lacks: {', '.join(missing)}")
    return Ok(meta)


def read_cloud(path: str | Path) -> Result[ReferenceCloud, str]:
    """`write_cloud` の出力を読み戻す。ID が 1..N の連番でなければ Err。"""
    _path = Path(path)
    if not _path.exists():
        return Err(f"Cloud file not found: {_path}")
    with _path.open(encoding="utf-8") as f:
        first = f.readline()
    match _parse_header(first):
        case Ok(meta):
            pass
        case Err(e):
            return Err(f"{e}: {_path}")
    try:
        body = np.loadtxt(_path, comments="#", ndmin=2)
        rows, cols = int(meta["rows"]), int(meta["cols"])
        if body.shape != (rows * cols, 6):
            return Err(f"Expected {rows * cols} points with 6 columns, got {body.shape} in {_path}")
        ids = body[:, 0].astype(np.uint64)
        if not np.array_equal(ids, np.arange(1, rows * cols + 1, dtype=np.uint64)):
            return Err(f"Point ids are not the sequence 1..{rows * cols} in {_path}")
        return Ok(
            ReferenceCloud(
                grid_rows=rows,
                grid_cols=cols,
                ids=ids,
                pixels=body[:, 1:3],
                world=body[:, 3:6],
                built_from=meta["built_from"],
                width=int(meta["width"]),
                height=int(meta["height"]),
                ppmm=float(meta["ppmm"]),
            ),
        )
    except ValueError as e:
        return Err(f"Invalid cloud file {_path}: {e!s}")
