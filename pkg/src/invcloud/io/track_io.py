"""姿勢トラックの CSV 入出力。"""

from __future__ import annotations

import math
from collections.abc import Sequence
from pathlib import Path

import pandas as pd
from pyresults import Err, Ok, Result

from invcloud.core.pose import Pose, TrackRow

TRACK_COLUMNS = [
    "frame",
    "t_ms",
    "tx_mm",
    "ty_mm",
    "tz_mm",
    "rx_deg",
    "ry_deg",
    "rz_deg",
    "tracked",
    "n_corr",
    "aniso_ratio",
]
HEADER_COMMENT = "# angles in degrees, intrinsic Z-X-Y Euler (R = Rz @ Rx @ Ry); translations in mm"


def track_frame(rows: Sequence[TrackRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.frame, r.t_ms, *r.pose.as_tuple(), int(r.tracked), r.n_corr, r.aniso_ratio) for r in rows],
        columns=TRACK_COLUMNS,
    )


def write_track(rows: Sequence[TrackRow], path: str | Path) -> Path:
    _path = Path(path)
    with _path.open("w", encoding="utf-8", newline="") as f:
        f.write(HEADER_COMMENT + "\n")
        track_frame(rows).to_csv(f, index=False, float_format="%.9g", na_rep="nan")
    return _path


def read_track(path: str | Path) -> Result[list[TrackRow], str]:
    """列構成が一致しない CSV は Err (CLI では exit 3)。"""
    _path = Path(path)
    if not _path.exists():
        return Err(f"Track file not found: {_path}")
    try:
        df = pd.read_csv(_path, comment="#")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        return Err(f"Invalid track CSV {_path}: {e!s}")
    if list(df.columns) != TRACK_COLUMNS:
        return Err(f"Track schema mismatch in {_path}: {list(df.columns)}")
    rows: list[TrackRow] = []
    try:
        for r in df.itertuples(index=False):
            pose = Pose(r.tx_mm, r.ty_mm, r.tz_mm, r.rx_deg, r.ry_deg, r.rz_deg)
            ratio = float(r.aniso_ratio)
            rows.append(TrackRow(int(r.frame), float(r.t_ms), pose, bool(r.tracked), int(r.n_corr), ratio))
    except (TypeError, ValueError) as e:
        return Err(f"Invalid value in {_path}: {e!s}")
    if any(math.isnan(v) for row in rows for v in row.pose.as_tuple()):
        return Err(f"NaN pose values in {_path}")
    return Ok(rows)
