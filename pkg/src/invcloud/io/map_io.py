"""接触パッチ、融合地図、変換ジャーナルのテキスト形式。"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import pandas as pd
from pyresults import Err, Ok, Result

from invcloud.core.errors import InvalidArgumentError
from invcloud.core.geometry import FloatArray
from invcloud.core.registration import FusedMap, JournalRow, PatchCloud, make_patch

PATCH_NAME = "patch.txt"
TEMPLATE_NAME = "template.txt"
MAP_NAME = "fused_map.txt"
JOURNAL_NAME = "journal.csv"
CONTOUR_NAME = "map_contour.txt"
JOURNAL_COLUMNS = [f.name for f in fields(JournalRow)]


def write_patch(patch: PatchCloud, path: str | Path) -> Path:
    _path = Path(path)
    body = np.column_stack((patch.ids, patch.points))
    np.savetxt(_path, body, fmt=["%d", "%.9g", "%.9g", "%.9g"], header="id x y z")
    return _path


def read_patch(path: str | Path) -> Result[PatchCloud, str]:
    _path = Path(path)
    if not _path.exists():
        return Err(f"Patch file not found: {_path}")
    try:
        body = np.loadtxt(_path, comments="#", ndmin=2)
        if body.shape[1] != 4:  # noqa: PLR2004
            return Err(f"Patch file needs 4 columns (id x y z): {_path}")
        ids = body[:, 0].astype(np.int64)
        if np.unique(ids).size != ids.size:
            return Err(f"Duplicate ids in patch {_path}")
        return Ok(make_patch(body[:, 1:4], ids))
    except (ValueError, InvalidArgumentError) as e:
        return Err(f"Invalid patch file {_path}: {e!s}")


def write_points(points: FloatArray, path: str | Path) -> Path:
    _path = Path(path)
    np.savetxt(_path, np.asarray(points).reshape(-1, 3), fmt="%.9g", header="x y z")
    return _path


def read_points(path: str | Path) -> Result[FloatArray, str]:
    _path = Path(path)
    if not _path.exists():
        return Err(f"Point file not found: {_path}")
    try:
        body = np.loadtxt(_path, comments="#", ndmin=2)
    except ValueError as e:
        return Err(f"Invalid point file {_path}: {e!s}")
    if body.shape[1] != 3 or body.shape[0] == 0:  # noqa: PLR2004
        return Err(f"Point file needs rows of x y z: {_path}")
    return Ok(body)


def write_fused_map(fused: FusedMap, path: str | Path) -> Path:
    """`id x y z n_obs` を ID 昇順で書く。"""
    _path = Path(path)
    ids, pts, n_obs = fused.points()
    body = np.column_stack((ids, pts, n_obs)) if ids.size else np.zeros((0, 5))
    np.savetxt(_path, body, fmt=["%d", "%.9g", "%.9g", "%.9g", "%d"], header="id x y z n_obs")
    return _path


def write_contour(contour: FloatArray, path: str | Path) -> Path:
    _path = Path(path)
    np.savetxt(_path, np.asarray(contour).reshape(-1, 2), fmt="%.9g", header="x y")
    return _path


def write_journal(journal: Sequence[JournalRow], path: str | Path) -> Path:
    _path = Path(path)
    df = pd.DataFrame([asdict(r) for r in journal], columns=JOURNAL_COLUMNS)
    df["accepted"] = df["accepted"].astype(int)
    df.to_csv(_path, index=False, float_format="%.9g")
    return _path


def read_journal(path: str | Path) -> Result[list[JournalRow], str]:
    _path = Path(path)
    if not _path.exists():
        return Err(f"Journal not found: {_path}")
    try:
        df = pd.read_csv(_path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        return Err(f"Invalid journal {_path}: {e!s}")
    if list(df.columns) != JOURNAL_COLUMNS:
        return Err(f"Journal schema mismatch in {_path}")
    return Ok(
        [
            JournalRow(int(r.patch_idx), bool(r.accepted), r.yaw_deg, r.tx, r.ty, r.tz, r.overlap, r.rmse)
            for r in df.itertuples(index=False)
        ],
    )
