"""評価結果の CSV / Markdown 表と SVG グラフ。"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from pathlib import Path

import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from invcloud.core.metrics import AccuracyReport, DriftReport, RepeatabilityReport  # noqa: E402

DOF_COLUMNS = ["tx_mm", "ty_mm", "tz_mm", "rx_deg", "ry_deg", "rz_deg"]


def drift_frame(reports: Mapping[str, DriftReport]) -> pd.DataFrame:
    """手法ごとの MAE (主列) と最終フレーム誤差・測地誤差 (補助列)。"""
    records = []
    for method, r in reports.items():
        row: dict[str, object] = {"method": method, **dict(zip(DOF_COLUMNS, r.as_tuple(), strict=True))}
        row.update({f"final_{c}": v for c, v in zip(DOF_COLUMNS, r.final, strict=True)})
        row["geodesic_deg"] = r.geodesic_deg
        row["n_sequences"] = r.n_sequences
        records.append(row)
    return pd.DataFrame(records)


def repeat_frame(reports: Mapping[str, RepeatabilityReport]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"method": m, **dict(zip(DOF_COLUMNS, r.as_tuple(), strict=True)), "trials": r.trials}
            for m, r in reports.items()
        ],
    )


def accuracy_frame(reports: Mapping[str, AccuracyReport]) -> pd.DataFrame:
    records = []
    for method, r in reports.items():
        row: dict[str, object] = {"method": method, "n_frames": len(r.frames)}
        row.update({f"rms_{c}": v for c, v in zip(DOF_COLUMNS, r.rms, strict=True)})
        row.update({f"max_{c}": v for c, v in zip(DOF_COLUMNS, r.max_abs, strict=True)})
        records.append(row)
    return pd.DataFrame(records)


def accuracy_series(reports: Mapping[str, AccuracyReport]) -> pd.DataFrame:
    """縦持ちのフレーム別誤差 (method, frame, 各 DoF)。"""
    parts = [
        pd.DataFrame({"method": method, "frame": r.frames, **{c: r.errors[:, k] for k, c in enumerate(DOF_COLUMNS)}})
        for method, r in reports.items()
    ]
    if not parts:
        return pd.DataFrame(columns=["method", "frame", *DOF_COLUMNS])
    return pd.concat(parts, ignore_index=True)


def to_markdown(df: pd.DataFrame, title: str | None = None) -> str:
    def cell(v: object) -> str:
        if isinstance(v, float | np.floating):
            return f"{float(v):.4f}"
        return str(v)

    lines = [f"## {title}", ""] if title else []
    lines.append("| " + " | ".join(map(str, df.columns)) + " |")
    lines.append("|" + "|".join("---" for _ in df.columns) + "|")
    lines.extend("| " + " | ".join(cell(v) for v in row) + " |" for row in df.itertuples(index=False))
    return "\n".join(lines) + "\n"


def write_table(df: pd.DataFrame, out_dir: str | Path, stem: str, title: str | None = None) -> tuple[Path, Path]:
    out = Path(out_dir)
    csv_path = out / f"{stem}.csv"
    md_path = out / f"{stem}.md"
    df.to_csv(csv_path, index=False, float_format="%.9g")
    md_path.write_text(to_markdown(df, title), encoding="utf-8")
    return csv_path, md_path


def _savefig(fig: plt.Figure, path: str | Path) -> Path:
    _path = Path(path)
    fig.savefig(_path, format="svg", bbox_inches="tight")
    plt.close(fig)
    return _path


def plot_dof_bars(df: pd.DataFrame, path: str | Path, ylabel: str = "error") -> Path:
    """DoF ごとの手法別棒グラフ。"""
    fig, ax = plt.subplots(figsize=(8, 4))
    x = np.arange(len(DOF_COLUMNS))
    width = 0.8 / max(len(df), 1)
    for k, row in enumerate(df.itertuples(index=False)):
        values = [getattr(row, c) for c in DOF_COLUMNS]
        ax.bar(x + k * width, values, width, label=str(row.method))
    ax.set_xticks(x + width * (len(df) - 1) / 2, DOF_COLUMNS)
    ax.set_ylabel(ylabel)
    ax.legend()
    return _savefig(fig, path)


def plot_error_series(
    series: Mapping[str, tuple[Sequence[int], Sequence[float]]],
    path: str | Path,
    ylabel: str = "rz error [deg]",
) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4))
    for label, (frames, values) in series.items():
        ax.plot(frames, values, label=label, linewidth=1.0)
    ax.set_xlabel("frame")
    ax.set_ylabel(ylabel)
    ax.grid(visible=True, alpha=0.3)
    ax.legend()
    return _savefig(fig, path)
