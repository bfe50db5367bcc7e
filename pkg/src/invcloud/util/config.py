"""YAML の実行設定 / シナリオ定義。

既定値 < 設定ファイル < CLI 引数 < IC_SEED の順に上書きされる。未知のキーや範囲外の値は Err。
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Literal

import yaml
from pyresults import Err, Ok, Result

from invcloud.core.pose import TrackerConfig
from invcloud.core.registration import RegistrationConfig
from invcloud.util.dirs import get_seed_override

EFFECTIVE_CONFIG_NAME = "config.effective.yaml"


@dataclass(frozen=True)
class SensorConfig:
    width: int = 320
    height: int = 240
    ppmm: float = 10.0
    fps: float = 25.0
    marker_rows: int = 7
    marker_cols: int = 9
    marker_radius_px: float = 3.0


@dataclass(frozen=True)
class GridConfig:
    rows: int = 19
    cols: int = 25


@dataclass(frozen=True)
class ContactConfig:
    depth_threshold_mm: float = 0.2
    kernel_px: int = 5
    despeckle_kernel_px: int = 3  # 0 でオープニングを行わない
    close_kernel_px: int = 7
    close_iters: int = 2
    border_margin_px: int = 2
    min_component_px: int = 16  # 0 で小成分の除去を行わない
    centroid_mode: Literal["contour", "moments"] = "contour"


@dataclass(frozen=True)
class PoseConfig:
    anisotropy_threshold: float = 1.15
    min_correspondences: int = 3


@dataclass(frozen=True)
class MetricsConfig:
    return_gate: float = 0.95


@dataclass(frozen=True)
class NoiseConfig:
    height_sigma_mm: float = 0.02
    mask_flip_prob: float = 0.002
    point_jitter_mm: float = 0.0


@dataclass(frozen=True)
class ObjectConfig:
    shape: Literal["sphere", "ellipsoid", "box_corner", "extruded_outline"] = "ellipsoid"
    dims: tuple[float, ...] = (12.0, 6.0, 6.0)
    indent_mm: float = 1.5
    outline: str = "scissors"


@dataclass(frozen=True)
class TrajectoryConfig:
    kind: Literal["static", "single_axis", "return_loop", "multi_contact"] = "static"
    n_frames: int = 1500
    dof: Literal["tx", "ty", "tz", "rx", "ry", "rz"] = "rz"
    rate: float = -1.0
    amplitude: float = 20.0
    steps: int = 20
    slip: bool = False
    placements: tuple[tuple[float, float, float], ...] = ()


@dataclass(frozen=True)
class RunConfig:
    sensor: SensorConfig = field(default_factory=SensorConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    contact: ContactConfig = field(default_factory=ContactConfig)
    pose: PoseConfig = field(default_factory=PoseConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    object: ObjectConfig = field(default_factory=ObjectConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    seed: int = 0

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(
            anisotropy_threshold=self.pose.anisotropy_threshold,
            min_correspondences=self.pose.min_correspondences,
            close_kernel_px=self.contact.close_kernel_px,
            close_iters=self.contact.close_iters,
            centroid_mode=self.contact.centroid_mode,
        )

    def with_overrides(self, **sections: dict[str, Any]) -> Result[RunConfig, str]:
        """`section={key: value}` 形式で一部を上書きした設定を返す。None の値は無視する。"""
        raw = to_dict(self)
        for name, values in sections.items():
            if name == "seed":
                if values is not None:
                    raw["seed"] = values
                continue
            for k, v in values.items():
                if v is not None:
                    raw.setdefault(name, {})[k] = v
        return parse_config(raw)


_SECTIONS: dict[str, type] = {
    "sensor": SensorConfig,
    "grid": GridConfig,
    "contact": ContactConfig,
    "pose": PoseConfig,
    "registration": RegistrationConfig,
    "metrics": MetricsConfig,
    "noise": NoiseConfig,
    "object": ObjectConfig,
    "trajectory": TrajectoryConfig,
}


def _coerce(value: Any, default: Any) -> Any:  # noqa: ANN401
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or int(value) != value:
            raise TypeError
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool):
            raise TypeError
        return float(value)
    if isinstance(default, tuple):
        return tuple(tuple(float(x) for x in v) if isinstance(v, list | tuple) else float(v) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError
        return value
    return value


def _parse_section(name: str, cls: type, raw: Any) -> Result[Any, str]:  # noqa: ANN401
    if raw is None:
        return Ok(cls())
    if not isinstance(raw, dict):
        return Err(f"Section '{name}' must be a mapping")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        return Err(f"Unknown key(s) in '{name}': {', '.join(map(str, unknown))}")
    values: dict[str, Any] = {}
    for key, value in raw.items():
        try:
            values[key] = _coerce(value, getattr(defaults, key))
        except (TypeError, ValueError):
            return Err(f"Invalid value for '{name}.{key}': {value!r}")
    return Ok(dataclasses.replace(defaults, **values))


def _validate(cfg: RunConfig) -> Result[RunConfig, str]:  # noqa: C901, PLR0911
    s = cfg.sensor
    if s.width < 2 or s.height < 2 or not s.ppmm > 0 or not s.fps > 0:  # noqa: PLR2004
        return Err("sensor: width/height must be >= 2 and ppmm/fps positive")
    if s.marker_rows < 2 or s.marker_cols < 2 or not s.marker_radius_px > 0:  # noqa: PLR2004
        return Err("sensor: marker grid must be at least 2x2 with a positive radius")
    if cfg.grid.rows < s.marker_rows or cfg.grid.cols < s.marker_cols:
        return Err("grid: target grid must not decimate the marker grid")
    c = cfg.contact
    if not c.depth_threshold_mm > 0 or c.kernel_px < 1 or c.close_kernel_px < 1 or c.close_iters < 1:
        return Err("contact: threshold must be positive and kernels/iterations >= 1")
    if c.border_margin_px < 0 or c.min_component_px < 0 or c.centroid_mode not in ("contour", "moments"):
        return Err("contact: invalid border margin, component size or centroid mode")
    if c.despeckle_kernel_px < 0:
        return Err("contact: despeckle_kernel_px must be >= 0")
    if not cfg.pose.anisotropy_threshold >= 1.0 or cfg.pose.min_correspondences < 3:  # noqa: PLR2004
        return Err("pose: anisotropy_threshold must be >= 1 and min_correspondences >= 3")
    r = cfg.registration
    if not (0.0 <= r.overlap_gate <= 1.0) or not r.rmse_gate_mm > 0 or not r.nn_gate_mm > 0:
        return Err("registration: overlap_gate must be in [0, 1] and gates positive")
    if r.max_iters < 1 or not r.tol_mm > 0:
        return Err("registration: max_iters >= 1 and tol_mm > 0 required")
    if not (0.0 < cfg.metrics.return_gate <= 1.0):
        return Err("metrics: return_gate must be in (0, 1]")
    n = cfg.noise
    if n.height_sigma_mm < 0 or n.point_jitter_mm < 0 or not (0.0 <= n.mask_flip_prob <= 1.0):
        return Err("noise: sigmas must be >= 0 and mask_flip_prob in [0, 1]")
    if not cfg.object.indent_mm > 0:
        return Err("object: indent_mm must be positive")
    if cfg.trajectory.n_frames < 1 or cfg.trajectory.steps < 1:
        return Err("trajectory: n_frames and steps must be positive")
    if cfg.seed < 0:
        return Err("seed must be non-negative")
    return Ok(cfg)


def parse_config(raw: Any) -> Result[RunConfig, str]:  # noqa: ANN401
    """dict (YAML の読み込み結果) から RunConfig を作る。"""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        return Err("Config root must be a mapping")
    unknown = sorted(set(raw) - set(_SECTIONS) - {"seed"})
    if unknown:
        return Err(f"Unknown config section(s): {', '.join(map(str, unknown))}")
    sections: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        match _parse_section(name, cls, raw.get(name)):
            case Ok(value):
                sections[name] = value
            case Err(e):
                return Err(e)
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        return Err(f"Invalid seed: {seed!r}")
    return _validate(RunConfig(**sections, seed=seed))


def load_config(path: str | Path | None) -> Result[RunConfig, str]:
    """YAML ファイルを読み、IC_SEED による上書きを適用する。`path` が None なら既定値。"""
    raw: Any = {}
    if path is not None:
        _path = Path(path)
        if not _path.exists():
            return Err(f"Config file not found: {_path}")
        try:
            with _path.open(encoding="utf-8") as f:
                raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            return Err(f"Invalid YAML: {e!s}")
    parsed = parse_config(raw)
    if parsed.is_err():
        return parsed
    cfg = parsed.unwrap()
    seed = get_seed_override()
    return Ok(dataclasses.replace(cfg, seed=seed) if seed is not None else cfg)


def to_dict(cfg: RunConfig) -> dict[str, Any]:
    def plain(v: Any) -> Any:  # noqa: ANN401
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    out: dict[str, Any] = {}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        out[name] = {f.name: plain(getattr(section, f.name)) for f in fields(section)}
    out["seed"] = cfg.seed
    return out


def write_effective_config(cfg: RunConfig, out_dir: str | Path) -> Path:
    path = Path(out_dir) / EFFECTIVE_CONFIG_NAME
    with path.open("w", encoding="utf-8") as f:
        yaml.safe_dump(to_dict(cfg), f, allow_unicode=True, sort_keys=True)
    return path
