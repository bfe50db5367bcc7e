import os
import tempfile
import unittest
from pathlib import Path

import pytest
import yaml

from invcloud.util.config import (
    EFFECTIVE_CONFIG_NAME,
    RunConfig,
    load_config,
    parse_config,
    to_dict,
    write_effective_config,
)
from invcloud.util.dirs import ensure_output_dir, get_seed_override


class _EnvCase(unittest.TestCase):
    def setUp(self) -> None:
        self.original_seed = os.environ.get("IC_SEED")
        os.environ.pop("IC_SEED", None)
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self) -> None:
        if self.original_seed is not None:
            os.environ["IC_SEED"] = self.original_seed
        else:
            os.environ.pop("IC_SEED", None)
        self._tmp.cleanup()

    def _write(self, body: str) -> Path:
        path = self.dir / "config.yaml"
        path.write_text(body, encoding="utf-8")
        return path


class TestDefaults(_EnvCase):
    def test_no_file_gives_defaults(self) -> None:
        cfg = load_config(None).unwrap()
        assert cfg == RunConfig()
        assert cfg.sensor.width == 320
        assert cfg.sensor.ppmm == 10.0
        assert (cfg.grid.rows, cfg.grid.cols) == (19, 25)
        assert cfg.registration.overlap_gate == 0.35
        assert cfg.seed == 0

    def test_empty_file(self) -> None:
        assert load_config(self._write("")).unwrap() == RunConfig()


class TestParse(_EnvCase):
    def test_partial_sections(self) -> None:
        cfg = load_config(self._write("sensor:\n  ppmm: 12\ntrajectory:\n  kind: return_loop\n  steps: 5\nseed: 3\n")).unwrap()
        assert cfg.sensor.ppmm == 12.0
        assert isinstance(cfg.sensor.ppmm, float)
        assert cfg.sensor.width == 320
        assert cfg.trajectory.kind == "return_loop"
        assert cfg.trajectory.steps == 5
        assert cfg.seed == 3

    def test_placements_become_tuples(self) -> None:
        cfg = parse_config({"trajectory": {"placements": [[0, 0, 0], [7, 0.5, 4]]}}).unwrap()
        assert cfg.trajectory.placements == ((0.0, 0.0, 0.0), (7.0, 0.5, 4.0))

    def test_unknown_section(self) -> None:
        r = parse_config({"sensors": {}})
        assert r.is_err()
        assert "sensors" in r.unwrap_err()

    def test_unknown_key(self) -> None:
        r = parse_config({"contact": {"depth": 0.3}})
        assert r.is_err()
        assert "depth" in r.unwrap_err()

    def test_wrong_type(self) -> None:
        assert parse_config({"grid": {"rows": 2.5}}).is_err()
        assert parse_config({"trajectory": {"slip": "yes"}}).is_err()
        assert parse_config({"seed": "1"}).is_err()

    def test_out_of_range(self) -> None:
        assert parse_config({"registration": {"overlap_gate": 1.5}}).is_err()
        assert parse_config({"noise": {"mask_flip_prob": -0.1}}).is_err()
        assert parse_config({"pose": {"anisotropy_threshold": 0.9}}).is_err()
        assert parse_config({"grid": {"rows": 5}}).is_err()
        assert parse_config({"object": {"indent_mm": 0}}).is_err()

    def test_morphology_switches(self) -> None:
        cfg = parse_config({"contact": {"despeckle_kernel_px": 0, "min_component_px": 0}}).unwrap()
        assert cfg.contact.despeckle_kernel_px == 0
        assert cfg.contact.min_component_px == 0
        assert RunConfig().contact.despeckle_kernel_px == 3
        assert parse_config({"contact": {"despeckle_kernel_px": -1}}).is_err()

    def test_shared_id_gate_switch(self) -> None:
        assert RunConfig().registration.require_shared_ids
        cfg = parse_config({"registration": {"require_shared_ids": False}}).unwrap()
        assert not cfg.registration.require_shared_ids
        assert parse_config({"registration": {"require_shared_ids": "no"}}).is_err()

    def test_root_must_be_mapping(self) -> None:
        assert load_config(self._write("- 1\n- 2\n")).is_err()

    def test_invalid_yaml(self) -> None:
        assert load_config(self._write("sensor: [1, 2\n")).is_err()

    def test_missing_file(self) -> None:
        assert "not found" in load_config(self.dir / "nope.yaml").unwrap_err()


class TestSeedOverride(_EnvCase):
    def test_env_beats_file(self) -> None:
        os.environ["IC_SEED"] = "42"
        cfg = load_config(self._write("seed: 3\n")).unwrap()
        assert cfg.seed == 42

    def test_non_integer_env_ignored(self) -> None:
        os.environ["IC_SEED"] = "abc"
        assert get_seed_override() is None
        assert load_config(None).unwrap().seed == 0

    def test_with_overrides(self) -> None:
        cfg = RunConfig().with_overrides(grid={"rows": 31, "cols": None}, seed=5).unwrap()
        assert cfg.grid.rows == 31
        assert cfg.grid.cols == 25
        assert cfg.seed == 5
        assert RunConfig().with_overrides(grid={"rows": 3}).is_err()


class TestEffectiveConfig(_EnvCase):
    def test_round_trip(self) -> None:
        cfg = parse_config({"noise": {"point_jitter_mm": 0.05}, "seed": 9}).unwrap()
        path = write_effective_config(cfg, self.dir)
        assert path.name == EFFECTIVE_CONFIG_NAME
        with path.open(encoding="utf-8") as f:
            raw = yaml.safe_load(f)
        assert raw == to_dict(cfg)
        assert parse_config(raw).unwrap() == cfg


class TestOutputDir(_EnvCase):
    def test_creates_nested(self) -> None:
        out = ensure_output_dir(self.dir / "a" / "b")
        assert out.is_dir()

    def test_file_in_the_way(self) -> None:
        blocker = self.dir / "file"
        blocker.write_text("", encoding="utf-8")
        with pytest.raises(NotADirectoryError):
            ensure_output_dir(blocker)
