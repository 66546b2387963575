import json

import pytest

from densify360.config import EngineConfig, load_config
from densify360.errors import ConfigError


class TestDefaults:
    def test_standard_operating_point(self):
        cfg = load_config()
        assert cfg.viewfilter.theta_min == 6.0
        assert cfg.viewfilter.theta_max == 60.0
        assert cfg.viewfilter.accept_fraction == 0.20
        assert cfg.patchmatch.iterations == 6
        assert cfg.consistency.window == 5
        assert cfg.consistency.min_support == 2
        assert cfg.fusion.buffer == 4

    def test_empty_file_equals_defaults(self, tmp_path):
        path = tmp_path / "empty.toml"
        path.write_text("")
        assert load_config(path) == load_config()


class TestFileLoading:
    def test_toml(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(
            "[viewfilter]\ntheta_min = 10.0\n\n[patchmatch]\niterations = 2\n"
        )
        cfg = load_config(path)
        assert cfg.viewfilter.theta_min == 10.0
        assert cfg.patchmatch.iterations == 2
        assert cfg.consistency.window == 5  # untouched default

    def test_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"fusion": {"buffer": 2}}))
        assert load_config(path).fusion.buffer == 2

    def test_unknown_suffix(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("a: 1")
        with pytest.raises(ConfigError, match=".yaml"):
            load_config(path)

    def test_parse_error_reported(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[viewfilter\ntheta_min = 1")
        with pytest.raises(ConfigError, match="TOML"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.toml")


class TestValidation:
    def test_unknown_section(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[nonsense]\nx = 1\n")
        with pytest.raises(ConfigError, match="nonsense"):
            load_config(path)

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[viewfilter]\ntheta_minimum = 5.0\n")
        with pytest.raises(ConfigError, match="viewfilter.theta_minimum"):
            load_config(path)

    def test_theta_violation_names_keys(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[viewfilter]\ntheta_min = 70.0\ntheta_max = 60.0\n")
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert "theta_min" in str(err.value)
        assert "theta_max" in str(err.value)

    def test_depth_range_violation(self):
        with pytest.raises(ConfigError, match="depth_min"):
            load_config(overrides={"patchmatch.depth_min": 9.0,
                                   "patchmatch.depth_max": 4.0})

    def test_zero_iterations(self):
        with pytest.raises(ConfigError, match="iterations"):
            load_config(overrides={"patchmatch.iterations": 0})

    def test_bad_resolution(self):
        with pytest.raises(ConfigError, match="resolution"):
            load_config(overrides={"processing.resolution": (100, 70)})

    def test_bad_min_support(self):
        with pytest.raises(ConfigError, match="min_support"):
            load_config(overrides={"consistency.min_support": 0})


class TestOverrides:
    def test_override_beats_file(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[patchmatch]\nseed = 5\n")
        cfg = load_config(path, overrides={"patchmatch.seed": 9})
        assert cfg.patchmatch.seed == 9

    def test_no_warp_override(self):
        cfg = load_config(overrides={"patchmatch.warp": False})
        assert cfg.patchmatch.warp is False
        assert cfg.to_dict()["patchmatch"]["warp"] is False

    def test_unknown_override(self):
        with pytest.raises(ConfigError, match="bogus"):
            load_config(overrides={"patchmatch.bogus": 1})


class TestEcho:
    def test_load_echo_load_round_trip(self, tmp_path):
        cfg = load_config(overrides={
            "patchmatch.seed": 7,
            "patchmatch.warp": False,
            "processing.resolution": (128, 64),
            "viewfilter.accept_fraction": 0.5,
        })
        echo = tmp_path / "echo.json"
        echo.write_text(json.dumps(cfg.to_dict()))
        again = load_config(echo)
        assert again == cfg
        assert again.to_dict() == cfg.to_dict()

    def test_default_round_trip(self, tmp_path):
        cfg = EngineConfig()
        echo = tmp_path / "echo.json"
        echo.write_text(json.dumps(cfg.to_dict()))
        assert load_config(echo) == cfg
