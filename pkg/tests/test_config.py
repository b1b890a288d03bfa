"""Tests for the flat key=value configuration."""

import pytest

from symnav.config import Config, ConfigError


class TestConfig:
    def test_defaults_load(self):
        cfg = Config()
        assert cfg["env.M"] == 128
        assert cfg["train.gamma"] == 0.99

    def test_typed_coercion(self):
        cfg = Config()
        cfg.set("env.M", "64")
        assert cfg["env.M"] == 64 and isinstance(cfg["env.M"], int)
        cfg.set("train.gamma", "0.5")
        assert cfg["train.gamma"] == 0.5

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            Config({"nope.key": 1})
        with pytest.raises(ConfigError):
            Config()["nope.key"]

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            Config().set("env.M", "twelve")

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nenv.M = 64\ntrain.gamma=0.9  # inline\n\n")
        cfg = Config()
        cfg.update_from_file(path)
        assert cfg["env.M"] == 64
        assert cfg["train.gamma"] == 0.9

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("env.M 64\n")
        with pytest.raises(ConfigError):
            Config().update_from_file(path)

    def test_widths_parsing(self):
        cfg = Config({"net.widths": "2,4,6,8,10"})
        assert cfg.widths() == (2, 4, 6, 8, 10)
        with pytest.raises(ConfigError):
            Config({"net.widths": "1,2"}).widths()

    def test_net_hash_tracks_net_keys_only(self):
        a, b = Config(), Config()
        b.set("train.gamma", 0.5)
        assert a.net_hash() == b.net_hash()
        b.set("net.kernel", 5)
        assert a.net_hash() != b.net_hash()
