"""Tests for model configs, presets and run settings."""

import pytest

from src.bench.presets import (
    CLUSTER_SCALE,
    get_preset,
    list_presets,
    parse_overrides,
    resolve_config,
)
from src.core.config import CommVariant, ScalingMode, load_settings
from src.core.errors import ConfigError
from src.model.config import build_config, load_config_file


def test_every_preset_validates():
    names = list_presets()
    for required in ("small", "large", "mlperf", "mini-small", "mini-large",
                     "mini-mlperf", "tiny"):
        assert required in names
    for name in names:
        assert get_preset(name).name == name
    assert set(CLUSTER_SCALE) <= set(names)


def test_published_topologies():
    large = get_preset("large")
    assert (large.S, large.E, large.M, large.P) == (64, 256, 6_000_000, 100)
    assert large.bottom_mlp == [2048] * 8 + [256]
    assert large.top_mlp == [4096] * 15 + [1]
    mlperf = get_preset("mlperf")
    assert mlperf.top_sizes == [479, 512, 512, 256, 1]


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown config"):
        get_preset("huge")


def test_overrides_are_coerced(tiny_config):
    patched = tiny_config.with_overrides({"M": "32", "bottom_mlp": "3-8-4", "P": 5})
    assert patched.M == 32
    assert patched.bottom_mlp == [3, 8, 4]
    assert patched.P == 5
    assert tiny_config.M == 8


def test_bad_overrides(tiny_config):
    with pytest.raises(ConfigError, match="unknown config key"):
        tiny_config.with_overrides({"Q": "1"})
    with pytest.raises(ConfigError):
        tiny_config.with_overrides({"E": "6"})
    with pytest.raises(ConfigError):
        tiny_config.with_overrides({"M": "0"})


def test_shape_rules():
    base = dict(N=2, GN=2, LN=2, P=1, S=1, E=2, M=4, bottom_mlp=[3, 2], top_mlp=[1])
    assert build_config(base).top_sizes == [3, 1]
    with pytest.raises(ConfigError):
        build_config({**base, "bottom_mlp": [3, 5]})
    with pytest.raises(ConfigError):
        build_config({**base, "top_mlp": [4, 2]})


def test_yaml_config_file(tmp_path):
    path = tmp_path / "mine.yaml"
    path.write_text(
        "N: 8\nGN: 8\nLN: 4\nP: 2\nS: 3\nE: 4\nM: 100\n"
        "bottom_mlp: [5, 4]\ntop_mlp: 6-1\n",
        encoding="utf-8",
    )
    config = resolve_config(str(path), {"M": "50"})
    assert config.name == "mine"
    assert config.top_mlp == [6, 1]
    assert config.M == 50
    assert load_config_file(path).M == 100


def test_unreadable_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "missing.yaml")
    bad = tmp_path / "list.yaml"
    bad.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_file(bad)


def test_parse_overrides():
    assert parse_overrides(["M=10", " E = 4 "]) == {"M": "10", "E": "4"}
    assert parse_overrides(None) == {}
    with pytest.raises(ConfigError):
        parse_overrides(["M10"])
    with pytest.raises(ConfigError):
        parse_overrides(["=3"])


def test_settings_from_environment(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("DLRM_RANKS", "3")
    monkeypatch.setenv("DLRM_COMM_VARIANT", "fused")
    monkeypatch.setenv("DLRM_SCALING", "weak")
    settings = load_settings()
    assert settings.ranks == 3
    assert settings.comm_variant is CommVariant.FUSED_SCATTER
    assert settings.scaling is ScalingMode.WEAK
    assert settings.rendezvous_address() == ("127.0.0.1", 29500)


def test_settings_from_env_file(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    env = tmp_path / "run.env"
    env.write_text("DLRM_ITERS=7\nDLRM_LOG_LEVEL=debug\n", encoding="utf-8")
    settings = load_settings(str(env))
    assert settings.iters == 7
    assert settings.log_level == "DEBUG"


@pytest.mark.parametrize("overrides", [
    {"warmup": 5, "iters": 5},
    {"log_level": "chatty"},
    {"rendezvous": "nohost"},
    {"ranks": 0},
])
def test_invalid_settings(monkeypatch, tmp_path, overrides):
    from pydantic import ValidationError

    monkeypatch.chdir(tmp_path)
    with pytest.raises(ValidationError):
        load_settings(**overrides)
