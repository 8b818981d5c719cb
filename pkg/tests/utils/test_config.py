from pathlib import Path

import pytest

from src.utils.config import RunConfig, get_value, load_config, parse_override, read_config_file
from src.utils.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


# ── overrides ────────────────────────────────────────────────────────────────


@pytest.mark.parametrize("text, expected", [
    ("pretrain.total_steps=40", ("pretrain", "total_steps", 40)),
    ("finetune.learning_rates=[1e-3, 1e-2]", ("finetune", "learning_rates", [1e-3, 1e-2])),
    ("model.variant=dense", ("model", "variant", "dense")),
    ('model.variant="vgg"', ("model", "variant", "vgg")),
    ("run.allow_any_horizon=true", ("run", "allow_any_horizon", True)),
])
def test_parse_override(text, expected):
    assert parse_override(text) == expected


@pytest.mark.parametrize("text", ["pretrain.total_steps", "total_steps=3", "a.b.c=1"])
def test_malformed_override(text):
    with pytest.raises(ConfigError):
        parse_override(text)


# ── loading ──────────────────────────────────────────────────────────────────


def test_defaults_match_default_file():
    assert load_config(CONFIGS / "default.toml").to_dict() == RunConfig().to_dict()


def test_precedence_file_then_set_then_flags():
    config = load_config(
        CONFIGS / "quick.toml",
        overrides=["pretrain.total_steps=40", "run.seed=1", "run.jobs=2"],
        seed=3,
        jobs=4,
    )
    assert config.pretrain.total_steps == 40
    assert config.pretrain.validate_every == 20
    assert config.synth.n_patients == 18
    assert config.pretrain.learning_rate == 1e-3
    assert (config.run.seed, config.synth.seed, config.pretrain.seed, config.finetune.seed) == (3, 3, 3, 3)
    assert config.run.jobs == 4


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="colour"):
        load_config(overrides=["model.colour=3"])


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        load_config(overrides=["training.steps=3"])


def test_mismatched_image_sizes_rejected():
    with pytest.raises(ConfigError, match="out_size"):
        load_config(overrides=["preprocess.out_size=[64, 64]"])


def test_missing_or_broken_file(tmp_path):
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "absent.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("[run\nseed = 1\n")
    with pytest.raises(ConfigError):
        load_config(broken)


def test_snapshot_loads_back_unchanged(tmp_path):
    config = load_config(CONFIGS / "quick.toml", overrides=["model.variant=dense"], seed=7)
    path = config.write_snapshot(tmp_path)
    again = load_config(path)
    assert again.to_dict() == config.to_dict()
    assert again.fingerprint() == config.fingerprint()


def test_fingerprint_tracks_values():
    assert load_config(seed=1).fingerprint() != load_config(seed=2).fingerprint()
    assert load_config(seed=1).fingerprint() == load_config(seed=1).fingerprint()


def test_get_value():
    config = load_config(CONFIGS / "quick.toml")
    assert get_value(config, "pretrain.total_steps") == 60
    assert get_value(config, "model.block_channels") == [4, 8, 8]
    assert get_value(config, "model.missing", "fallback") == "fallback"
    assert get_value({"a": {"b": 1}}, "a.b.c") is None
