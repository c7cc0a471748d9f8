import pytest

from dgseg.config import (
    CONFIG_KEYS,
    build_experiment_config,
    describe_keys,
    parse_config_file,
    parse_config_text,
    parse_overrides,
)
from dgseg.errors import ConfigError


def test_parse_text_ignores_comments_and_blanks():
    text = """
    # full line comment
    train.epochs = 5

    train.lr=2e-3  # trailing comment
    """
    assert parse_config_text(text) == {"train.epochs": "5", "train.lr": "2e-3"}


def test_parse_text_rejects_unknown_key_with_location():
    with pytest.raises(ConfigError, match="<config>:2.*train.epoch"):
        parse_config_text("train.lr = 1e-3\ntrain.epoch = 5")


def test_parse_text_rejects_lines_without_assignment():
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_config_text("train.lr 1e-3")


def test_parse_file_missing(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config_file(tmp_path / "nope.cfg")
    cfg = tmp_path / "ok.cfg"
    cfg.write_text("data.k = 2\n")
    assert parse_config_file(cfg) == {"data.k": "2"}


def test_parse_overrides():
    assert parse_overrides(["train.b=4", "data.root = /tmp/x"]) == {
        "train.b": "4",
        "data.root": "/tmp/x",
    }
    with pytest.raises(ConfigError, match="key=value"):
        parse_overrides(["train.b"])
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_overrides(["train.batch=4"])


def test_build_defaults():
    config = build_experiment_config({})
    assert config.net.anatomy_channels == 8
    assert config.train.epochs == 200
    assert config.train.weights.lambda2 == 0.001
    assert config.data_root == "data" and config.out_dir == "runs"
    assert config.target_domain is None


def test_build_full_assignment():
    config = build_experiment_config(
        {
            "net.anatomy_channels": "4",
            "net.unet_channels": "4, 8",
            "net.gumbel_temperature": "0.7",
            "train.variant": "da",
            "train.crop": "32,32",
            "train.augment": "off",
            "loss.lambda2": "0.5",
            "loss.tau": "0.2",
            "data.root": "xyz",
            "data.size": "32,32",
            "out.dir": "o",
            "target_domain": "2",
        }
    )
    assert config.net.anatomy_channels == 4
    assert config.net.unet_channels == (4, 8)
    assert config.net.gumbel_temperature == 0.7
    assert config.train.variant == "da"
    assert config.train.crop == (32, 32)
    assert config.train.augment is False
    assert config.train.weights.lambda2 == 0.5
    assert config.train.weights.tau == 0.2
    assert config.data_root == "xyz"
    assert config.size == (32, 32)
    assert config.out_dir == "o"
    assert config.target_domain == 2


def test_build_reports_bad_values():
    with pytest.raises(ConfigError, match="train.epochs"):
        build_experiment_config({"train.epochs": "many"})
    with pytest.raises(ConfigError, match="two comma-separated ints"):
        build_experiment_config({"train.crop": "1,2,3"})
    with pytest.raises(ConfigError, match="boolean"):
        build_experiment_config({"train.flip": "maybe"})
    # nested dataclass invariants surface as config errors too
    with pytest.raises(ConfigError):
        build_experiment_config({"net.unet_channels": "8,4"})
    with pytest.raises(ConfigError):
        build_experiment_config({"data.mode": "bogus"})


def test_describe_keys_covers_everything():
    text = describe_keys()
    lines = text.splitlines()
    assert len(lines) == len(CONFIG_KEYS)
    for key, (_, desc) in CONFIG_KEYS.items():
        assert any(line.startswith(key) and desc in line for line in lines)
    assert lines == sorted(lines)
