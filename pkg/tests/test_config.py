import pytest

from tokencall.config import (
    Config,
    ConfigError,
    DataConstructConfig,
    LossConfig,
    RewardConfig,
    ServiceConfig,
    config_to_json,
    load_config,
    parse_config,
    render_config,
)


def _sample_config():
    return Config(
        registry_path="",
        dataset_paths={},
        reward=RewardConfig(epsilon=0.3, group_size=16, multi_step_scoring="per_step"),
        dataconstruct=DataConstructConfig(k=12, retrieved_count=4, seed=99),
        losses=LossConfig(alpha=0.5, beta=2.0),
        service=ServiceConfig(bind_address="0.0.0.0:9000", max_concurrent=128),
    )


def test_ini_round_trip():
    config = _sample_config()
    assert parse_config(render_config(config)) == config


def test_json_accepted():
    import json

    config = _sample_config()
    parsed = parse_config(json.dumps(config_to_json(config)))
    assert parsed == config


def test_defaults():
    config = parse_config("")
    assert config.reward.epsilon == 0.2
    assert config.reward.group_size == 8
    assert config.dataconstruct.k == 10
    assert config.dataconstruct.retrieved_count == 5
    assert config.losses.alpha == 1.0 and config.losses.beta == 1.0


def test_validation_rejects_bad_values():
    config = _sample_config()
    config.reward.group_size = 1
    with pytest.raises(ConfigError):
        config.validate(check_paths=False)


def test_validation_rejects_bad_scope():
    config = _sample_config()
    config.reward.multi_step_scoring = "sometimes"
    with pytest.raises(ConfigError):
        config.validate(check_paths=False)


def test_missing_paths_rejected(tmp_path):
    config = _sample_config()
    config.registry_path = str(tmp_path / "absent.json")
    with pytest.raises(ConfigError):
        config.validate()


def test_load_config_file(tmp_path):
    config = _sample_config()
    path = tmp_path / "h.cfg"
    path.write_text(render_config(config))
    assert load_config(path) == config


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[reward]\nepsilon = not_a_number\n")
    with pytest.raises(ConfigError):
        load_config(path)
