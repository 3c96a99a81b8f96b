import pytest

from core.config import PipelineConfig, parse_key_values
from core.errors import ConfigError, SceneParseError
from stages.options import add_common_arguments, build_config

import argparse


def parse(argv):
    return add_common_arguments(argparse.ArgumentParser()).parse_args(argv)


def test_defaults_match_published_parameters():
    config = PipelineConfig()
    assert config.prior.tau_lambda == 0.5
    assert config.consistency.omega_geo == 5.0
    assert config.consistency.alpha_geo == 0.1
    assert (config.aggregation.P1, config.aggregation.P2) == (0.2, 0.66)
    assert all(config.toggles.values())


def test_penalty_order_enforced():
    with pytest.raises(ConfigError):
        PipelineConfig(aggregation={"P1": 0.7, "P2": 0.66})


def test_tau_lambda_range():
    with pytest.raises(ConfigError):
        PipelineConfig(prior={"tau_lambda": 0.3})


def test_unknown_key():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"prior": {"nope": 1}})


def test_key_value_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 7\nprior.tau_lambda = 0.6  # flatter\nenable_sp = false\n")
    config = PipelineConfig.from_file(path)
    assert config.seed == 7
    assert config.prior.tau_lambda == 0.6
    assert not config.enable_sp


def test_key_value_syntax_error():
    with pytest.raises(SceneParseError) as info:
        parse_key_values("seed = 1\nnot a pair\n")
    assert info.value.line_no == 2


def test_yaml_round_trip(tmp_path):
    config = PipelineConfig(seed=3, aggregation={"P1": 0.1})
    config.to_yaml(tmp_path / "c.yaml")
    assert PipelineConfig.from_yaml(tmp_path / "c.yaml") == config


def test_precedence_file_env_cli(tmp_path, monkeypatch):
    path = tmp_path / "c.cfg"
    path.write_text("seed = 1\nworkers = 2\nconsistency.tau_geo = 4\n")
    monkeypatch.setenv("MVS_SEED", "5")
    monkeypatch.setenv("MVS_WORKERS", "3")
    config = build_config(parse(["--config", str(path), "--seed", "9", "--no-gia", "--alpha-geo", "0.2"]))
    assert config.seed == 9
    assert config.workers == 3
    assert config.consistency.tau_geo == 4
    assert not config.enable_gia
    assert config.consistency.alpha_geo == config.aggregation.alpha_geo == 0.2
