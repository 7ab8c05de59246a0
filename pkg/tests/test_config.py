import pytest

from cdrlr.config import ConfigError, build_config, dump_flat_config, parse_flat_config
from cdrlr.evaluation import ExperimentConfig
from cdrlr.population_sim import SimConfig
from cdrlr.synthesis import SynthesisConfig


def test_parse_comments_and_blanks():
    assert parse_flat_config("# c\n\na = 1\n b=two words \n") == {"a": "1", "b": "two words"}


@pytest.mark.parametrize("text", ["novalue\n", "= 3\n", "a = 1\na = 2\n"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_flat_config(text)


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="n_userz"):
        build_config(SimConfig, {"n_userz": "3"})


def test_types_and_overrides():
    cfg = build_config(ExperimentConfig, {"features": "distance, dt", "group_by_user": "yes",
                                          "kde_bandwidth": "0.1", "seed": "4"}, seed=9)
    assert cfg.features == ("distance", "dt")
    assert cfg.group_by_user is True
    assert cfg.kde_bandwidth == 0.1
    assert cfg.seed == 9


def test_invalid_values():
    with pytest.raises(ConfigError):
        build_config(SimConfig, {"n_users": "many"})
    with pytest.raises(ConfigError):
        build_config(SimConfig, {"n_users": "0"})


@pytest.mark.parametrize("cfg", [SimConfig(n_users=3), SynthesisConfig(rate=0.5, days_per_track=2),
                                 ExperimentConfig(features=("dt", "bearing"))])
def test_dump_round_trip(cfg):
    assert build_config(type(cfg), parse_flat_config(dump_flat_config(cfg))) == cfg
