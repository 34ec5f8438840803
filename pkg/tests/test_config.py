import pytest

from mate.config import ConfigError, RunConfig, load_config, parse_config


def test_roundtrip_defaults():
    run = RunConfig()
    back = parse_config(run.to_ini())
    for section in ("charged", "socialnav", "encoder", "decoder", "train"):
        assert getattr(back, section) == getattr(run, section)


def test_values_and_explicit_keys():
    run = parse_config("[train]\nlambda1 = 0.5\nmax_epochs = 3\n[socialnav]\nn_agents = 7\n")
    assert run.train.lambda1 == 0.5 and run.train.max_epochs == 3
    assert run.socialnav.n_agents == 7
    assert run.is_set("train", "lambda1") and not run.is_set("train", "lr")


def test_override_beats_file():
    run = parse_config("[train]\nlambda2 = 0.5\n").override("train", lambda2=0.001, lr=None)
    assert run.train.lambda2 == 0.001 and run.train.lr == RunConfig().train.lr


@pytest.mark.parametrize("text", [
    "[nonsense]\na = 1\n",
    "[train]\nlearning_rate = 1\n",
    "[train]\nmax_epochs = many\n",
    "[train]\nlambda1 = -1\n",
    "not an ini file",
])
def test_rejections(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_unknown_override_key():
    with pytest.raises(ConfigError):
        RunConfig().override("train", momentum=0.9)


def test_load_missing(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")
    assert load_config(None) == RunConfig()
