"""
Tests for experiment settings, the key-value grammar and command-line overrides
"""

from pathlib import Path

import pytest

import experiment_config as ec
from lab_errors import ConfigError
from training_engine import TrainMethod

DEFAULT_CONF = Path(__file__).parent / "config" / "default_experiment.conf"


def test_defaults():
    config = ec.ExperimentConfig()
    assert config.dataset.sizes == (1050, 400, 450)
    assert config.run.methods == list(ec.DEFAULT_METHODS)
    assert config.run.seeds == [42, 43, 44, 45, 46]
    assert config.posthoc.methods == ["temperature", "platt", "isotonic"]
    assert config.metrics.n_bins == 15
    assert config.sweep.alphas == [0.0, 0.1, 0.5, 1.0]
    assert config.dataset.keep_probs == (1.0, 0.9, 0.75, 0.5)
    assert config.train.beta == 1.0


def test_parse_value():
    assert ec.parse_value("12") == 12
    assert ec.parse_value("0.5") == 0.5
    assert ec.parse_value("True") is True
    assert ec.parse_value("none") is None
    assert ec.parse_value("two_moons") == "two_moons"
    assert ec.parse_value("1, 2, 3") == [1, 2, 3]
    assert ec.parse_value("42,") == [42]


def test_parse_lines_builds_nested_tree():
    tree = ec.parse_lines("# header\ntrain.epochs = 5  # inline\n\noverride.neg_reward.nr.alpha = 0.5\n")
    assert tree == {"train": {"epochs": 5}, "override": {"neg_reward": {"nr": {"alpha": 0.5}}}}


@pytest.mark.parametrize("text", ["epochs = 5", "train.epochs", "bogus.key = 1", "train..x = 1"])
def test_parse_lines_rejects_malformed(text):
    with pytest.raises(ConfigError):
        ec.parse_lines(text)


def test_parse_lines_reports_line_number():
    with pytest.raises(ConfigError, match=":3:"):
        ec.parse_lines("train.epochs = 1\n\nnot a pair\n", source="exp.conf")


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "exp.conf"
    path.write_text("train.epochs = 5\nrun.seeds = 1, 2\n")
    config = ec.load_config(path, ["--train.epochs=7", "--metrics.n_bins=10"])
    assert config.train.epochs == 7
    assert config.run.seeds == [1, 2]
    assert config.metrics.n_bins == 10


def test_override_syntax():
    with pytest.raises(ConfigError):
        ec.parse_overrides(["--train.epochs"])


def test_nr_section_lands_in_train_settings():
    config = ec.build_config({"nr": {"alpha": 0.3}, "train": {"lambda": 0.5}})
    assert config.train.nr.alpha == 0.3
    assert config.train.lam == 0.5


def test_validation_errors_become_config_errors():
    with pytest.raises(ConfigError):
        ec.build_config({"run": {"methods": ["baseline", "magic"]}})
    with pytest.raises(ConfigError):
        ec.build_config({"run": {"seeds": []}})
    with pytest.raises(ConfigError):
        ec.build_config({"posthoc": {"methods": ["histogram"]}})
    with pytest.raises(ConfigError):
        ec.build_config({"dataset": {"kind": "csv"}})
    with pytest.raises(ConfigError):
        ec.build_config({"train": {"epochs": 0}})
    with pytest.raises(ConfigError):
        ec.build_config({"override": {"magic": {"epochs": 3}}})


def test_single_values_become_lists():
    config = ec.build_config({"run": {"methods": "baseline", "seeds": 7}, "posthoc": {"methods": ""}})
    assert config.run.methods == ["baseline"]
    assert config.run.seeds == [7]
    assert config.posthoc.methods == []


def test_method_overrides():
    config = ec.build_config({"train": {"epochs": 9}, "override": {"neg_reward": {"epochs": 3, "nr": {"alpha": 0.1}}}})
    nr = config.train_config("neg_reward", seed=5)
    assert (nr.method, nr.epochs, nr.seed, nr.nr.alpha, nr.nr.lambda2) == (TrainMethod.NEG_REWARD, 3, 5, 0.1, 2.0)
    assert config.train_config("baseline", seed=5).epochs == 9
    bad = ec.build_config({"override": {"baseline": {"epochs": -1}}})
    with pytest.raises(ConfigError):
        bad.train_config("baseline", 0)


def test_validate_runs_checks_every_method_override():
    config = ec.build_config({"run": {"methods": ["baseline"]},
                              "override": {"neg_reward": {"nr": {"alpha": -0.5}}}})
    with pytest.raises(ConfigError, match="neg_reward"):
        config.validate_runs()
    ec.build_config({"override": {"neg_reward": {"nr": {"alpha": 0.5}}}}).validate_runs()


def test_config_id_ignores_workers_and_output():
    a = ec.build_config({"run": {"workers": 1}, "output": {"dir": "a"}})
    b = ec.build_config({"run": {"workers": 4}, "output": {"dir": "b"}})
    assert a.config_id() == b.config_id()
    assert len(a.config_id()) == 12
    assert a.config_id() != ec.build_config({"train": {"epochs": 3}}).config_id()


def test_rendered_lines_parse_back():
    config = ec.build_config({"run": {"seeds": [3]}, "train": {"stage_epochs": [1, 1, 2]},
                              "override": {"neg_reward": {"nr": {"alpha": 0.5}}}})
    again = ec.build_config(ec.parse_lines(ec.to_lines(config)))
    assert again == config


def test_json_and_missing_files(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text('{"train": {"epochs": 4}}')
    assert ec.load_config(path).train.epochs == 4
    path.write_text("{broken")
    with pytest.raises(ConfigError):
        ec.load_config(path)
    with pytest.raises(ConfigError):
        ec.load_config(tmp_path / "absent.conf")


def test_shipped_default_matches_built_in_defaults(monkeypatch):
    monkeypatch.delenv("CALIBLAB_WORKERS", raising=False)
    assert ec.load_config(DEFAULT_CONF).config_id() == ec.ExperimentConfig().config_id()


def test_environment_defaults(monkeypatch):
    monkeypatch.setenv("CALIBLAB_WORKERS", "3")
    monkeypatch.setenv("CALIBLAB_OUT_DIR", "/tmp/lab-out")
    config = ec.ExperimentConfig()
    assert config.run.workers == 3
    assert config.output.dir == "/tmp/lab-out"
