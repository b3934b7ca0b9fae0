import numpy as np
import pytest

from envpoison.cli import default_config_path
from envpoison.config import ConfigError, ExperimentConfig, config_from_dict, dump_config, load_config
from envpoison.maze import default_maze_spec
from envpoison.schedules import Decay


def test_packaged_default_matches_maze_setup():
    cfg = load_config(default_config_path())
    assert cfg.maze == default_maze_spec()
    assert cfg.maze.stay_prob == 0.7 and cfg.maze.discount == 0.9
    assert (cfg.maze.step_reward, cfg.maze.gray_penalty, cfg.maze.goal_reward) == (-1.0, -5.0, 10.0)
    assert cfg.schedules.epsilon_gap == 1.0 and cfg.schedules.rho_delta == 2.0
    assert cfg.iterations == 20_000 and cfg.repeats == 5
    assert cfg == ExperimentConfig()


def test_dump_and_reload(tmp_path):
    cfg = ExperimentConfig().with_overrides(seed=7, iterations=50, rho_delta=0.5)
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_target_policy_and_monitored_states():
    cfg = ExperimentConfig()
    mdp = cfg.build_mdp()
    target = cfg.target_policy(mdp)
    s = mdp.state_index((1, 1))
    assert mdp.action_name(int(target[s])) == "down"
    monitored = cfg.monitored_indices(mdp)
    assert s in monitored and mdp.state_index((5, 5)) in monitored


def test_yaml_error_reports_line(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("experiment:\n  iterations: 10\n  repeats: [1, 2\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(path)


@pytest.mark.parametrize("data, field", [
    ({"experiment": {"iterations": 0}}, "iterations"),
    ({"experiment": {"repeats": -1}}, "repeats"),
    ({"experiment": {"batch_regime": "random"}}, "batch_regime"),
    ({"experiment": {"bogus": 1}}, "bogus"),
    ({"attacker": {"alpha": {"kind": "cosine"}}}, "attacker"),
    ({"agent": {"learning_rate": 2.0}}, "agent"),
    ({"environment": {"maze": {"map": "S#D"}}}, "unreachable"),
    ({"target": {"path": [[9, 9, "down"]]}}, "9"),
    ({"surprise": {}}, "surprise"),
])
def test_invalid_fields_are_named(data, field):
    with pytest.raises(ConfigError, match=field):
        config_from_dict(data)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.yaml")


def test_explicit_mdp_section(small_mdp):
    cfg = config_from_dict({
        "environment": {"mdp": {"transition": small_mdp.transition.tolist(),
                                "reward": small_mdp.reward.tolist(), "discount": 0.5}},
        "target": {"base": [1, 1, 0]},
        "agent": {"learning_rate": {"kind": "decay", "scale": 0.3, "horizon": 100}},
        "experiment": {"iterations": 10, "monitored_states": [0, 1, 2]},
    })
    mdp = cfg.build_mdp()
    np.testing.assert_array_equal(mdp.transition, small_mdp.transition)
    assert list(cfg.target_policy(mdp)) == [1, 1, 0]
    assert cfg.agent.learning_rate == Decay(0.3, 100.0, 1.0)
