import numpy as np
import pytest

from conftest import tv_distance
from envpoison.mdp import (
    MdpError,
    SingularSystemError,
    TabularMdp,
    apply_delta,
    bellman_residual,
    exact_policy_q,
    reachable_sets,
    sample_sweep,
    sample_transition,
    value_iteration,
    write_q_csv,
)


def row_mdp(row):
    """One interesting state whose single action has transition ``row``."""
    n = len(row)
    P = np.zeros((n, 1, n))
    P[0, 0] = row
    for s in range(1, n):
        P[s, 0, s] = 1.0
    return TabularMdp(P, np.zeros((n, 1)), 0.9)


def test_single_state_geometric_series():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.9)
    assert exact_policy_q(mdp, [0])[0, 0] == pytest.approx(10.0, abs=1e-12)


def test_zero_reward_gives_zero_q(small_mdp):
    mdp = small_mdp.with_model(reward=np.zeros((3, 2)))
    assert np.all(exact_policy_q(mdp, [0, 1, 0]) == 0.0)


def test_policy_q_matches_frozen_iteration(frozen):
    case = frozen["policy_q"]
    mdp = TabularMdp(np.array(case["P"]), np.array(case["R"]), case["gamma"])
    q = exact_policy_q(mdp, case["policy"])
    np.testing.assert_allclose(q, np.array(case["q"]), atol=1e-10)
    assert np.abs(bellman_residual(mdp, q, case["policy"])).max() <= 1e-9


def test_singular_policy_evaluation_is_reported():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 1.0)
    with pytest.raises(SingularSystemError):
        exact_policy_q(mdp, [0])


def test_bad_policy_rejected(small_mdp):
    with pytest.raises(MdpError):
        exact_policy_q(small_mdp, [0, 2, 0])
    with pytest.raises(MdpError):
        exact_policy_q(small_mdp, [0, 1])


@pytest.mark.parametrize("bad", [
    dict(transition=np.full((2, 1, 2), 0.6)),
    dict(transition=np.array([[[1.5, -0.5]], [[0.0, 1.0]]])),
])
def test_invalid_transition_rejected(bad):
    with pytest.raises(MdpError):
        TabularMdp(bad["transition"], np.zeros((2, 1)), 0.9)


def test_model_is_immutable(small_mdp):
    with pytest.raises(ValueError):
        small_mdp.transition[0, 0, 0] = 0.5


def test_reachable_sets_support():
    reach = reachable_sets(row_mdp([0.7, 0.3, 0.0]))
    assert reach[0, 0] == [0, 1]
    assert reach[1, 0] == [1]


def test_reachable_sets_ignore_round_off():
    reach = reachable_sets(row_mdp([1.0 - 1e-13, 1e-13]))
    assert reach[0, 0] == [0]


def test_apply_delta_examples():
    mdp = row_mdp([0.7, 0.3])
    reach = reachable_sets(mdp)
    np.testing.assert_allclose(apply_delta(mdp, np.array([[0.5], [0.0]]), reach)[0, 0], [0.6, 0.4])
    np.testing.assert_array_equal(apply_delta(mdp, np.zeros((2, 1)), reach), mdp.transition)
    np.testing.assert_allclose(apply_delta(mdp, np.ones((2, 1)), reach)[0, 0], [0.5, 0.5])


def test_apply_delta_domain_error(small_mdp):
    reach = reachable_sets(small_mdp)
    with pytest.raises(MdpError):
        apply_delta(small_mdp, np.full((3, 2), 1.2), reach)
    with pytest.raises(MdpError):
        apply_delta(small_mdp, np.zeros((2, 2)), reach)


def test_sample_point_mass(small_mdp):
    rng = np.random.default_rng(0)
    assert {sample_transition(small_mdp, 2, 1, rng).next_state for _ in range(200)} == {0}


def test_sample_reward_is_table_entry(small_mdp):
    rng = np.random.default_rng(1)
    for _ in range(50):
        t = sample_transition(small_mdp, 1, 1, rng)
        assert t.reward == small_mdp.reward[1, 1]
        assert small_mdp.transition[1, 1, t.next_state] > 0


def test_sample_frequencies_match_row():
    mdp = row_mdp([0.7, 0.3])
    rng = np.random.default_rng(2)
    draws = [sample_transition(mdp, 0, 0, rng).next_state for _ in range(100_000)]
    assert tv_distance(np.bincount(draws, minlength=2), [0.7, 0.3]) <= 0.01


def test_sample_index_bounds(small_mdp):
    with pytest.raises(IndexError):
        sample_transition(small_mdp, 3, 0, np.random.default_rng(0))


def test_sweep_covers_every_pair(small_mdp):
    s, a, r, n = sample_sweep(small_mdp, np.random.default_rng(0))
    assert list(zip(s, a)) == [(x, y) for x in range(3) for y in range(2)]
    np.testing.assert_array_equal(r, small_mdp.reward[s, a])
    assert np.all(small_mdp.transition[s, a, n] > 0)


def test_value_iteration_matches_frozen(small_mdp, frozen):
    np.testing.assert_allclose(value_iteration(small_mdp), frozen["small_optimal_q"]["q"], atol=1e-10)


def test_csv_exports(tmp_path, small_mdp):
    small_mdp.to_csv(tmp_path / "r.csv", tmp_path / "p.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "s,a,r"
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "s,a,s_next,p"
    write_q_csv(tmp_path / "q.csv", np.zeros((3, 2)))
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "s,a,q" and len(lines) == 7
