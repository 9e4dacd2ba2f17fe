import math

import numpy as np
import pytest

from lexrl.envs import PATH_PRIMARY, builtin_maze, maze_to_momdp
from lexrl.lmdp import TabularMOMDP, value_iteration
from lexrl.tlq import (
    GABOR, LI, PARETO_CELLS, SLACK_FEASIBILITY_ROOT, Filter, TlqConfig, abs_slack_filter, acceptable_actions,
    cyclic_select_action, greedy_path, initial_tables, lex_optimal_policies, path_cells, rel_slack_filter,
    select_action,
    slack_feasibility_maze_small, td_targets, threshold_filter, tlq_update_gabor, tlq_update_informed,
    tlq_update_li, tlq_value_iteration, train_tlq,
)
from oracles import exact_q


@pytest.mark.parametrize("row,filt,expected", [
    ((0.9, 0.7, 0.2), abs_slack_filter([0.25]), [0, 1]),
    ((0.9, 0.7, 0.2), threshold_filter([1.0]), [0]),
    ((1.0, 0.8, 0.5), rel_slack_filter([0.25]), [0, 1]),
    ((0.9, 0.7, 0.2), threshold_filter([0.5]), [0, 1]),
    ((-1.0, -1.2, -2.0), rel_slack_filter([0.25]), [0, 1]),
])
def test_filter_examples(row, filt, expected):
    assert list(acceptable_actions(np.array(row), np.arange(3), 0, filt)) == expected


def test_filter_respects_previous_set():
    out = acceptable_actions(np.array([0.9, 0.7, 0.65]), np.array([1, 2]), 0, abs_slack_filter([0.1]))
    assert list(out) == [1, 2]
    with pytest.raises(ValueError):
        acceptable_actions(np.zeros(3), np.array([], dtype=int), 0, abs_slack_filter([0.1]))


@pytest.mark.parametrize("kind,params", [("abs_slack", [-0.1]), ("rel_slack", [0.0]), ("rel_slack", [1.5]),
                                         ("other", [0.1])])
def test_filter_validation(kind, params):
    with pytest.raises(ValueError):
        Filter(kind, params)


def test_config_validation():
    filt = threshold_filter([0.0])
    for bad in ({"eps": 1.5}, {"lr": 0.0}, {"lr": 1.1}, {"variant": "x"}, {"buffer": -1.0}):
        with pytest.raises(ValueError):
            TlqConfig(filt, **bad)


def test_select_action_examples():
    q = np.zeros((2, 1, 4))
    q[0, 0] = [0.0, 1.0, 1.0, 0.0]
    q[1, 0] = [5.0, 0.2, 0.3, 9.0]
    filt = threshold_filter([0.5])
    assert select_action(q, 0, 0.0, filt) == 2
    q[0, 0] = [0.0, 0.0, 0.0, 1.0]
    q[1, 0] = [5.0, 5.0, 5.0, 0.0]
    assert select_action(q, 0, 0.0, filt) == 3


def test_select_action_explores_uniformly():
    q = np.zeros((2, 1, 4))
    q[0, 0, 2] = 1.0
    rng = np.random.default_rng(0)
    counts = np.bincount([select_action(q, 0, 1.0, threshold_filter([0.5]), rng) for _ in range(4000)],
                         minlength=4)
    assert np.all(np.abs(counts / 4000 - 0.25) < 0.03)
    with pytest.raises(ValueError):
        select_action(q, 0, 0.5, threshold_filter([0.5]))


def test_ties_break_to_lowest_index():
    q = np.zeros((2, 1, 4))
    assert select_action(q, 0, 0.0, abs_slack_filter([0.0])) == 0


def test_cyclic_selection_examples():
    filt = abs_slack_filter([0.1, 0.1])
    q = np.zeros((2, 1, 3))
    q[0, 0] = [1.0, 0.0, 0.0]
    assert cyclic_select_action(q, 0, filt) == 0
    q[0, 0] = [1.0, 1.0, 0.0]
    q[1, 0] = [0.0, 1.0, 5.0]
    assert cyclic_select_action(q, 0, filt) == 1
    q[0, 0] = [1.0, 0.95, 0.0]
    q[1, 0] = [1.0, 1.0, 5.0]
    assert cyclic_select_action(q, 0, filt) == 0
    with pytest.raises(ValueError):
        cyclic_select_action(q, 0, abs_slack_filter([0.1]))
    with pytest.raises(ValueError):
        cyclic_select_action(np.zeros((3, 1, 3)), 0, abs_slack_filter([0.1, 0.1, 0.1]))


def line(n, gamma):
    """States 0..n-1, a single action moving right; objective 1 pays 1 on entering the end."""
    p = np.zeros((n, 1, n))
    for s in range(n - 1):
        p[s, 0, s + 1] = 1
    p[n - 1, 0, n - 1] = 1
    r = np.zeros((2, n, 1, n))
    r[0, n - 2, 0, n - 1] = 1.0
    return TabularMOMDP(p, r, 0, frozenset({n - 1}), gamma)


def test_gabor_hand_examples():
    filt = threshold_filter([0.6])
    q = np.zeros((2, 3, 1))
    tlq_update_gabor(q, 1, 0, 2, np.array([1.0, 0.0]), True, 0.5, 1.0, filt)
    assert q[0, 1, 0] == pytest.approx(0.6)
    tlq_update_gabor(q, 0, 0, 1, np.array([0.0, 0.0]), False, 0.5, 1.0, filt)
    assert q[0, 0, 0] == pytest.approx(0.3)
    vi = tlq_value_iteration(line(3, 0.5), filt, GABOR)
    np.testing.assert_allclose(vi[0, :2, 0], [0.3, 0.6])


def test_li_hand_examples():
    filt = threshold_filter([0.6])
    q = np.zeros((2, 3, 1))
    tlq_update_li(q, 1, 0, 2, np.array([1.0, 0.0]), True, 0.5, 1.0, filt)
    assert q[0, 1, 0] == pytest.approx(1.0)
    tlq_update_li(q, 0, 0, 1, np.array([0.0, 0.0]), False, 0.5, 1.0, filt)
    assert q[0, 0, 0] == pytest.approx(0.5)
    np.testing.assert_allclose(tlq_value_iteration(line(3, 0.5), filt, LI)[0, :2, 0], [0.5, 1.0])


def test_zero_rewards_keep_zero_tables():
    q = np.zeros((2, 3, 2))
    for variant_update in (tlq_update_gabor, tlq_update_li):
        variant_update(q, 0, 1, 1, np.zeros(2), False, 0.9, 0.5, threshold_filter([0.3]))
    assert np.all(q == 0)


def test_gabor_needs_absolute_thresholds():
    with pytest.raises(ValueError):
        td_targets(np.zeros((2, 2, 2)), 1, np.zeros(2), False, 0.9, abs_slack_filter([0.1]), GABOR)


def test_rectified_tables_stay_below_threshold():
    rng = np.random.default_rng(2)
    tau = np.array([0.4, -0.2])
    filt = threshold_filter(tau)
    m = TabularMOMDP(np.full((5, 3, 5), 0.2), np.zeros((3, 5, 3, 5)), 0, frozenset(), 0.9)
    q = initial_tables(m, TlqConfig(filt, variant=GABOR))
    assert np.all(q[1] == -0.2) and np.all(q[0] == 0) and np.all(q[2] == 0)
    for _ in range(5000):
        s, a, s2 = rng.integers(5), rng.integers(3), rng.integers(5)
        tlq_update_gabor(q, s, a, s2, rng.normal(size=3) * 2, bool(rng.random() < 0.1), 0.9,
                         float(rng.uniform(0.05, 1)), filt)
        assert np.all(q[0] <= tau[0] + 1e-12) and np.all(q[1] <= tau[1] + 1e-12)


def test_informed_target_follows_secondary_choice():
    filt = abs_slack_filter([0.5])
    q = np.zeros((2, 2, 2))
    q[0, 1] = [1.0, 0.8]
    q[1, 1] = [0.0, 3.0]
    tlq_update_informed(q, 0, 0, 1, np.array([0.0, 0.0]), False, 0.5, 1.0, filt, buffer=0.0)
    assert q[0, 0, 0] == pytest.approx(0.4)
    assert q[1, 0, 0] == pytest.approx(1.5)


def test_informed_infinite_buffer_uses_global_secondary_argmax():
    filt = abs_slack_filter([0.01])
    q = np.zeros((2, 2, 2))
    q[0, 1] = [1.0, -4.0]
    q[1, 1] = [0.0, 3.0]
    tlq_update_informed(q, 0, 0, 1, np.zeros(2), False, 0.5, 1.0, filt, buffer=math.inf)
    assert q[0, 0, 0] == pytest.approx(-2.0)
    q[0, 0, 0] = 0.0
    tlq_update_informed(q, 0, 0, 1, np.zeros(2), False, 0.5, 1.0, filt, buffer=0.0)
    assert q[0, 0, 0] == pytest.approx(0.5)


def test_informed_requires_two_objectives():
    with pytest.raises(ValueError):
        tlq_update_informed(np.zeros((3, 2, 2)), 0, 0, 1, np.zeros(3), False, 0.9, 0.5,
                            abs_slack_filter([0.1, 0.1]), 0.0)
    m = maze_to_momdp(builtin_maze("maze-small"), 0.9)
    three = TabularMOMDP(m.transition, np.concatenate([m.rewards, m.rewards[:1]]), m.initial_state,
                         m.terminal_states, 0.9)
    with pytest.raises(ValueError):
        train_tlq(three, TlqConfig(abs_slack_filter([0.1, 0.1]), informed=True, episodes=1))


@pytest.mark.parametrize("gamma,expected", [(0.9, None), (0.5, (0.375, 0.5))])
def test_slack_feasibility_examples(gamma, expected):
    out = slack_feasibility_maze_small(gamma)
    if expected is None:
        assert out is None
    else:
        np.testing.assert_allclose(out, expected)


def test_slack_feasibility_limits():
    lo, hi = slack_feasibility_maze_small(1e-6)
    assert lo == pytest.approx(0.0, abs=1e-5) and hi == pytest.approx(1.0, abs=1e-5)
    assert SLACK_FEASIBILITY_ROOT == pytest.approx(0.618034, abs=1e-6)
    with pytest.raises(ValueError):
        slack_feasibility_maze_small(1.0)


def test_q_learning_matches_exact_dp_on_chain():
    n = 5
    p = np.zeros((n, 2, n))
    r = np.zeros((1, n, 2, n))
    for s in range(n - 1):
        p[s, 0, s + 1] = 1
        p[s, 1, s] = 1
        r[0, s, 1, s] = -0.1
    p[n - 1, :, n - 1] = 1
    r[0, n - 2, 0, n - 1] = 1.0
    m = TabularMOMDP(p, r, 0, frozenset({n - 1}), 0.9)
    res = train_tlq(m, TlqConfig(Filter("threshold", []), lr=0.5, eps=0.5, episodes=2000, horizon=50), seed=3)
    ref = exact_q(p, r[0], 0.9, m.terminal_mask)
    np.testing.assert_allclose(res.q[0, :n - 1], ref[:n - 1], atol=1e-3)
    np.testing.assert_allclose(ref, value_iteration(p, r[0], 0.9, m.terminal_mask), atol=1e-8)


def test_terminating_secondary_maze_reaches_goal():
    m = maze_to_momdp(builtin_maze("maze-small", scheme=PATH_PRIMARY), 0.99)
    res = train_tlq(m, TlqConfig(threshold_filter([0.0]), episodes=1500, eps=0.2), seed=0)
    assert res.goal_rate >= 0.95
    assert path_cells(m, greedy_path(m, res.policy)) == PARETO_CELLS


def test_informed_targets_take_the_detour_when_slack_allows():
    m = maze_to_momdp(builtin_maze("maze-small"), 0.5)
    lo, hi = slack_feasibility_maze_small(0.5)
    filt = abs_slack_filter([(lo + hi) / 2])
    informed = train_tlq(m, TlqConfig(filt, informed=True, episodes=3000, eps=0.2), seed=0)
    assert informed.goal_rate == 1.0
    assert path_cells(m, greedy_path(m, informed.policy)) == PARETO_CELLS
    plain = train_tlq(m, TlqConfig(filt, episodes=3000, eps=0.2), seed=0)
    assert plain.goal_rate == 0.0


def test_exact_greedy_policy_misses_pareto_path_at_high_gamma():
    m = maze_to_momdp(builtin_maze("maze-small"), 0.99)
    for filt, variant in [(threshold_filter([0.99**3]), GABOR), (abs_slack_filter([0.02]), LI),
                          (rel_slack_filter([0.02]), LI)]:
        q = tlq_value_iteration(m, filt, variant)
        pol = np.array([select_action(q, s, 0.0, filt) for s in range(m.n_states)])
        assert path_cells(m, greedy_path(m, pol, horizon=20)) != PARETO_CELLS


def test_lex_optimal_policies_follow_pareto_path():
    m = maze_to_momdp(builtin_maze("maze-small"), 0.99)
    winners, _ = lex_optimal_policies(m, [0.99**3])
    assert len(winners) > 0
    for pol in winners:
        assert path_cells(m, greedy_path(m, pol)) == PARETO_CELLS


def test_train_tlq_rejects_non_finite():
    m = maze_to_momdp(builtin_maze("maze-small"), 0.9)
    huge = m.rewards.copy()
    huge[1] = 1e308
    big = TabularMOMDP(m.transition, huge, m.initial_state, m.terminal_states, 0.9)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(FloatingPointError, match="non-finite"):
        train_tlq(big, TlqConfig(abs_slack_filter([0.1]), lr=1.0, episodes=50))
