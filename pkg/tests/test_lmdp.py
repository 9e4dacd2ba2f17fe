import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lexrl.lmdp import (
    Ordering, TabularMOMDP, Trajectory, episode_return, lex_compare, load_momdp, momdp_from_dict,
    momdp_to_dict, rollout, satisfied_prefix, save_momdp, table_policy, value_iteration,
)
from oracles import clip_then_lex, exact_q


@pytest.mark.parametrize("u,v,tau,expected", [
    ((7, 1), (6, 3), (5,), Ordering.LESS),
    ((4, 9), (3, 0), (5,), Ordering.GREATER),
    ((6, 2), (7, 2), (5,), Ordering.EQUAL),
    ((1, 2, 3), (1, 2, 3), (0, 0), Ordering.EQUAL),
    ((5, 0, 1), (5, 0, 2), (9, 9), Ordering.LESS),
])
def test_lex_compare_examples(u, v, tau, expected):
    assert lex_compare(u, v, tau) == expected


def test_lex_compare_length_errors():
    with pytest.raises(ValueError):
        lex_compare((1, 2), (1, 2, 3), (0,))
    with pytest.raises(ValueError):
        lex_compare((1, 2), (1, 2), (0, 0))


def test_lex_compare_infinite_thresholds():
    # tau = +inf is plain lexicographic order, tau = -inf ignores the objective
    assert lex_compare((2, 0), (1, 5), (np.inf,)) == Ordering.GREATER
    assert lex_compare((2, 0), (1, 5), (-np.inf,)) == Ordering.LESS


def test_lex_compare_matches_oracle_on_ties():
    # coarse integer grid so ties and exact threshold hits are frequent
    rng = np.random.default_rng(0)
    for _ in range(2000):
        k = int(rng.integers(2, 5))
        u = rng.integers(-2, 3, size=k).astype(float)
        v = rng.integers(-2, 3, size=k).astype(float)
        tau = rng.integers(-2, 3, size=k - 1).astype(float)
        assert int(lex_compare(u, v, tau)) == clip_then_lex(list(u), list(v), list(tau))


small = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 4).flatmap(lambda k: st.tuples(
    st.lists(small, min_size=k, max_size=k), st.lists(small, min_size=k, max_size=k),
    st.lists(small, min_size=k, max_size=k), st.lists(small, min_size=k - 1, max_size=k - 1))))
def test_order_properties(data):
    u, v, w, tau = data
    assert lex_compare(u, u, tau) == Ordering.EQUAL
    assert lex_compare(u, v, tau) == -lex_compare(v, u, tau)
    if lex_compare(u, v, tau) >= 0 and lex_compare(v, w, tau) >= 0:
        assert lex_compare(u, w, tau) >= 0


@pytest.mark.parametrize("u,tau,expected", [((6, 0), (5,), 2), ((4, 0), (5,), 1), ((6, 2, 0), (5, 3), 2),
                                            ((6, 4, 0), (5, 3), 3), ((5, 3, 0), (5, 3), 3)])
def test_satisfied_prefix(u, tau, expected):
    assert satisfied_prefix(u, tau) == expected


def test_episode_return_examples():
    empty = Trajectory([0], [], np.zeros((0, 2)))
    np.testing.assert_array_equal(episode_return(empty, 0.5), [0, 0])
    one = Trajectory([0, 1], [0], np.array([[1.0, -5.0]]))
    np.testing.assert_allclose(episode_return(one, 0.5), [1, -5])
    two = Trajectory([0, 1, 2], [0, 0], np.array([[0.0, -1.0], [1.0, -1.0]]))
    np.testing.assert_allclose(episode_return(two, 0.5), [0.5, -1.5])
    np.testing.assert_allclose(episode_return(two, 1.0), [1.0, -2.0])


def chain(n=5, gamma=0.9):
    # states 0..n-1, action 0 moves right, action 1 stays; reward 1 on entering the last state
    p = np.zeros((n, 2, n))
    r = np.zeros((1, n, 2, n))
    for s in range(n - 1):
        p[s, 0, s + 1] = 1
        p[s, 1, s] = 1
    r[0, n - 2, 0, n - 1] = 1.0
    return TabularMOMDP(p, r, 0, frozenset({n - 1}), gamma)


def test_validation_errors():
    m = chain()
    p = m.transition.copy()
    p[0, 0, 0] = 0.5
    with pytest.raises(ValueError, match="sums to"):
        TabularMOMDP(p, m.rewards, 0, m.terminal_states, 0.9)
    with pytest.raises(ValueError, match="gamma"):
        TabularMOMDP(m.transition, m.rewards, 0, m.terminal_states, 0.0)
    bad = m.rewards.copy()
    bad[0, 0, 0, 1] = np.nan
    with pytest.raises(ValueError, match="finite"):
        TabularMOMDP(m.transition, bad, 0, m.terminal_states, 0.9)


def test_terminal_states_absorb_with_zero_reward():
    m = chain()
    s2, r, done = m.step(4, 0)
    assert s2 == 4 and done and np.all(r == 0)


def test_rollout_and_horizon():
    m = chain()
    t = rollout(m, table_policy([0] * 5))
    assert t.terminated and t.states == [0, 1, 2, 3, 4]
    np.testing.assert_allclose(episode_return(t, 0.9), [0.9**3])
    idle = rollout(m, table_policy([1] * 5), horizon=7)
    assert not idle.terminated and len(idle) == 7


def test_value_iteration_matches_policy_iteration():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n, a = 6, 3
        p = rng.random((n, a, n)) ** 4
        p /= p.sum(axis=2, keepdims=True)
        r = rng.normal(size=(n, a, n))
        term = np.zeros(n, dtype=bool)
        term[-1] = True
        q = value_iteration(p, r, 0.8, term)
        np.testing.assert_allclose(q, exact_q(p, r, 0.8, term), atol=1e-8)


def test_serialization_round_trip(tmp_path):
    m = chain()
    d = momdp_to_dict(m)
    json.dumps(d)
    assert d["transitions"][0][:3] == [0, 0, 1]
    back = momdp_from_dict(d)
    np.testing.assert_array_equal(back.transition, m.transition)
    np.testing.assert_array_equal(back.rewards, m.rewards)
    path = tmp_path / "m.json"
    save_momdp(m, path)
    again = load_momdp(path)
    assert again.terminal_states == m.terminal_states and again.gamma == m.gamma
    with pytest.raises(ValueError, match="schema"):
        momdp_from_dict({**d, "schema": "other"})
