"""Tabular multi-objective MDPs and the thresholded lexicographic order."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

DEFAULT_HORIZON = 200


class Ordering(enum.IntEnum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


def _check_lengths(u, v, tau):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if u.ndim != 1 or u.shape != v.shape:
        raise ValueError(f"value vectors must share one length, got {u.shape} and {v.shape}")
    if tau.shape != (len(u) - 1,):
        raise ValueError(f"expected {len(u) - 1} thresholds for K={len(u)}, got {tau.shape}")
    return u, v, tau


def _beats(u, v, tau) -> bool:
    # u >^tau v: some i with u_j >= min(v_j, tau_j) for all j < i and a strict
    # win at i (clipped for i < K, raw for i = K)
    k = len(u)
    for i in range(k):
        if i < k - 1:
            if min(u[i], tau[i]) > min(v[i], tau[i]):
                return True
        elif u[i] > v[i]:
            return True
        if i < k - 1 and not u[i] >= min(v[i], tau[i]):
            return False
    return False


def lex_compare(u, v, tau) -> Ordering:
    """Three-way thresholded lexicographic comparison of value vectors."""
    u, v, tau = _check_lengths(u, v, tau)
    if _beats(u, v, tau):
        return Ordering.GREATER
    if _beats(v, u, tau):
        return Ordering.LESS
    return Ordering.EQUAL


def satisfied_prefix(u, tau) -> int:
    """First unsatisfied constrained objective, 1-based; ``K`` when all hold."""
    u = np.asarray(u, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if tau.shape != (len(u) - 1,):
        raise ValueError(f"expected {len(u) - 1} thresholds for K={len(u)}, got {tau.shape}")
    for j, t in enumerate(tau):
        if u[j] < t:
            return j + 1
    return len(u)


@dataclass
class Trajectory:
    """States ``s_0..s_T``, actions ``a_0..a_{T-1}`` and a ``(T, K)`` reward array."""

    states: list[int]
    actions: list[int]
    rewards: np.ndarray
    terminated: bool = False

    def __len__(self):
        return len(self.actions)


def episode_return(traj: Trajectory, gamma: float) -> np.ndarray:
    rewards = np.asarray(traj.rewards, dtype=np.float64)
    if len(rewards) == 0:
        return np.zeros(rewards.shape[1] if rewards.ndim == 2 else 0)
    discounts = gamma ** np.arange(len(rewards))
    return discounts @ rewards


@dataclass
class TabularMOMDP:
    """Finite MOMDP with dense tables.

    ``transition[s, a, s2]`` is P(s2 | s, a); ``rewards[k, s, a, s2]`` is
    R_k(s, a, s2). Terminal states are rewritten into zero-reward
    self-loops on construction.
    """

    transition: np.ndarray
    rewards: np.ndarray
    initial_state: int
    terminal_states: frozenset[int]
    gamma: float
    state_labels: list | None = None
    action_labels: list | None = None
    objective_names: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.transition = np.array(self.transition, dtype=np.float64)
        self.rewards = np.array(self.rewards, dtype=np.float64)
        self.terminal_states = frozenset(int(s) for s in self.terminal_states)
        n_s, n_a = self.transition.shape[:2]
        for t in self.terminal_states:
            self.transition[t] = 0.0
            self.transition[t, :, t] = 1.0
            self.rewards[:, t] = 0.0
        self.validate()
        self.transition.setflags(write=False)
        self.rewards.setflags(write=False)
        self._terminal_mask = np.zeros(n_s, dtype=bool)
        self._terminal_mask[list(self.terminal_states)] = True
        self._cdf = np.cumsum(self.transition, axis=2)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_objectives(self) -> int:
        return self.rewards.shape[0]

    @property
    def terminal_mask(self) -> np.ndarray:
        return self._terminal_mask

    def validate(self):
        p = self.transition
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition table must be (S, A, S), got {p.shape}")
        if self.rewards.ndim != 4 or self.rewards.shape[1:] != p.shape:
            raise ValueError(f"reward tables must be (K, S, A, S), got {self.rewards.shape}")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")
        if np.any(p < 0.0):
            raise ValueError("negative transition probability")
        sums = p.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > 1e-9)
        if len(bad):
            s, a = bad[0]
            raise ValueError(f"P(.|s={s}, a={a}) sums to {sums[s, a]!r}, not 1")
        if not 0 <= self.initial_state < p.shape[0]:
            raise ValueError(f"initial state {self.initial_state} out of range")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")

    def is_terminal(self, s: int) -> bool:
        return bool(self._terminal_mask[s])

    def step(self, s: int, a: int, rng: np.random.Generator | None = None):
        """Sample one transition; returns ``(next_state, reward_vector, done)``."""
        row = self.transition[s, a]
        nz = np.flatnonzero(row)
        if len(nz) == 1:
            s2 = int(nz[0])
        else:
            if rng is None:
                raise ValueError("stochastic transition needs an rng")
            s2 = int(np.searchsorted(self._cdf[s, a], rng.random(), side="right"))
            s2 = min(s2, self.n_states - 1)
        return s2, self.rewards[:, s, a, s2], bool(self._terminal_mask[s2])

    def expected_rewards(self) -> np.ndarray:
        """``r[k, s, a] = sum_s2 P(s2|s,a) R_k(s,a,s2)``."""
        return np.einsum("ijk,nijk->nij", self.transition, self.rewards)

    def with_objectives(self, order: Sequence[int], names: Sequence[str] | None = None) -> TabularMOMDP:
        """Copy with reward tables reordered (and possibly subset) by ``order``."""
        order = list(order)
        if names is None and self.objective_names is not None:
            names = [self.objective_names[i] for i in order]
        return TabularMOMDP(
            transition=self.transition,
            rewards=self.rewards[order],
            initial_state=self.initial_state,
            terminal_states=self.terminal_states,
            gamma=self.gamma,
            state_labels=self.state_labels,
            action_labels=self.action_labels,
            objective_names=list(names) if names is not None else None,
            meta=dict(self.meta),
        )

    def with_gamma(self, gamma: float) -> TabularMOMDP:
        return TabularMOMDP(
            transition=self.transition,
            rewards=self.rewards,
            initial_state=self.initial_state,
            terminal_states=self.terminal_states,
            gamma=gamma,
            state_labels=self.state_labels,
            action_labels=self.action_labels,
            objective_names=self.objective_names,
            meta=dict(self.meta),
        )


def rollout(
    momdp: TabularMOMDP,
    policy: Callable[[int], int],
    rng: np.random.Generator | None = None,
    horizon: int = DEFAULT_HORIZON,
) -> Trajectory:
    s = momdp.initial_state
    states = [s]
    actions = []
    rewards = []
    done = momdp.is_terminal(s)
    while not done and len(actions) < horizon:
        a = int(policy(s))
        s, r, done = momdp.step(s, a, rng)
        actions.append(a)
        rewards.append(r)
        states.append(s)
    r = np.array(rewards, dtype=np.float64).reshape(len(rewards), momdp.n_objectives)
    return Trajectory(states, actions, r, terminated=done)


def table_policy(actions) -> Callable[[int], int]:
    actions = np.asarray(actions, dtype=int)
    return lambda s: int(actions[s])


def value_iteration(
    transition: np.ndarray,
    reward: np.ndarray,
    gamma: float,
    terminal_mask: np.ndarray,
    tol: float = 1e-10,
    max_iters: int = 100_000,
    q0: np.ndarray | None = None,
) -> np.ndarray:
    """Single-objective optimal Q by synchronous sweeps.

    ``reward[s, a, s2]`` per transition. Terminal successors bootstrap 0.
    Stops once the sup-norm change drops below ``tol``.
    """
    n_s, n_a, _ = transition.shape
    expected = np.einsum("ijk,ijk->ij", transition, reward)
    cont = transition * (~terminal_mask)[None, None, :]
    q = np.zeros((n_s, n_a)) if q0 is None else np.array(q0, dtype=np.float64)
    for _ in range(max_iters):
        v = q.max(axis=1)
        q_new = expected + gamma * cont @ v
        diff = np.max(np.abs(q_new - q))
        q = q_new
        if diff < tol:
            return q
    raise RuntimeError(f"value iteration did not converge within {max_iters} sweeps (last change {diff:.3g})")


# ---------------------------------------------------------------------------
# serialization

SCHEMA = "lexrl-momdp/1"


def momdp_to_dict(m: TabularMOMDP) -> dict:
    transitions = [
        [int(s), int(a), int(s2), float(m.transition[s, a, s2])]
        for s, a, s2 in zip(*np.nonzero(m.transition))
    ]
    rewards = []
    for k in range(m.n_objectives):
        rk = m.rewards[k]
        rewards.append([[int(s), int(a), int(s2), float(rk[s, a, s2])] for s, a, s2 in zip(*np.nonzero(rk))])
    return {
        "schema": SCHEMA,
        "n_states": m.n_states,
        "n_actions": m.n_actions,
        "n_objectives": m.n_objectives,
        "initial_state": int(m.initial_state),
        "terminal_states": sorted(m.terminal_states),
        "gamma": m.gamma,
        "objective_names": m.objective_names,
        "transitions": transitions,
        "rewards": rewards,
    }


def momdp_from_dict(d: dict) -> TabularMOMDP:
    if d.get("schema") != SCHEMA:
        raise ValueError(f"unsupported MOMDP schema {d.get('schema')!r}")
    n_s, n_a, k = d["n_states"], d["n_actions"], d["n_objectives"]
    p = np.zeros((n_s, n_a, n_s))
    for s, a, s2, prob in d["transitions"]:
        p[s, a, s2] = prob
    r = np.zeros((k, n_s, n_a, n_s))
    if len(d["rewards"]) != k:
        raise ValueError(f"expected {k} reward lists, got {len(d['rewards'])}")
    for i, triples in enumerate(d["rewards"]):
        for s, a, s2, val in triples:
            r[i, s, a, s2] = val
    return TabularMOMDP(
        transition=p,
        rewards=r,
        initial_state=d["initial_state"],
        terminal_states=frozenset(d["terminal_states"]),
        gamma=d["gamma"],
        objective_names=d.get("objective_names"),
    )


def save_momdp(m: TabularMOMDP, path) -> None:
    Path(path).write_text(json.dumps(momdp_to_dict(m), indent=1))


def load_momdp(path) -> TabularMOMDP:
    return momdp_from_dict(json.loads(Path(path).read_text()))
