"""Budget-tracking state augmentation.

A constrained objective with threshold ``tau`` becomes a remaining budget
``c`` carried in the state: ``c0 = -tau`` and ``c' = c + R_i``. Rewards of
the resulting scalar MDP only pay the unconstrained objective when every
budget is non-negative and penalize overshoot by ``lambda * min_j c'_j``.
Budgets are undiscounted; the discount applies to the scalar reward only.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .lmdp import DEFAULT_HORIZON, Ordering, TabularMOMDP, lex_compare, value_iteration

TERMINAL = "terminal"  # unconstrained payoff only on reaching a terminal state
ACCUMULATE = "accumulate"  # payoff accumulated in the state, paid at the terminal
DENSE = "dense"  # payoff every step, C_l subtracted on violation
LAYOUTS = (TERMINAL, ACCUMULATE, DENSE)

MAX_STATES = 200_000
_DECIMALS = 9


@dataclass
class AugmentedMDP:
    mdp: TabularMOMDP
    base: TabularMOMDP
    tracked: tuple
    thresholds: np.ndarray
    unconstrained: int
    layout: str
    lam: float
    c_l: float
    keys: list
    index: dict = field(repr=False)
    bounds: list = field(default_factory=list, repr=False)
    pbar_bounds: tuple = (-math.inf, math.inf)

    @property
    def n_states(self) -> int:
        return len(self.keys)

    def budgets(self, aug_state: int) -> tuple:
        return self.keys[aug_state][1]

    def reward(self, key, a: int, s2: int):
        """Next augmented key and scalar reward of base transition ``key.s --a--> s2``."""
        return _advance(self, key, a, s2)

    def trajectory_return(self, states, actions) -> float:
        """Undiscounted scalar return of a base state/action sequence."""
        key = self.keys[self.mdp.initial_state]
        if states[0] != key[0]:
            raise ValueError("trajectory does not start at the initial state")
        total = 0.0
        for t, a in enumerate(actions):
            key, r = _advance(self, key, a, states[t + 1])
            total += r
        return total


def _clamp(x, lo, hi):
    x = float(x)
    if not math.isfinite(x):
        return x
    return round(min(max(x, lo), hi), _DECIMALS)


def _advance(aug, key, a, s2):
    s, cs, pbar = key
    base = aug.base
    if base.transition[s, a, s2] <= 0.0:
        raise ValueError(f"transition {s} -{a}-> {s2} has zero probability")
    new_c = tuple(
        _clamp(c + base.rewards[i, s, a, s2], lo, hi)
        for c, i, (lo, hi) in zip(cs, aug.tracked, aug.bounds)
    )
    p = float(base.rewards[aug.unconstrained, s, a, s2])
    new_pbar = None if pbar is None else _clamp(pbar + p, *aug.pbar_bounds)
    ok = all(c >= 0.0 for c in new_c)
    worst = min(new_c) if new_c else 0.0
    terminal = base.is_terminal(s2)
    if aug.layout == DENSE:
        r = p if (not terminal or ok) else aug.lam * worst - aug.c_l
    elif not terminal:
        r = 0.0
    elif ok:
        r = new_pbar if aug.layout == ACCUMULATE else p
    else:
        r = aug.lam * worst
    return (s2, new_c, new_pbar), r


def augment(momdp: TabularMOMDP, tracked, thresholds, unconstrained: int | None = None,
            lam: float = 1.0, layout: str = TERMINAL, horizon: int = DEFAULT_HORIZON,
            max_states: int = MAX_STATES) -> AugmentedMDP:
    """Build the reachable part of the budget-augmented MDP.

    Budgets are clipped to ``c0 +- horizon * max|R_i|``, which is exact for
    every trajectory no longer than ``horizon``. A threshold of ``-inf``
    makes that budget constant ``+inf``.
    """
    tracked = tuple(int(i) for i in tracked)
    thresholds = np.atleast_1d(np.asarray(thresholds, dtype=np.float64))
    if len(thresholds) != len(tracked):
        raise ValueError("one threshold per tracked objective")
    if layout not in LAYOUTS:
        raise ValueError(f"unknown reward layout {layout!r}")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if unconstrained is None:
        rest = [k for k in range(momdp.n_objectives) if k not in tracked]
        if len(rest) != 1:
            raise ValueError("name the unconstrained objective explicitly")
        unconstrained = rest[0]
    if unconstrained in tracked:
        raise ValueError("the unconstrained objective cannot also be tracked")

    r_u = momdp.rewards[unconstrained]
    m_u = float(np.max(np.abs(r_u)))
    c_l = horizon * m_u + 1.0

    aug = AugmentedMDP(
        mdp=None, base=momdp, tracked=tracked, thresholds=thresholds,
        unconstrained=unconstrained, layout=layout, lam=lam, c_l=c_l, keys=[], index={},
    )
    bounds = []
    c0 = []
    for i, tau in zip(tracked, thresholds):
        start = -tau
        span = horizon * float(np.max(np.abs(momdp.rewards[i])))
        bounds.append((start - span, start + span))
        c0.append(float(start) if not math.isfinite(start) else round(float(start), _DECIMALS))
    aug.bounds = bounds
    aug.pbar_bounds = (-horizon * m_u, horizon * m_u)

    start = (momdp.initial_state, tuple(c0), 0.0 if layout == ACCUMULATE else None)
    keys = [start]
    index = {start: 0}
    edges = []  # (from, action, to, prob, reward)
    queue = deque([start])
    while queue:
        key = queue.popleft()
        i = index[key]
        if momdp.is_terminal(key[0]):
            continue
        for a in range(momdp.n_actions):
            for s2 in np.flatnonzero(momdp.transition[key[0], a]):
                nxt, r = _advance(aug, key, a, int(s2))
                j = index.get(nxt)
                if j is None:
                    if len(keys) >= max_states:
                        raise ValueError(
                            f"augmented state space exceeds {max_states} states; "
                            "the accumulator grid is effectively unbounded"
                        )
                    j = len(keys)
                    index[nxt] = j
                    keys.append(nxt)
                    queue.append(nxt)
                edges.append((i, a, j, float(momdp.transition[key[0], a, s2]), r))

    n = len(keys)
    p = np.zeros((n, momdp.n_actions, n))
    r = np.zeros((1, n, momdp.n_actions, n))
    for i, a, j, prob, rew in edges:
        p[i, a, j] += prob
        r[0, i, a, j] = rew
    terminal = frozenset(i for i, k in enumerate(keys) if momdp.is_terminal(k[0]))
    for i in terminal:
        p[i, :, i] = 1.0
    aug.mdp = TabularMOMDP(
        transition=p, rewards=r, initial_state=0, terminal_states=terminal,
        gamma=momdp.gamma, state_labels=keys, action_labels=momdp.action_labels,
        objective_names=["augmented"], meta={"kind": "augmented", "layout": layout},
    )
    aug.keys = keys
    aug.index = index
    return aug


def augment_single(momdp: TabularMOMDP, i: int, tau: float, lam: float = 1.0,
                   layout: str = TERMINAL, unconstrained: int | None = None,
                   horizon: int = DEFAULT_HORIZON) -> AugmentedMDP:
    return augment(momdp, [i], [tau], unconstrained, lam, layout, horizon)


def solve(aug: AugmentedMDP, tol: float = 1e-10):
    """Optimal Q of the augmented MDP and its lowest-index greedy policy."""
    m = aug.mdp
    q = value_iteration(m.transition, m.rewards[0], m.gamma, m.terminal_mask, tol=tol)
    return q, np.argmax(q, axis=1)


def policy_rollout(aug: AugmentedMDP, policy, horizon: int = DEFAULT_HORIZON):
    """Deterministic rollout in the augmented MDP; returns the key sequence."""
    m = aug.mdp
    s = m.initial_state
    path = [aug.keys[s]]
    done = m.is_terminal(s)
    while not done and len(path) <= horizon:
        row = m.transition[s, int(policy[s])]
        nz = np.flatnonzero(row)
        if len(nz) != 1:
            raise ValueError("policy_rollout needs deterministic transitions")
        s = int(nz[0])
        done = m.is_terminal(s)
        path.append(aug.keys[s])
    return path


def success_probability(aug: AugmentedMDP, policy, horizon: int = DEFAULT_HORIZON) -> float:
    """Probability of ending in a terminal state with every budget non-negative."""
    m = aug.mdp
    dist = np.zeros(m.n_states)
    dist[m.initial_state] = 1.0
    # terminal states absorb, so pushing the distribution forward is enough
    step = m.transition[np.arange(m.n_states), np.asarray(policy, dtype=int)]
    for _ in range(horizon):
        dist = dist @ step
    good = np.array([all(c >= 0.0 for c in k[1]) for k in aug.keys])
    return float(np.sum(dist[good & m.terminal_mask]))


def ordering_preserved(aug: AugmentedMDP, traj1, traj2, tol: float = 1e-9) -> bool:
    """Do the thresholded-lex and augmented-return comparisons agree?

    Each trajectory is ``(states, actions)`` in the base MDP and must end
    in a terminal state. Original values are undiscounted sums over the
    tracked objectives followed by the unconstrained one.
    """
    base = aug.base
    order = list(aug.tracked) + [aug.unconstrained]
    vals = []
    rets = []
    for states, actions in (traj1, traj2):
        if not base.is_terminal(states[-1]):
            raise ValueError("ordering comparison needs terminating trajectories")
        tot = np.zeros(base.n_objectives)
        for t, a in enumerate(actions):
            tot += base.rewards[:, states[t], a, states[t + 1]]
        vals.append(tot[order])
        rets.append(aug.trajectory_return(states, actions))
    original = lex_compare(vals[0], vals[1], aug.thresholds)
    diff = rets[0] - rets[1]
    scalar = Ordering.EQUAL if abs(diff) <= tol else (Ordering.GREATER if diff > 0 else Ordering.LESS)
    return original == scalar


def terminating_trajectories(momdp: TabularMOMDP, max_len: int):
    """Every ``(states, actions)`` from the initial state that ends in a terminal
    state after at most ``max_len`` transitions. Requires deterministic dynamics."""
    out = []

    def walk(states, actions):
        s = states[-1]
        if momdp.is_terminal(s):
            out.append((tuple(states), tuple(actions)))
            return
        if len(actions) == max_len:
            return
        for a in range(momdp.n_actions):
            nz = np.flatnonzero(momdp.transition[s, a])
            if len(nz) != 1:
                raise ValueError("trajectory enumeration needs deterministic transitions")
            walk(states + [int(nz[0])], actions + [a])

    walk([momdp.initial_state], [])
    return out


def _lex_sign_matrix(vals, tau):
    # pairwise sign of the thresholded lex comparison via clipped tuples
    clipped = vals.copy()
    k = len(tau)
    clipped[:, :k] = np.minimum(clipped[:, :k], tau)
    sign = np.zeros((len(vals), len(vals)), dtype=np.int8)
    undecided = np.ones_like(sign, dtype=bool)
    for j in range(vals.shape[1]):
        diff = np.sign(clipped[:, j, None] - clipped[None, :, j]).astype(np.int8)
        sign[undecided] = diff[undecided]
        undecided &= diff == 0
    return sign


def ordering_agreement(aug: AugmentedMDP, trajectories, tol: float = 1e-9):
    """Fraction of ordered trajectory pairs on which both orderings agree.

    Returns ``(fraction, n_pairs, disagreeing_pairs)`` with the disagreeing
    pairs as index tuples into ``trajectories``.
    """
    base = aug.base
    order = list(aug.tracked) + [aug.unconstrained]
    vals = np.zeros((len(trajectories), len(order)))
    rets = np.zeros(len(trajectories))
    for n, (states, actions) in enumerate(trajectories):
        if not base.is_terminal(states[-1]):
            raise ValueError("ordering comparison needs terminating trajectories")
        tot = np.zeros(base.n_objectives)
        for t, a in enumerate(actions):
            tot += base.rewards[:, states[t], a, states[t + 1]]
        vals[n] = tot[order]
        rets[n] = aug.trajectory_return(states, actions)
    original = _lex_sign_matrix(vals, aug.thresholds)
    d = rets[:, None] - rets[None, :]
    scalar = np.where(np.abs(d) <= tol, 0, np.sign(d)).astype(np.int8)
    bad = np.argwhere(original != scalar)
    n_pairs = len(trajectories) ** 2
    return 1.0 - len(bad) / n_pairs, n_pairs, [tuple(b) for b in bad]


# ---------------------------------------------------------------------------
# how many constraints can hold together

LINEAR = "linear"
BINARY = "binary"


@dataclass
class SearchResult:
    k: int
    policy: np.ndarray | None
    augmented: AugmentedMDP | None
    calls: int


def constraint_search(momdp: TabularMOMDP, thresholds, strategy: str = LINEAR, lam: float = 1.0,
                      horizon: int = DEFAULT_HORIZON, tol: float = 1e-9) -> SearchResult:
    """Largest ``k`` such that objectives ``1..k`` can be satisfied together.

    Objectives ``0..K-2`` are constrained by ``thresholds``; the last one
    is unconstrained. Each candidate prefix is solved exactly by value
    iteration on the dense multi-budget augmentation; a prefix counts as
    satisfiable when the optimal policy ends, within the horizon, in a
    terminal state with all budgets non-negative with probability 1.
    """
    k_total = momdp.n_objectives
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if len(thresholds) != k_total - 1:
        raise ValueError(f"expected {k_total - 1} thresholds, got {len(thresholds)}")
    calls = 0
    cache = {}

    def check(i):
        nonlocal calls
        if i == 0:
            return True
        if i in cache:
            return cache[i][0]
        calls += 1
        aug = augment(momdp, range(i), thresholds[:i], k_total - 1, lam, DENSE, horizon)
        try:
            _, pol = solve(aug)
        except RuntimeError as exc:
            raise RuntimeError(f"solver failed on prefix {i} (best so far {best}): {exc}") from exc
        ok = success_probability(aug, pol, horizon) >= 1.0 - tol
        cache[i] = (ok, pol, aug)
        return ok

    best = 0
    if strategy == LINEAR:
        for i in range(1, k_total):
            if not check(i):
                break
            best = i
    elif strategy == BINARY:
        lo, hi = 0, k_total - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if check(mid):
                lo = mid
            else:
                hi = mid - 1
        best = lo
    else:
        raise ValueError(f"unknown search strategy {strategy!r}")
    if best == 0:
        return SearchResult(0, None, None, calls)
    ok, pol, aug = cache[best]
    return SearchResult(best, pol, aug, calls)


def maze_small_budget(momdp: TabularMOMDP) -> tuple[TabularMOMDP, np.ndarray]:
    """Endpoint maze with objectives reordered to (penalty, goal) and a zero budget."""
    return momdp.with_objectives([1, 0]), np.array([0.0])
