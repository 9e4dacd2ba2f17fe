"""Tabular thresholded lexicographic Q-learning (TLQ).

Two update rules share one action-selection machinery:

* rectified (Gabor et al.): targets are clamped at the threshold,
  ``min(tau_i, R_i + gamma max_{Pi_{i-1}} Q_i)`` for constrained objectives;
* raw (Li et al.): the same target without the clamp.

Acceptable-action filters (absolute threshold, absolute slack, relative
slack) chain over the constrained objectives. Ties break toward the lowest
action index everywhere.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .lmdp import DEFAULT_HORIZON, TabularMOMDP

GABOR = "gabor"
LI = "li"
VARIANTS = (GABOR, LI)

ABS_THRESHOLD = "threshold"
ABS_SLACK = "abs_slack"
REL_SLACK = "rel_slack"
FILTER_KINDS = (ABS_THRESHOLD, ABS_SLACK, REL_SLACK)

TIE_TOL = 1e-12


@dataclass
class Filter:
    """One parameter per filtered objective (tau, delta or eta)."""

    kind: str
    params: np.ndarray

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        self.params = np.atleast_1d(np.asarray(self.params, dtype=np.float64))
        if self.kind == ABS_SLACK and np.any(self.params < 0):
            raise ValueError("absolute slacks must be non-negative")
        if self.kind == REL_SLACK and np.any((self.params <= 0) | (self.params > 1)):
            raise ValueError("relative slacks must lie in (0, 1]")


def threshold_filter(tau) -> Filter:
    return Filter(ABS_THRESHOLD, tau)


def abs_slack_filter(delta) -> Filter:
    return Filter(ABS_SLACK, delta)


def rel_slack_filter(eta) -> Filter:
    return Filter(REL_SLACK, eta)


def _argmax_set(values, prev):
    best = values[prev].max()
    return prev[values[prev] >= best - TIE_TOL]


def acceptable_actions(q_row, prev, i: int, filt: Filter, loosen: float = 0.0) -> np.ndarray:
    """Actions of ``prev`` acceptable for objective ``i`` given ``q_row = Q_i(s, .)``.

    ``loosen`` widens the acceptance margin (used by the buffered sets of
    informed targets). The result is never empty: a threshold that no
    action clears falls back to the argmax set.
    """
    q_row = np.asarray(q_row, dtype=np.float64)
    prev = np.asarray(prev, dtype=int)
    if len(prev) == 0:
        raise ValueError("previous acceptable set is empty")
    vals = q_row[prev]
    best = vals.max()
    param = filt.params[i]
    if filt.kind == ABS_THRESHOLD:
        keep = vals >= param - loosen
    elif filt.kind == ABS_SLACK:
        keep = vals >= best - param - loosen
    else:
        # (1 - eta) * max for non-negative maxima; mirrored for negative ones
        keep = vals >= best - param * abs(best) - loosen
    out = prev[keep]
    if len(out) == 0:
        out = _argmax_set(q_row, prev)
    return out


def acceptable_chain(q, s: int, filt: Filter, upto: int, loosen: float = 0.0) -> np.ndarray:
    """``Pi_upto(s)``: filters of objectives ``0..upto-1`` applied in order."""
    acts = np.arange(q.shape[2])
    for i in range(upto):
        acts = acceptable_actions(q[i, s], acts, i, filt, loosen)
    return acts


def greedy_in(q_row, acts) -> int:
    """Lowest-index argmax of ``q_row`` restricted to ``acts``."""
    acts = np.asarray(acts, dtype=int)
    return int(acts[int(np.argmax(q_row[acts]))])


def select_action(q, s: int, eps: float, filt: Filter, rng: np.random.Generator | None = None) -> int:
    """Epsilon-greedy lexicographic action selection.

    ``q`` has shape ``(K, S, A)``. Filters run over objectives while more
    than one action survives; the surviving set is then maximized with
    respect to the objective reached.
    """
    k, _, n_a = q.shape
    if eps > 0.0:
        if rng is None:
            raise ValueError("exploration needs an rng")
        if rng.random() < eps:
            return int(rng.integers(n_a))
    acts = np.arange(n_a)
    for o in range(k):
        if len(acts) > 1 and o < k - 1:
            acts = acceptable_actions(q[o, s], acts, o, filt)
        else:
            return greedy_in(q[o, s], acts)
    raise AssertionError("unreachable")


def cyclic_select_action(q, s: int, filt: Filter) -> int:
    """Two-objective cyclic selection; ``filt`` carries a parameter for both objectives."""
    if q.shape[0] != 2:
        raise ValueError("cyclic selection is defined for two objectives only")
    if len(filt.params) < 2:
        raise ValueError("cyclic selection needs a filter parameter for the second objective too")
    a0 = np.arange(q.shape[2])
    a1 = acceptable_actions(q[0, s], a0, 0, filt)
    if len(a1) <= 1:
        return greedy_in(q[0, s], a0)
    a2 = acceptable_actions(q[1, s], a1, 1, filt)
    if len(a2) <= 1:
        return greedy_in(q[1, s], a1)
    return greedy_in(q[0, s], a2)


def greedy_policy(q, filt: Filter, cyclic: bool = False) -> np.ndarray:
    n_s = q.shape[1]
    if cyclic:
        return np.array([cyclic_select_action(q, s, filt) for s in range(n_s)], dtype=int)
    return np.array([select_action(q, s, 0.0, filt) for s in range(n_s)], dtype=int)


# ---------------------------------------------------------------------------
# targets and updates


def _clamp(x, i, k, variant, tau):
    if variant == GABOR and i < k - 1:
        return min(tau[i], x)
    return x


def _thresholds(filt: Filter, variant: str, k: int) -> np.ndarray:
    if variant != GABOR:
        return np.full(k - 1, np.inf)
    if filt.kind != ABS_THRESHOLD:
        raise ValueError("the rectified variant clamps at thresholds; use an absolute-threshold filter")
    return filt.params


def informed_action(q, s2: int, filt: Filter, buffer: float) -> int:
    """Action the secondary objective would pick in ``s2`` over the buffered set."""
    acts = np.arange(q.shape[2])
    wide = acceptable_actions(q[0, s2], acts, 0, filt, loosen=buffer) if math.isfinite(buffer) else acts
    return greedy_in(q[1, s2], wide)


def td_targets(q, s2: int, rewards, terminal: bool, gamma: float, filt: Filter,
               variant: str, informed: bool = False, buffer: float = 0.0) -> np.ndarray:
    """Per-objective one-step targets for a transition into ``s2``."""
    k = q.shape[0]
    tau = _thresholds(filt, variant, k)
    out = np.empty(k)
    if informed and k != 2:
        raise ValueError("informed targets are only defined for two objectives")
    a_inf = informed_action(q, s2, filt, buffer) if informed and not terminal else None
    acts = np.arange(q.shape[2])
    for i in range(k):
        if terminal:
            boot = 0.0
        elif informed and i == 0:
            boot = q[0, s2, a_inf]
        else:
            boot = q[i, s2, acts].max()
        out[i] = _clamp(rewards[i] + gamma * boot, i, k, variant, tau)
        if not terminal and i < k - 1:
            acts = acceptable_actions(q[i, s2], acts, i, filt)
    return out


def tlq_update(q, s: int, a: int, s2: int, rewards, terminal: bool, gamma: float, lr: float,
               filt: Filter, variant: str, informed: bool = False, buffer: float = 0.0) -> np.ndarray:
    """In-place sampled update of every objective's table at ``(s, a)``."""
    target = td_targets(q, s2, rewards, terminal, gamma, filt, variant, informed, buffer)
    q[:, s, a] = (1.0 - lr) * q[:, s, a] + lr * target
    return q


def tlq_update_gabor(q, s, a, s2, rewards, terminal, gamma, lr, filt):
    return tlq_update(q, s, a, s2, rewards, terminal, gamma, lr, filt, GABOR)


def tlq_update_li(q, s, a, s2, rewards, terminal, gamma, lr, filt):
    return tlq_update(q, s, a, s2, rewards, terminal, gamma, lr, filt, LI)


def tlq_update_informed(q, s, a, s2, rewards, terminal, gamma, lr, filt, buffer):
    if q.shape[0] != 2:
        raise ValueError("informed targets are only defined for two objectives")
    return tlq_update(q, s, a, s2, rewards, terminal, gamma, lr, filt, LI, informed=True, buffer=buffer)


# ---------------------------------------------------------------------------
# exact solution by value iteration


def tlq_value_iteration(momdp: TabularMOMDP, filt: Filter, variant: str,
                        tol: float = 1e-10, max_iters: int = 100_000) -> np.ndarray:
    """Fixed point of the expected TLQ updates, solved one objective at a time.

    Objective ``i`` is swept to convergence with the acceptable sets built
    from the already converged tables of objectives ``0..i-1``.
    """
    k, n_s, n_a = momdp.n_objectives, momdp.n_states, momdp.n_actions
    tau = _thresholds(filt, variant, k)
    p = momdp.transition
    cont = p * (~momdp.terminal_mask)[None, None, :]
    expected = momdp.expected_rewards()
    q = np.zeros((k, n_s, n_a))
    mask = np.ones((n_s, n_a), dtype=bool)
    for i in range(k):
        qi = np.zeros((n_s, n_a))
        for _ in range(max_iters):
            v = np.where(mask, qi, -np.inf).max(axis=1)
            v[momdp.terminal_mask] = 0.0
            new = expected[i] + momdp.gamma * cont @ v
            if variant == GABOR and i < k - 1:
                new = np.minimum(new, tau[i])
            diff = np.max(np.abs(new - qi))
            qi = new
            if diff < tol:
                break
        else:
            raise RuntimeError(f"objective {i}: value iteration did not converge (last change {diff:.3g})")
        q[i] = qi
        if i < k - 1:
            nxt = np.zeros_like(mask)
            for s in range(n_s):
                acts = np.flatnonzero(mask[s])
                nxt[s, acceptable_actions(qi[s], acts, i, filt)] = True
            mask = nxt
    return q


# ---------------------------------------------------------------------------
# sampled learning


@dataclass
class TlqConfig:
    filter: Filter
    variant: str = LI
    lr: float = 0.1
    eps: float = 0.1
    episodes: int = 50_000
    horizon: int = DEFAULT_HORIZON
    informed: bool = False
    buffer: float = 0.0
    cyclic: bool = False
    eval_episodes: int = 100
    log_every: int = 100

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown TLQ variant {self.variant!r}")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError("eps must lie in [0, 1]")
        if not 0.0 < self.lr <= 1.0:
            raise ValueError("learning rate must lie in (0, 1]")
        if self.buffer < 0:
            raise ValueError("buffer must be non-negative")


@dataclass
class TlqResult:
    q: np.ndarray
    policy: np.ndarray
    goal_rate: float
    mean_returns: np.ndarray
    log: list
    policy_flips: int


def _act(q, s, cfg, rng):
    if cfg.cyclic:
        if rng.random() < cfg.eps:
            return int(rng.integers(q.shape[2]))
        return cyclic_select_action(q, s, cfg.filter)
    return select_action(q, s, cfg.eps, cfg.filter, rng)


def evaluate_table_policy(momdp: TabularMOMDP, policy, episodes: int = 100, seed: int = 0,
                          horizon: int = DEFAULT_HORIZON):
    """Goal-reach rate and mean discounted returns of a deterministic policy."""
    rng = np.random.default_rng(seed)
    reached = 0
    total = np.zeros(momdp.n_objectives)
    for _ in range(episodes):
        s = momdp.initial_state
        disc = 1.0
        ret = np.zeros(momdp.n_objectives)
        done = momdp.is_terminal(s)
        t = 0
        while not done and t < horizon:
            s, r, done = momdp.step(s, int(policy[s]), rng)
            ret += disc * r
            disc *= momdp.gamma
            t += 1
        reached += done
        total += ret
    return reached / episodes, total / episodes


def initial_tables(momdp: TabularMOMDP, cfg: TlqConfig) -> np.ndarray:
    """Zero tables, lowered to ``tau_i`` for rectified objectives with negative thresholds.

    Updates are convex combinations with clamped targets, so starting at or
    below the threshold keeps every rectified entry there.
    """
    k = momdp.n_objectives
    q = np.zeros((k, momdp.n_states, momdp.n_actions))
    if cfg.variant == GABOR:
        tau = _thresholds(cfg.filter, GABOR, k)
        for i in range(k - 1):
            q[i] = min(0.0, tau[i])
    return q


def train_tlq(momdp: TabularMOMDP, cfg: TlqConfig, seed: int = 0) -> TlqResult:
    if cfg.informed and momdp.n_objectives != 2:
        raise ValueError("informed targets are only defined for two objectives")
    rng = np.random.default_rng(seed)
    q = initial_tables(momdp, cfg)
    window_goal = []
    window_ret = []
    log = []
    flips = 0
    for ep in range(1, cfg.episodes + 1):
        s = momdp.initial_state
        done = momdp.is_terminal(s)
        ret = np.zeros(momdp.n_objectives)
        disc = 1.0
        t = 0
        while not done and t < cfg.horizon:
            a = _act(q, s, cfg, rng)
            s2, r, done = momdp.step(s, a, rng)
            before = select_action(q, s, 0.0, cfg.filter)
            tlq_update(q, s, a, s2, r, done, momdp.gamma, cfg.lr, cfg.filter, cfg.variant,
                       cfg.informed, cfg.buffer)
            if not np.all(np.isfinite(q[:, s, a])):
                raise FloatingPointError(f"non-finite Q at episode {ep}, state {s}, action {a}")
            flips += select_action(q, s, 0.0, cfg.filter) != before
            ret += disc * r
            disc *= momdp.gamma
            s = s2
            t += 1
        window_goal.append(done)
        window_ret.append(ret)
        if ep % cfg.log_every == 0 or ep == cfg.episodes:
            log.append((ep, float(np.mean(window_goal)), np.mean(window_ret, axis=0)))
            window_goal, window_ret = [], []
    policy = greedy_policy(q, cfg.filter, cfg.cyclic)
    rate, means = evaluate_table_policy(momdp, policy, cfg.eval_episodes, seed, cfg.horizon)
    return TlqResult(q, policy, rate, means, log, flips)


TLQ_LOG_TAG = "# lexrl tlq-log v1"


def write_tlq_log(result: TlqResult, path) -> None:
    k = len(result.mean_returns)
    with open(path, "w", newline="") as fh:
        fh.write(TLQ_LOG_TAG + "\n")
        w = csv.writer(fh)
        w.writerow(["episode", "goal_rate"] + [f"mean_return_{i + 1}" for i in range(k)])
        for ep, rate, means in result.log:
            w.writerow([ep, repr(rate)] + [repr(float(m)) for m in means])


# ---------------------------------------------------------------------------
# failure analysis on the small maze

PARETO_CELLS = [(1, 0), (2, 0), (2, 1), (2, 2), (1, 2)]


def greedy_path(momdp: TabularMOMDP, policy, horizon: int = DEFAULT_HORIZON) -> list[int]:
    s = momdp.initial_state
    path = [s]
    done = momdp.is_terminal(s)
    while not done and len(path) <= horizon:
        s, _, done = momdp.step(s, int(policy[s]))
        path.append(s)
    return path


def path_cells(momdp: TabularMOMDP, path) -> list:
    return [tuple(momdp.state_labels[s]) for s in path]


def slack_feasibility_maze_small(gamma: float, goal_reward: float = 1.0):
    """Absolute slacks that make the detour around the high-penalty row acceptable.

    The detour needs Right acceptable at the start, ``gamma^3 R >= gamma R - delta``,
    while Right at (2,2) must stay unacceptable, ``gamma R < R - delta``.
    Returns ``(lo, hi)`` meaning ``lo <= delta < hi``, or None when empty.
    """
    if not 0.0 < gamma < 1.0 or goal_reward <= 0:
        raise ValueError("need 0 < gamma < 1 and R > 0")
    lo = goal_reward * gamma * (1.0 - gamma**2)
    hi = goal_reward * (1.0 - gamma)
    if lo < hi:
        return lo, hi
    return None


SLACK_FEASIBILITY_ROOT = (math.sqrt(5.0) - 1.0) / 2.0


def enumerate_policy_values(momdp: TabularMOMDP, gamma: float | None = None, chunk: int = 4096):
    """Exact start-state value vectors of every deterministic policy.

    Returns ``(policies, values)`` with shapes ``(N, S)`` and ``(N, K)``;
    only practical for a handful of states.
    """
    gamma = momdp.gamma if gamma is None else gamma
    n_s, n_a = momdp.n_states, momdp.n_actions
    free = [s for s in range(n_s) if not momdp.is_terminal(s)]
    choices = np.array(list(product(range(n_a), repeat=len(free))), dtype=int).reshape(-1, len(free))
    pols = np.zeros((len(choices), n_s), dtype=int)
    pols[:, free] = choices
    expected = momdp.expected_rewards()
    live = (~momdp.terminal_mask).astype(float)
    eye = np.eye(n_s)
    rows = np.arange(n_s)
    out = np.empty((len(pols), momdp.n_objectives))
    for lo in range(0, len(pols), chunk):
        pol = pols[lo:lo + chunk]
        p = momdp.transition[rows[None, :], pol] * live[None, None, :]
        r = np.transpose(expected[:, rows[None, :], pol], (1, 2, 0))
        v = np.linalg.solve(eye[None] - gamma * p, r)
        out[lo:lo + chunk] = v[:, momdp.initial_state, :]
    return pols, out


def lex_optimal_policies(momdp: TabularMOMDP, tau, decimals: int = 9):
    """Deterministic policies whose start values are maximal under >=^tau.

    Uses the clip-then-lex characterization, with values rounded to
    ``decimals`` so solver noise does not split ties.
    """
    pols, vals = enumerate_policy_values(momdp)
    clipped = vals.copy()
    clipped[:, :-1] = np.minimum(clipped[:, :-1], np.asarray(tau, dtype=np.float64))
    keys = [tuple(row) for row in np.round(clipped, decimals)]
    best = max(keys)
    winners = np.array([key == best for key in keys])
    return pols[winners], vals
