"""Lexicographic REINFORCE with a small numpy policy network.

Per episode, one score-function gradient per objective is formed from the
return-to-go of that objective; ``find_direction`` merges them and Adam
takes a step along the result.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .lmdp import DEFAULT_HORIZON, TabularMOMDP
from .lpa import LpaConfig, find_direction

HIDDEN = 128
DROPOUT = 0.6
TEMPERATURE = 10.0


class PolicyNetwork:
    """one-hot(state) -> 128 ReLU -> dropout -> |A| logits -> softmax(logits / T).

    Parameters live in one flat vector so optimizers and direction finding
    operate on a single array; ``W1, b1, W2, b2`` are views into it.
    Dropout is inverted: kept units are scaled by ``1 / (1 - p)`` in
    training so evaluation needs no rescaling.
    """

    def __init__(self, n_states: int, n_actions: int, rng: np.random.Generator | None = None,
                 hidden: int = HIDDEN, dropout: float = DROPOUT, temperature: float = TEMPERATURE,
                 zero: bool = False):
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.n_states = n_states
        self.n_actions = n_actions
        self.hidden = hidden
        self.dropout = dropout
        self.temperature = temperature
        self.training = True
        sizes = [hidden * n_states, hidden, n_actions * hidden, n_actions]
        self.theta = np.zeros(sum(sizes))
        offs = np.cumsum([0] + sizes)
        self._slices = [slice(offs[i], offs[i + 1]) for i in range(4)]
        self.W1 = self.theta[self._slices[0]].reshape(hidden, n_states)
        self.b1 = self.theta[self._slices[1]]
        self.W2 = self.theta[self._slices[2]].reshape(n_actions, hidden)
        self.b2 = self.theta[self._slices[3]]
        if not zero:
            if rng is None:
                raise ValueError("random initialization needs an rng")
            # uniform in +-1/sqrt(fan_in)
            k1 = 1.0 / math.sqrt(n_states)
            k2 = 1.0 / math.sqrt(hidden)
            self.W1[:] = rng.uniform(-k1, k1, self.W1.shape)
            self.b1[:] = rng.uniform(-k1, k1, self.b1.shape)
            self.W2[:] = rng.uniform(-k2, k2, self.W2.shape)
            self.b2[:] = rng.uniform(-k2, k2, self.b2.shape)

    @property
    def n_params(self) -> int:
        return len(self.theta)

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def sample_mask(self, rng) -> np.ndarray:
        if not self.training or self.dropout == 0.0:
            return np.ones(self.hidden)
        return (rng.random(self.hidden) >= self.dropout) / (1.0 - self.dropout)

    def forward(self, state: int, mask=None):
        """Returns ``(probs, cache)``; ``mask=None`` means no dropout."""
        pre = self.W1[:, state] + self.b1
        h = np.maximum(pre, 0.0)
        hd = h if mask is None else h * mask
        z = (self.W2 @ hd + self.b2) / self.temperature
        z = z - z.max()
        e = np.exp(z)
        probs = e / e.sum()
        return probs, (pre, hd, mask)

    def probs(self, state: int, rng=None) -> np.ndarray:
        mask = self.sample_mask(rng) if self.training and self.dropout > 0.0 else None
        return self.forward(state, mask)[0]

    def all_probs(self) -> np.ndarray:
        """Eval-mode action probabilities for every state, shape ``(S, A)``."""
        h = np.maximum(self.W1 + self.b1[:, None], 0.0)
        z = (self.W2 @ h + self.b2[:, None]).T / self.temperature
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def grad_logprob(self, state: int, action: int, mask=None) -> np.ndarray:
        """Gradient of ``ln pi(action | state)`` for a fixed dropout mask."""
        probs, (pre, hd, m) = self.forward(state, mask)
        dz = -probs
        dz[action] += 1.0
        dz /= self.temperature
        g = np.zeros_like(self.theta)
        gW1 = g[self._slices[0]].reshape(self.hidden, self.n_states)
        dhd = self.W2.T @ dz
        dpre = dhd * (pre > 0.0)
        if m is not None:
            dpre = dpre * m
        gW1[:, state] = dpre
        g[self._slices[1]] = dpre
        g[self._slices[2]] = np.outer(dz, hd).ravel()
        g[self._slices[3]] = dz
        return g

    def weighted_score(self, states, actions, masks, weights) -> np.ndarray:
        """``sum_t w_t grad ln pi(a_t|s_t)`` for each weight row; ``weights`` is ``(K, T)``."""
        states = np.asarray(states, dtype=int)
        actions = np.asarray(actions, dtype=int)
        weights = np.atleast_2d(weights)
        t = len(states)
        pre = self.W1[:, states].T + self.b1  # (T, H)
        h = np.maximum(pre, 0.0)
        hd = h * masks if masks is not None else h
        z = (hd @ self.W2.T + self.b2) / self.temperature
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        dz = -probs
        dz[np.arange(t), actions] += 1.0
        dz /= self.temperature  # (T, A)
        dpre = (dz @ self.W2) * (pre > 0.0)
        if masks is not None:
            dpre *= masks
        onehot = np.zeros((t, self.n_states))
        onehot[np.arange(t), states] = 1.0
        out = np.zeros((len(weights), self.n_params))
        for k, w in enumerate(weights):
            wd = dpre * w[:, None]
            out[k, self._slices[0]] = (wd.T @ onehot).ravel()
            out[k, self._slices[1]] = wd.sum(axis=0)
            wz = dz * w[:, None]
            out[k, self._slices[2]] = (wz.T @ hd).ravel()
            out[k, self._slices[3]] = wz.sum(axis=0)
        return out


class Adam:
    """Adam on a flat parameter vector, minimizing."""

    def __init__(self, n: int, lr: float = 1e-2, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * grad
        self.v = self.b2 * self.v + (1.0 - self.b2) * grad * grad
        m_hat = self.m / (1.0 - self.b1**self.t)
        v_hat = self.v / (1.0 - self.b2**self.t)
        theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Episode:
    states: list
    actions: list
    rewards: np.ndarray
    masks: np.ndarray | None
    terminated: bool


def run_episode(net: PolicyNetwork, momdp: TabularMOMDP, rng: np.random.Generator,
                horizon: int = DEFAULT_HORIZON) -> Episode:
    """Sample one episode, recording the dropout mask used at every step."""
    s = momdp.initial_state
    states, actions, rewards, masks = [], [], [], []
    done = momdp.is_terminal(s)
    use_mask = net.training and net.dropout > 0.0
    while not done and len(actions) < horizon:
        mask = net.sample_mask(rng) if use_mask else None
        probs, _ = net.forward(s, mask)
        a = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
        a = min(a, net.n_actions - 1)
        s2, r, done = momdp.step(s, a, rng)
        states.append(s)
        actions.append(a)
        rewards.append(r)
        if use_mask:
            masks.append(mask)
        s = s2
    r = np.array(rewards, dtype=np.float64).reshape(len(rewards), momdp.n_objectives)
    return Episode(states, actions, r, np.array(masks) if use_mask else None, done)


def returns_to_go(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """``out[t] = sum_{k >= t} gamma^(k-t) r[k]`` per objective, shape ``(T, K)``."""
    out = np.zeros_like(rewards)
    g = np.zeros(rewards.shape[1])
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


@dataclass
class EpisodeGradients:
    grads: np.ndarray  # (K, P) ascent directions
    totals: np.ndarray  # (K,) undiscounted reward sums
    returns: np.ndarray  # (T, K) discounted returns-to-go


def episode_gradients(net: PolicyNetwork, ep: Episode, gamma: float,
                      baseline: np.ndarray | None = None) -> EpisodeGradients:
    """Ascent gradient per objective, ``sum_t grad ln pi(A_t|S_t) * G_{t+1}``.

    Rewards are indexed from 1 as in ``S_0, A_0, R_1, ...``, so the return
    paired with step ``t`` is the one starting at ``R_{t+1}``. An optional
    ``baseline`` of shape ``(>= T, K)`` is subtracted from the returns.
    """
    k = ep.rewards.shape[1]
    totals = ep.rewards.sum(axis=0) if len(ep.rewards) else np.zeros(k)
    if len(ep.actions) == 0:
        return EpisodeGradients(np.zeros((k, net.n_params)), totals, ep.rewards.copy())
    g = returns_to_go(ep.rewards, gamma)
    w = g if baseline is None else g - baseline[: len(g)]
    grads = net.weighted_score(ep.states, ep.actions, ep.masks, w.T)
    return EpisodeGradients(grads, totals, g)


def leave_one_out_baselines(returns: list[np.ndarray]) -> list[np.ndarray]:
    """Per-step mean return-to-go of the *other* episodes in a batch.

    Independent of the episode's own actions, so the gradient stays unbiased.
    Steps reached by no other episode get a zero baseline.
    """
    k = returns[0].shape[1]
    t_max = max(len(g) for g in returns)
    total = np.zeros((t_max, k))
    count = np.zeros(t_max)
    for g in returns:
        total[: len(g)] += g
        count[: len(g)] += 1
    out = []
    for g in returns:
        own = np.zeros((t_max, k))
        own[: len(g)] = g
        mine = np.zeros(t_max)
        mine[: len(g)] = 1
        others = count - mine
        with np.errstate(invalid="ignore", divide="ignore"):
            b = np.where(others[:, None] > 0, (total - own) / others[:, None], 0.0)
        out.append(b)
    return out


@dataclass
class ReinforceConfig:
    thresholds: list = field(default_factory=list)
    delta: float = math.pi / 90
    active_constraints: bool = False
    buffer: float = 0.0
    episodes: int = 4000
    lr: float = 1e-2
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    gamma: float | None = None
    horizon: int = DEFAULT_HORIZON
    batch: int = 1
    baseline: bool = False  # leave-one-out baseline across the batch
    success: list | None = None
    window: int = 100

    def lpa(self) -> LpaConfig:
        return LpaConfig(self.thresholds, self.delta, 1.0, self.active_constraints, self.buffer)


@dataclass
class TrainResult:
    net: PolicyNetwork
    sat: np.ndarray  # (E, K) per-episode satisfaction flags
    joint: np.ndarray  # (E,) per-episode success flags
    dir_norm: np.ndarray
    skipped: np.ndarray
    totals: np.ndarray  # (E, K)

    def rolling(self, window: int = 100):
        """Sliding-window rates: per objective ``(E, K)`` and joint ``(E,)``."""
        def roll(x):
            c = np.cumsum(np.r_[np.zeros((1,) + x.shape[1:]), x], axis=0)
            idx = np.arange(1, len(x) + 1)
            lo = np.maximum(idx - window, 0)
            n = (idx - lo).reshape((-1,) + (1,) * (x.ndim - 1))
            return (c[idx] - c[lo]) / n
        return roll(self.sat.astype(float)), roll(self.joint.astype(float))


def success_levels(cfg: ReinforceConfig, k: int) -> np.ndarray:
    """Per-objective success levels; NaN entries are not checked."""
    if cfg.success is not None:
        lv = np.array([np.nan if v is None else v for v in cfg.success], dtype=np.float64)
    else:
        lv = np.r_[np.asarray(cfg.thresholds, dtype=np.float64), np.nan]
    if len(lv) != k:
        raise ValueError(f"need {k} success levels, got {len(lv)}")
    return lv


def satisfied(totals, levels) -> np.ndarray:
    totals = np.asarray(totals, dtype=np.float64)
    return np.isnan(levels) | (totals >= np.nan_to_num(levels, nan=0.0))


def reinforce_train(momdp: TabularMOMDP, cfg: ReinforceConfig, seed: int = 0,
                    net: PolicyNetwork | None = None) -> TrainResult:
    """Lexicographic REINFORCE; with ``batch > 1`` gradients and totals are averaged."""
    k = momdp.n_objectives
    if len(cfg.thresholds) != k - 1:
        raise ValueError(f"expected {k - 1} thresholds, got {len(cfg.thresholds)}")
    rng = np.random.default_rng(seed)
    if net is None:
        net = PolicyNetwork(momdp.n_states, momdp.n_actions, rng)
    net.train()
    opt = Adam(net.n_params, cfg.lr, cfg.betas, cfg.adam_eps)
    gamma = momdp.gamma if cfg.gamma is None else cfg.gamma
    lpa_cfg = cfg.lpa()
    levels = success_levels(cfg, k)
    n_up = math.ceil(cfg.episodes / cfg.batch)
    sat = np.zeros((cfg.episodes, k), dtype=bool)
    totals = np.zeros((cfg.episodes, k))
    dir_norm = np.zeros(n_up)
    skipped = np.zeros(n_up, dtype=bool)
    e = 0
    for u in range(n_up):
        grads = np.zeros((k, net.n_params))
        f = np.zeros(k)
        nb = min(cfg.batch, cfg.episodes - e)
        eps = [run_episode(net, momdp, rng, cfg.horizon) for _ in range(nb)]
        bases = [None] * nb
        if cfg.baseline and nb > 1:
            rets = [returns_to_go(ep.rewards, gamma) if ep.actions else np.zeros((1, k)) for ep in eps]
            bases = leave_one_out_baselines(rets)
        for ep, base in zip(eps, bases):
            eg = episode_gradients(net, ep, gamma, base)
            grads += eg.grads
            f += eg.totals
            totals[e] = eg.totals
            sat[e] = satisfied(eg.totals, levels)
            e += 1
        grads /= nb
        f /= nb
        d = find_direction(list(grads), f, lpa_cfg)
        if d is None:
            skipped[u] = True
            continue
        dir_norm[u] = float(np.linalg.norm(d))
        opt.step(net.theta, -d)
        if not np.all(np.isfinite(net.theta)):
            raise FloatingPointError(f"non-finite parameters after update {u} (seed {seed})")
    joint = sat.all(axis=1)
    if cfg.batch > 1:
        dir_norm = np.repeat(dir_norm, cfg.batch)[: cfg.episodes]
        skipped = np.repeat(skipped, cfg.batch)[: cfg.episodes]
    return TrainResult(net.eval(), sat, joint, dir_norm, skipped, totals)


def vanilla_reinforce(momdp: TabularMOMDP, episodes: int, seed: int = 0, lr: float = 1e-2,
                      gamma: float | None = None, horizon: int = DEFAULT_HORIZON) -> PolicyNetwork:
    """Single-objective REINFORCE with Adam on ``L = -sum ln pi(A_t|S_t) G_{t+1}``."""
    if momdp.n_objectives != 1:
        raise ValueError("vanilla REINFORCE takes a single objective")
    rng = np.random.default_rng(seed)
    net = PolicyNetwork(momdp.n_states, momdp.n_actions, rng).train()
    opt = Adam(net.n_params, lr)
    gamma = momdp.gamma if gamma is None else gamma
    for _ in range(episodes):
        ep = run_episode(net, momdp, rng, horizon)
        if not ep.actions:
            continue
        g = returns_to_go(ep.rewards, gamma)[:, 0]
        loss_grad = -net.weighted_score(ep.states, ep.actions, ep.masks, g[None, :])[0]
        opt.step(net.theta, loss_grad)
    return net.eval()


# ---------------------------------------------------------------------------
# evaluation


def evaluate_policy(net: PolicyNetwork, momdp: TabularMOMDP, levels, episodes: int = 100,
                    seed: int = 0, horizon: int = DEFAULT_HORIZON, avoid_states=None):
    """Success rate and mean undiscounted totals of the eval-mode stochastic policy.

    An episode succeeds when every non-NaN entry of ``levels`` is met and,
    if ``avoid_states`` is given, none of those states is visited.
    """
    rng = np.random.default_rng(seed)
    was = net.training
    net.eval()
    probs = net.all_probs()
    cdf = np.cumsum(probs, axis=1)
    avoid = set(avoid_states or ())
    levels = np.asarray(levels, dtype=np.float64)
    wins = 0
    acc = np.zeros(momdp.n_objectives)
    for _ in range(episodes):
        s = momdp.initial_state
        tot = np.zeros(momdp.n_objectives)
        done = momdp.is_terminal(s)
        clean = True
        t = 0
        while not done and t < horizon:
            a = min(int(np.searchsorted(cdf[s], rng.random() * cdf[s, -1], side="right")), momdp.n_actions - 1)
            s, r, done = momdp.step(s, a, rng)
            tot += r
            clean = clean and s not in avoid
            t += 1
        acc += tot
        wins += bool(satisfied(tot, levels).all() and clean)
    net.training = was
    return wins / episodes, acc / episodes


def leaf_probability(net: PolicyNetwork, path_states, path_actions) -> float:
    """Exact eval-mode probability of following a fixed action path."""
    p = net.all_probs()
    return float(np.prod([p[s, a] for s, a in zip(path_states, path_actions)]))


RL_TRACE_TAG = "# lexrl rl-trace v1"


def write_rl_trace(result: TrainResult, path, window: int = 100) -> None:
    sat, joint = result.rolling(window)
    k = sat.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write(RL_TRACE_TAG + "\n")
        w = csv.writer(fh)
        w.writerow(["episode"] + [f"sat_{i + 1}" for i in range(k)] + ["joint", "dir_norm", "skipped"])
        for e in range(len(joint)):
            w.writerow([e + 1] + [repr(float(v)) for v in sat[e]]
                       + [repr(float(joint[e])), repr(float(result.dir_norm[e])), int(result.skipped[e])])


NETWORK_SCHEMA = "lexrl-network/1"


def network_to_dict(net: PolicyNetwork) -> dict:
    return {
        "schema": NETWORK_SCHEMA,
        "n_states": net.n_states,
        "n_actions": net.n_actions,
        "hidden": net.hidden,
        "dropout": net.dropout,
        "temperature": net.temperature,
        "theta": [float(v) for v in net.theta],
    }


def network_from_dict(d: dict) -> PolicyNetwork:
    if d.get("schema") != NETWORK_SCHEMA:
        raise ValueError(f"expected schema {NETWORK_SCHEMA!r}, got {d.get('schema')!r}")
    net = PolicyNetwork(d["n_states"], d["n_actions"], hidden=d["hidden"], dropout=d["dropout"],
                        temperature=d["temperature"], zero=True)
    theta = np.asarray(d["theta"], dtype=np.float64)
    if theta.shape != net.theta.shape:
        raise ValueError(f"parameter vector has {theta.size} entries, expected {net.n_params}")
    net.theta[:] = theta
    return net.eval()
