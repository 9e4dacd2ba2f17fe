"""Experiment runner: configs, per-seed execution, CSV artifacts.

Config files are INI with one section per module. Every key must be one
the experiment knows about; anything else is rejected so that a typo in a
sweep does not silently fall back to a default.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import augment as aug_mod
from .envs import (
    ENDPOINT_PRIMARY, FtnSpec, MazeParseError, builtin_mazes, builtin_maze, ftn_env, load_maze, maze_to_momdp,
)
from .lmdp import DEFAULT_HORIZON, TabularMOMDP
from .lpa import (
    BENCHMARK_THRESHOLD, BENCHMARK_X0, LpaAbort, LpaConfig, benchmark_problem, lpa_run,
    write_trace_csv,
)
from .reinforce import (
    ReinforceConfig, evaluate_policy, leaf_probability, network_from_dict, network_to_dict,
    reinforce_train, success_levels, write_rl_trace,
)
from .tlq import (
    ABS_SLACK, ABS_THRESHOLD, FILTER_KINDS, GABOR, LI, REL_SLACK, PARETO_CELLS, Filter, TlqConfig,
    evaluate_table_policy, greedy_path, greedy_policy, lex_optimal_policies, path_cells,
    tlq_value_iteration, train_tlq, write_tlq_log,
)

SUMMARY_TAG = "# lexrl summary v1"
WORKERS_ENV = "LEXRL_WORKERS"
POLICY_SCHEMA = "lexrl-policy/1"


class ConfigError(ValueError):
    """Bad experiment configuration (exit code 2)."""


class ExperimentAbort(RuntimeError):
    """A module aborted while running a seed (exit code 3)."""


# ---------------------------------------------------------------------------
# configuration

_MAZE = {"maze": "maze-small", "scheme": ENDPOINT_PRIMARY, "gamma": 0.99, "horizon": DEFAULT_HORIZON}

DEFAULTS = {
    "lpa-benchmark": {
        "lpa": {"delta_deg": 2.0, "step_size": 0.2, "threshold": BENCHMARK_THRESHOLD,
                "buffer": 0.01, "max_iters": 500, "x0": list(BENCHMARK_X0), "cross": -1.0},
    },
    "tlq-train": {
        "env": dict(_MAZE),
        "tlq": {"filter": ABS_THRESHOLD, "params": [0.9], "variant": LI, "lr": 0.1, "eps": 0.1,
                "episodes": 20000, "informed": False, "buffer": 0.0, "cyclic": False,
                "eval_episodes": 100},
    },
    "tlq-failure-scan": {
        "env": dict(_MAZE),
        "scan": {"points": 50, "tau_min": 0.0, "tau_max": 1.0, "log_min": -4.0, "log_max": 0.0},
    },
    "reinforce-path": {
        "env": {**_MAZE, "maze": "maze-extended", "scheme": "path", "gamma": 0.9},
        "reinforce": {"thresholds": [0.0], "success": [0.0, None], "avoid_bad": False,
                      "delta_deg": 2.0, "active_constraints": False, "buffer": 0.0,
                      "episodes": 4000, "lr": 1e-2, "batch": 1, "baseline": False,
                      "eval_episodes": 100},
    },
    "reinforce-endpoint": {
        "env": {**_MAZE, "maze": "maze-concave-simple"},
        "reinforce": {"thresholds": [0.5], "success": [0.5, None], "avoid_bad": True,
                      "delta_deg": 20.0, "active_constraints": False, "buffer": 0.0,
                      "episodes": 4000, "lr": 1e-2, "batch": 1, "baseline": False,
                      "eval_episodes": 100},
    },
    "ftn": {
        "ftn": {"depth": 5, "n_rewards": 6, "tree_seed": 0, "target_leaf": 13, "margin": 1e-3,
                "gamma": 0.99},
        "reinforce": {"deltas_deg": [0.0, 5.0, 20.0, 40.0], "active_constraints": True,
                      "buffer": 0.005, "episodes": 20000, "lr": 3e-2, "batch": 16, "baseline": True},
        "tlq": {"variant": LI, "lr": 0.1, "eps": 0.1, "episodes": 4000, "rescale_thresholds": False},
    },
    "augment-demo": {
        "env": {**_MAZE, "horizon": 20},
        "augment": {"layout": aug_mod.TERMINAL, "lam": 1.0, "threshold": 0.0, "pair_length": 8},
    },
}

EXPERIMENTS = tuple(DEFAULTS)


def _parse_value(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            if not raw:
                return []
            return [None if p.strip().lower() == "none" else float(p) for p in raw.split(",")]
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def load_config(experiment: str, path=None) -> dict:
    """Defaults for ``experiment`` overridden by the INI file at ``path``."""
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    cfg = {sec: dict(vals) for sec, vals in DEFAULTS[experiment].items()}
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for sec in parser.sections():
        if sec not in cfg:
            raise ConfigError(f"{path}: section [{sec}] is not used by {experiment}; "
                              f"known sections: {', '.join(cfg)}")
        for key, raw in parser.items(sec):
            if key not in cfg[sec]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]; "
                                  f"known keys: {', '.join(cfg[sec])}")
            cfg[sec][key] = _parse_value(raw, cfg[sec][key], f"{path} [{sec}] {key}")
    return cfg


def parse_seeds(text: str) -> list[int]:
    """``"0..9"`` (inclusive), ``"3"`` or ``"1,4,7"``."""
    seeds = []
    try:
        for part in text.split(","):
            part = part.strip()
            if ".." in part:
                lo, hi = part.split("..")
                lo, hi = int(lo), int(hi)
                if hi < lo:
                    raise ValueError
                seeds.extend(range(lo, hi + 1))
            elif part:
                seeds.append(int(part))
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}; use e.g. 0..9 or 1,2,5") from None
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


@dataclass
class ExperimentConfig:
    name: str
    params: dict
    seeds: list[int]
    out: Path
    extra: dict = field(default_factory=dict)


def make_config(name: str, config_path=None, seeds="0", out="results") -> ExperimentConfig:
    params = load_config(name, config_path)
    if "env" in params:
        _resolve_maze(params["env"]["maze"])
    seed_list = parse_seeds(seeds) if isinstance(seeds, str) else list(seeds)
    if not seed_list:
        raise ConfigError("seed list is empty")
    return ExperimentConfig(name, params, seed_list, Path(out))


def _resolve_maze(ref: str, **kw):
    if ref in builtin_mazes():
        return builtin_maze(ref, **kw)
    if not Path(ref).is_file():
        raise ConfigError(f"maze {ref!r} is neither a built-in maze nor an existing file")
    try:
        return load_maze(ref, **kw)
    except MazeParseError as exc:
        raise ConfigError(f"{ref}: {exc}") from None


def env_from_params(env: dict) -> TabularMOMDP:
    spec = _resolve_maze(env["maze"], scheme=env["scheme"])
    return maze_to_momdp(spec, env["gamma"])


# ---------------------------------------------------------------------------
# per-seed runners; each returns a list of summary rows and writes its own CSV


def _write_rows(path, tag, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(tag + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _run_lpa(params, seed, out):
    p = params["lpa"]
    problem = benchmark_problem(p["cross"])
    rows = []
    for ac in (False, True):
        cfg = LpaConfig([p["threshold"]], math.radians(p["delta_deg"]), p["step_size"], ac,
                        p["buffer"] if ac else 0.0, p["max_iters"])
        trace = lpa_run(problem, p["x0"], cfg)
        write_trace_csv(trace, out / f"lpa_seed{seed}_ac-{str(ac).lower()}.csv")
        f = trace.final_values
        rows.append([seed, str(ac).lower(), len(trace) - 1, trace.reason, float(f[0]), float(f[1])])
    return rows


LPA_SUMMARY = ["seed", "active_constraints", "iterations", "reason", "F1", "F2"]


def _tlq_filter(kind, params):
    if kind not in FILTER_KINDS:
        raise ConfigError(f"unknown filter {kind!r}; choose from {', '.join(FILTER_KINDS)}")
    return Filter(kind, tuple(params))


def _run_tlq(params, seed, out):
    m = env_from_params(params["env"])
    t = params["tlq"]
    filt = _tlq_filter(t["filter"], t["params"])
    cfg = TlqConfig(filt, t["variant"], t["lr"], t["eps"], t["episodes"], params["env"]["horizon"],
                    t["informed"], t["buffer"], t["cyclic"], t["eval_episodes"])
    res = train_tlq(m, cfg, seed)
    write_tlq_log(res, out / f"tlq_seed{seed}.csv")
    save_policy(out / f"policy_seed{seed}.json", {"kind": "table", "actions": res.policy.tolist()})
    rows = [[seed, res.goal_rate] + [float(v) for v in res.mean_returns]]
    _write_rows(out / f"eval_seed{seed}.csv", EVAL_TAG, _eval_header(params), rows)
    return rows


def scan_grid(scan: dict):
    """Filter settings scanned by the failure experiment."""
    taus = np.linspace(scan["tau_min"], scan["tau_max"], scan["points"])
    logs = np.logspace(scan["log_min"], scan["log_max"], scan["points"])
    grid = []
    for tau in taus:
        grid.append((GABOR, Filter(ABS_THRESHOLD, (float(tau),))))
        grid.append((LI, Filter(ABS_THRESHOLD, (float(tau),))))
    for v in logs:
        grid.append((LI, Filter(ABS_SLACK, (float(v),))))
        grid.append((LI, Filter(REL_SLACK, (float(v),))))
    return grid


def failure_scan(m: TabularMOMDP, scan: dict):
    """Rows ``(variant, filter, param, realizes_pareto)`` for every grid point."""
    rows = []
    for variant, filt in scan_grid(scan):
        q = tlq_value_iteration(m, filt, variant)
        cells = path_cells(m, greedy_path(m, greedy_policy(q, filt)))
        rows.append([variant, filt.kind, filt.params[0], int(cells == PARETO_CELLS)])
    return rows


def _run_scan(params, seed, out):
    m = env_from_params(params["env"])
    rows = failure_scan(m, params["scan"])
    _write_rows(out / f"scan_seed{seed}.csv", "# lexrl tlq-scan v1",
                ["variant", "filter", "param", "realizes_pareto"], rows)
    # cross-check: lex-optimal deterministic policies exist and all take the Pareto path
    r = m.meta.get("goal_reward", 1.0)
    tau = [r * m.gamma ** (len(PARETO_CELLS) - 2)]
    pols, _ = lex_optimal_policies(m, tau)
    pareto = sum(path_cells(m, greedy_path(m, p)) == PARETO_CELLS for p in pols)
    hits = sum(row[3] for row in rows)
    return [[seed, len(rows), hits, len(pols), pareto]]


SCAN_SUMMARY = ["seed", "configurations", "pareto_hits", "lex_optimal_policies", "lex_optimal_on_pareto_path"]


EVAL_TAG = "# lexrl eval v1"


def eval_seed(seed: int) -> int:
    """Evaluation rng seed, kept apart from the training seed."""
    return 10_000 + seed


def _reinforce_cfg(r, thresholds, delta_deg):
    return ReinforceConfig(
        thresholds=list(thresholds), delta=math.radians(delta_deg),
        active_constraints=r["active_constraints"], buffer=r["buffer"], episodes=r["episodes"],
        lr=r["lr"], batch=r["batch"], baseline=r["baseline"],
        success=r.get("success"),
    )


def _run_reinforce(params, seed, out):
    m = env_from_params(params["env"])
    r = params["reinforce"]
    cfg = _reinforce_cfg(r, r["thresholds"], r["delta_deg"])
    cfg.horizon = params["env"]["horizon"]
    res = reinforce_train(m, cfg, seed)
    write_rl_trace(res, out / f"rl_seed{seed}.csv", cfg.window)
    save_policy(out / f"policy_seed{seed}.json", {"kind": "network", "network": network_to_dict(res.net)})
    avoid = m.meta["bad_states"] if r["avoid_bad"] else None
    rate, means = evaluate_policy(res.net, m, success_levels(cfg, m.n_objectives), r["eval_episodes"],
                                  seed=eval_seed(seed), horizon=cfg.horizon, avoid_states=avoid)
    rows = [[seed, rate] + [float(v) for v in means]]
    _write_rows(out / f"eval_seed{seed}.csv", EVAL_TAG, _eval_header(params), rows)
    return rows


def ftn_setup(f: dict):
    spec = FtnSpec(f["depth"], f["n_rewards"], f["tree_seed"], f["target_leaf"], f["margin"])
    return spec, ftn_env(spec, f["gamma"])


def ftn_target_probability(net, spec: FtnSpec) -> float:
    acts = spec.leaf_path(spec.target_leaf)
    states = [0]
    for a in acts[:-1]:
        states.append(2 * states[-1] + 1 + a)
    return leaf_probability(net, states, acts)


def _run_ftn(params, seed, out):
    spec, m = ftn_setup(params["ftn"])
    r = params["reinforce"]
    rows = []
    for deg in r["deltas_deg"]:
        cfg = _reinforce_cfg({**r, "success": None}, spec.thresholds, deg)
        res = reinforce_train(m, cfg, seed)
        write_rl_trace(res, out / f"ftn_seed{seed}_delta{deg:g}.csv", cfg.window)
        rows.append([seed, "lpa", deg, ftn_target_probability(res.net, spec)])
    # TLQ baseline; thresholds meet discounted Q as-is unless rescaled (exact here,
    # every leaf sits at the same depth)
    t = params["tlq"]
    scale = m.gamma ** (spec.depth - 1) if t["rescale_thresholds"] else 1.0
    filt = Filter(ABS_THRESHOLD, tuple(float(v) * scale for v in spec.thresholds))
    tcfg = TlqConfig(filt, t["variant"], t["lr"], t["eps"], t["episodes"], spec.depth + 1)
    tres = train_tlq(m, tcfg, seed)
    reached = greedy_path(m, tres.policy)[-1] == spec.leaf_state(spec.target_leaf)
    rows.append([seed, "tlq", "", float(reached)])
    return rows


FTN_SUMMARY = ["seed", "method", "delta_deg", "target_leaf_probability"]


def augment_demo(params):
    env = params["env"]
    a = params["augment"]
    base, _ = aug_mod.maze_small_budget(env_from_params(env))
    aug = aug_mod.augment(base, [0], [a["threshold"]], 1, a["lam"], a["layout"], env["horizon"])
    _, pol = aug_mod.solve(aug)
    path = aug_mod.policy_rollout(aug, pol, env["horizon"])
    states = [k[0] for k in path]
    bad = set(base.meta["bad_states"])
    trajs = aug_mod.terminating_trajectories(base, a["pair_length"])
    frac, n_pairs, _ = aug_mod.ordering_agreement(aug, trajs)
    return {
        "augmented_states": aug.n_states,
        "reaches_goal": base.is_terminal(states[-1]),
        "bad_visits": sum(s in bad for s in states[1:]),
        "path": states,
        "trajectories": len(trajs),
        "pairs": n_pairs,
        "agreement": frac,
    }


def _run_augment(params, seed, out):
    d = augment_demo(params)
    _write_rows(out / f"augment_seed{seed}.csv", "# lexrl augment v1",
                ["step", "state"], list(enumerate(d["path"])))
    return [[seed, d["augmented_states"], int(d["reaches_goal"]), d["bad_visits"],
             d["trajectories"], d["pairs"], d["agreement"]]]


AUGMENT_SUMMARY = ["seed", "augmented_states", "reaches_goal", "bad_visits", "trajectories",
                   "pairs", "agreement"]


def _eval_header(params):
    k = 2
    return ["seed", "success_rate"] + [f"mean_return_{i + 1}" for i in range(k)]


RUNNERS = {
    "lpa-benchmark": (_run_lpa, lambda p: LPA_SUMMARY),
    "tlq-train": (_run_tlq, _eval_header),
    "tlq-failure-scan": (_run_scan, lambda p: SCAN_SUMMARY),
    "reinforce-path": (_run_reinforce, _eval_header),
    "reinforce-endpoint": (_run_reinforce, _eval_header),
    "ftn": (_run_ftn, lambda p: FTN_SUMMARY),
    "augment-demo": (_run_augment, lambda p: AUGMENT_SUMMARY),
}


def _run_seed(name, params, seed, out):
    runner, _ = RUNNERS[name]
    try:
        return runner(params, seed, out)
    except (LpaAbort, FloatingPointError, RuntimeError) as exc:
        raise ExperimentAbort(f"{name} seed {seed}: {exc}") from exc


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


@dataclass
class EvalReport:
    name: str
    header: list
    rows: list
    summary_path: Path
    errors: list = field(default_factory=list)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> EvalReport:
    """Run every seed, write per-seed CSVs and ``summary.csv``.

    Seeds that abort are reported in ``errors``; rows of the others are kept.
    """
    if cfg.name not in RUNNERS:
        raise ConfigError(f"unknown experiment {cfg.name!r}")
    cfg.out.mkdir(parents=True, exist_ok=True)
    workers = worker_count() if workers is None else workers
    results = {}
    errors = []
    if workers <= 1 or len(cfg.seeds) == 1:
        for seed in cfg.seeds:
            try:
                results[seed] = _run_seed(cfg.name, cfg.params, seed, cfg.out)
            except ExperimentAbort as exc:
                errors.append(str(exc))
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(cfg.seeds))) as pool:
            futs = {seed: pool.submit(_run_seed, cfg.name, cfg.params, seed, cfg.out) for seed in cfg.seeds}
            for seed, fut in futs.items():
                try:
                    results[seed] = fut.result()
                except ExperimentAbort as exc:
                    errors.append(str(exc))
    rows = [row for seed in cfg.seeds if seed in results for row in results[seed]]
    header = RUNNERS[cfg.name][1](cfg.params)
    path = cfg.out / "summary.csv"
    _write_rows(path, f"{SUMMARY_TAG} {cfg.name}", header, rows)
    return EvalReport(cfg.name, header, rows, path, errors)


def read_summary(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.reader(lines))


# ---------------------------------------------------------------------------
# saved policies


def save_policy(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump({"schema": POLICY_SCHEMA, **payload}, fh)


def load_policy(path) -> dict:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read policy {path}: {exc}") from None
    if d.get("schema") != POLICY_SCHEMA or d.get("kind") not in ("table", "network"):
        raise ConfigError(f"{path} is not a saved lexrl policy")
    return d


def evaluate(policy: dict, m: TabularMOMDP, levels, episodes: int = 100, seed: int = 0,
             horizon: int = DEFAULT_HORIZON, avoid_states=None):
    """Success rate and mean undiscounted returns of a saved policy.

    Table policies act greedily; network policies sample in eval mode.
    """
    levels = np.asarray([np.nan if v is None else v for v in levels], dtype=np.float64)
    if len(levels) != m.n_objectives:
        raise ConfigError(f"need {m.n_objectives} success levels, got {len(levels)}")
    if policy["kind"] == "network":
        net = network_from_dict(policy["network"])
        if (net.n_states, net.n_actions) != (m.n_states, m.n_actions):
            raise ConfigError("policy network does not match the environment's state/action counts")
        return evaluate_policy(net, m, levels, episodes, seed, horizon, avoid_states)
    acts = np.asarray(policy["actions"], dtype=int)
    if acts.shape != (m.n_states,) or acts.min() < 0 or acts.max() >= m.n_actions:
        raise ConfigError("table policy does not match the environment")
    return _table_success(acts, m, levels, episodes, seed, horizon, avoid_states)


def _table_success(acts, m, levels, episodes, seed, horizon, avoid_states):
    from .reinforce import satisfied

    rng = np.random.default_rng(seed)
    avoid = set(avoid_states or ())
    wins = 0
    acc = np.zeros(m.n_objectives)
    for _ in range(episodes):
        s = m.initial_state
        tot = np.zeros(m.n_objectives)
        done = m.is_terminal(s)
        clean = True
        t = 0
        while not done and t < horizon:
            s, r, done = m.step(s, int(acts[s]), rng)
            tot += r
            clean = clean and s not in avoid
            t += 1
        acc += tot
        wins += bool(satisfied(tot, levels).all() and clean)
    return wins / episodes, acc / episodes
