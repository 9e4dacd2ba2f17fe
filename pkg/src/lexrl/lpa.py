"""Lexicographic Projection Algorithm (LPA).

``find_direction`` picks the first objective still below its threshold and
projects its gradient, one cone at a time, onto the hypercones of the
gradients of every more important objective. ``lpa_run`` plugs that
direction into plain fixed-step gradient ascent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cone import EPS_ANGLE, Hypercone, angle_between, project_cone

ZERO_NORM = 1e-12

REASON_MAX_ITERS = "max_iters"
REASON_STATIONARY = "delta_pareto_stationary"


@dataclass
class LpaConfig:
    thresholds: Sequence[float]
    delta: float = math.pi / 90
    step_size: float = 0.2
    active_constraints: bool = False
    buffer: float = 0.0
    max_iters: int = 500

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64).reshape(-1)
        if not 0.0 <= self.delta < math.pi / 2:
            raise ValueError(f"delta must lie in [0, pi/2), got {self.delta}")
        if self.buffer < 0:
            raise ValueError("buffer must be non-negative")
        if self.step_size <= 0:
            raise ValueError("step size must be positive")


def _exempt(j, k, f_vals, cfg) -> bool:
    # active-constraints heuristic: objective j is comfortably above its threshold
    return (
        cfg.active_constraints
        and j < k - 1
        and f_vals[j] > cfg.thresholds[j] + cfg.buffer
    )


def _inside(u, axis, half_angle, eps) -> bool:
    if np.linalg.norm(axis) < ZERO_NORM:
        # a vanishing gradient exerts no first-order constraint
        return True
    return angle_between(u, axis) <= half_angle + eps


def find_direction(grads, f_vals, cfg: LpaConfig, eps: float = EPS_ANGLE):
    """Lexicographic constrained ascent direction, or ``None``.

    ``grads`` is a sequence of K gradient vectors (ascent orientation) and
    ``f_vals`` the K current objective values. ``None`` means the point is
    Delta-Pareto-stationary for the active prefix of objectives (or the
    direction degenerated to zero).
    """
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    f_vals = np.asarray(f_vals, dtype=np.float64)
    k = len(grads)
    if len(f_vals) != k or len(cfg.thresholds) != k - 1:
        raise ValueError(
            f"inconsistent sizes: {k} gradients, {len(f_vals)} values, {len(cfg.thresholds)} thresholds"
        )
    half_angle = math.pi / 2 - cfg.delta

    o = k - 1
    for j in range(k - 1):
        if f_vals[j] < cfg.thresholds[j]:
            o = j
            break

    u = grads[o].copy()
    if np.linalg.norm(u) < ZERO_NORM:
        return None
    for j in range(o):
        axis = grads[j]
        if _exempt(j, k, f_vals, cfg) or np.linalg.norm(axis) < ZERO_NORM:
            continue
        if np.linalg.norm(u) < ZERO_NORM:
            return None
        if angle_between(u, axis) < half_angle:
            continue
        u = project_cone(u, Hypercone(axis, cfg.delta), eps)

    if np.linalg.norm(u) < ZERO_NORM:
        return None
    for j in range(o + 1):
        if _exempt(j, k, f_vals, cfg):
            continue
        if not _inside(u, grads[j], half_angle, eps):
            return None
    return u


# ---------------------------------------------------------------------------
# optimization problems


@dataclass
class ObjectiveProblem:
    """K scalar objectives with analytic gradients."""

    functions: list[Callable[[np.ndarray], float]]
    gradients: list[Callable[[np.ndarray], np.ndarray]]
    smoothness: list[float] | None = None
    names: list[str] | None = None

    @property
    def n_objectives(self) -> int:
        return len(self.functions)

    def values(self, x) -> np.ndarray:
        return np.array([f(x) for f in self.functions], dtype=np.float64)

    def grads(self, x) -> list[np.ndarray]:
        return [np.asarray(g(x), dtype=np.float64) for g in self.gradients]


def benchmark_problem(cross: float = -1.0) -> ObjectiveProblem:
    """Two concave quadratics; the first is thresholded at -0.5 by convention.

    ``F1 = -4x^2 - y^2 + cross*x*y`` and ``F2 = -(x-1)^2 - (y-0.5)^2``.
    The default ``cross=-1`` is the sign under which the reference final
    values are reachable; ``cross=+1`` gives the literal printed formula.
    """
    if abs(cross) >= 4.0:
        raise ValueError("|cross| must stay below 4 for F1 to be concave")

    def f1(p):
        x, y = p
        return -4.0 * x * x - y * y + cross * x * y

    def g1(p):
        x, y = p
        return np.array([-8.0 * x + cross * y, -2.0 * y + cross * x])

    def f2(p):
        x, y = p
        return -((x - 1.0) ** 2) - (y - 0.5) ** 2

    def g2(p):
        x, y = p
        return np.array([-2.0 * (x - 1.0), -2.0 * (y - 0.5)])

    # largest Hessian eigenvalue magnitudes
    l1 = float(np.max(np.abs(np.linalg.eigvalsh(np.array([[-8.0, cross], [cross, -2.0]])))))
    return ObjectiveProblem([f1, f2], [g1, g2], smoothness=[l1, 2.0], names=["F1", "F2"])


BENCHMARK_THRESHOLD = -0.5
BENCHMARK_X0 = (-1.3, -0.2)


def quadratic_problem(hessians, centers, offsets=None) -> ObjectiveProblem:
    """Concave quadratics ``F_i(x) = c_i - 0.5 (x - m_i)^T H_i (x - m_i)``.

    Each ``H_i`` must be symmetric positive semi-definite.
    """
    hessians = [np.asarray(h, dtype=np.float64) for h in hessians]
    centers = [np.asarray(m, dtype=np.float64) for m in centers]
    if offsets is None:
        offsets = [0.0] * len(hessians)
    funcs, grads, ls = [], [], []
    for h, m, c in zip(hessians, centers, offsets):
        funcs.append(lambda x, h=h, m=m, c=c: float(c - 0.5 * (x - m) @ h @ (x - m)))
        grads.append(lambda x, h=h, m=m: -h @ (x - m))
        ls.append(float(np.max(np.linalg.eigvalsh(h))))
    return ObjectiveProblem(funcs, grads, smoothness=ls)


# ---------------------------------------------------------------------------
# ascent loop


class LpaAbort(RuntimeError):
    pass


@dataclass
class Trace:
    xs: list[np.ndarray] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)
    directions: list[np.ndarray | None] = field(default_factory=list)
    reason: str = REASON_MAX_ITERS

    @property
    def final_x(self) -> np.ndarray:
        return self.xs[-1]

    @property
    def final_values(self) -> np.ndarray:
        return self.values[-1]

    def __len__(self):
        return len(self.xs)


def lpa_run(
    problem: ObjectiveProblem,
    x0,
    cfg: LpaConfig,
    step_size_fn: Callable[[np.ndarray, list, np.ndarray], float] | None = None,
) -> Trace:
    """Fixed-step ascent ``x <- x + alpha d`` along ``find_direction``.

    The trace holds one row per visited point; the last row carries no
    direction. ``step_size_fn(x, grads, values)`` may override ``alpha``
    per step.
    """
    x = np.array(x0, dtype=np.float64)
    trace = Trace()
    for it in range(cfg.max_iters + 1):
        vals = problem.values(x)
        grads = problem.grads(x)
        if not np.all(np.isfinite(vals)) or not all(np.all(np.isfinite(g)) for g in grads):
            raise LpaAbort(f"non-finite objective or gradient at iteration {it}, x={x.tolist()}")
        trace.xs.append(x.copy())
        trace.values.append(vals)
        if it == cfg.max_iters:
            trace.directions.append(None)
            trace.reason = REASON_MAX_ITERS
            break
        d = find_direction(grads, vals, cfg)
        trace.directions.append(d)
        if d is None:
            trace.reason = REASON_STATIONARY
            break
        alpha = cfg.step_size if step_size_fn is None else step_size_fn(x, grads, vals)
        x = x + alpha * d
    return trace


TRACE_HEADER_TAG = "# lexrl lpa-trace v1"


def write_trace_csv(trace: Trace, path) -> None:
    n = len(trace.xs[0])
    k = len(trace.values[0])
    with open(path, "w", newline="") as fh:
        fh.write(TRACE_HEADER_TAG + "\n")
        w = csv.writer(fh)
        w.writerow(["iter"] + [f"x{i + 1}" for i in range(n)] + [f"F{i + 1}" for i in range(k)] + ["dir_norm", "reason"])
        last = len(trace.xs) - 1
        for it, (x, vals, d) in enumerate(zip(trace.xs, trace.values, trace.directions)):
            dn = "" if d is None else repr(float(np.linalg.norm(d)))
            reason = trace.reason if it == last else ""
            w.writerow([it] + [repr(float(v)) for v in x] + [repr(float(v)) for v in vals] + [dn, reason])
