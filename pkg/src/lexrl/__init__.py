"""Thresholded lexicographic multi-objective RL: cone projections, the
lexicographic projection optimizer, TLQ, lexicographic REINFORCE and
budget-augmented MDPs."""

from .cone import Hypercone, angle_between, cone_contains, project_cone, project_halfspace
from .lmdp import Ordering, TabularMOMDP, lex_compare, satisfied_prefix, value_iteration
from .lpa import LpaConfig, find_direction, lpa_run

__all__ = [
    "Hypercone", "angle_between", "cone_contains", "project_cone", "project_halfspace",
    "Ordering", "TabularMOMDP", "lex_compare", "satisfied_prefix", "value_iteration",
    "LpaConfig", "find_direction", "lpa_run",
]

__version__ = "0.1.0"
