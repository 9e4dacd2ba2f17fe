"""Hypercone geometry: angles, membership and closed-form projection.

A hypercone with axis ``a`` and conservativeness ``delta`` holds every
vector making an angle of at most ``pi/2 - delta`` with ``a`` (plus the
zero vector). ``delta = 0`` gives the positive halfspace of ``a``.
"""

from dataclasses import dataclass

import numpy as np

# slack on every angle comparison; projections land exactly on the boundary
EPS_ANGLE = 1e-7


@dataclass(frozen=True)
class Hypercone:
    axis: np.ndarray
    delta: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=np.float64)
        if axis.ndim != 1 or not np.all(np.isfinite(axis)):
            raise ValueError("cone axis must be a finite 1-d vector")
        if np.linalg.norm(axis) == 0.0:
            raise ValueError("cone axis must be nonzero")
        if not 0.0 <= self.delta < np.pi / 2:
            raise ValueError(f"delta must lie in [0, pi/2), got {self.delta}")
        object.__setattr__(self, "axis", axis)

    @property
    def half_angle(self) -> float:
        return np.pi / 2 - self.delta


def angle_between(u, v) -> float:
    """Smaller angle between ``u`` and ``v`` in radians, in ``[0, pi]``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("angle is undefined for a zero-norm vector")
    c = float(np.dot(u, v) / (nu * nv))
    return float(np.arccos(min(1.0, max(-1.0, c))))


def cone_contains(x, cone: Hypercone, eps: float = EPS_ANGLE) -> bool:
    x = np.asarray(x, dtype=np.float64)
    if np.linalg.norm(x) == 0.0:
        return True
    return angle_between(x, cone.axis) <= cone.half_angle + eps


def project_cone(g, cone: Hypercone, eps: float = EPS_ANGLE) -> np.ndarray:
    """Euclidean projection of ``g`` onto ``cone``.

    Vectors already inside are returned unchanged. Vectors in the polar
    region (angle to the axis at least ``pi - delta``) map to the apex,
    i.e. the zero vector. Everything else lands on the cone boundary via

        g_p = cos(D)/sin(phi) * sin(D + phi) * (g + a |g|/|a| (sin(phi) tan(D) - cos(phi)))

    with ``phi`` the angle between ``g`` and the axis.
    """
    g = np.asarray(g, dtype=np.float64)
    if np.linalg.norm(g) == 0.0:
        return np.zeros_like(g)
    if cone_contains(g, cone, eps):
        return g.copy()

    a = cone.axis
    delta = cone.delta
    phi = angle_between(g, a)
    if phi >= np.pi - delta:
        return np.zeros_like(g)

    ng = np.linalg.norm(g)
    na = np.linalg.norm(a)
    sin_phi = np.sin(phi)
    direction = g + a * (ng / na) * (sin_phi * np.tan(delta) - np.cos(phi))
    return (np.cos(delta) / sin_phi) * np.sin(delta + phi) * direction


def project_halfspace(g, axis) -> np.ndarray:
    """Projection onto the positive halfspace ``{x : <x, axis> >= 0}``."""
    g = np.asarray(g, dtype=np.float64)
    axis = np.asarray(axis, dtype=np.float64)
    dot = float(np.dot(g, axis))
    if dot >= 0.0:
        return g.copy()
    return g - (dot / float(np.dot(axis, axis))) * axis
