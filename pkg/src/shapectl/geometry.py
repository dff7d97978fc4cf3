"""Shape goals, pivot points and the distances built on them.

A shape goal is the 11-parameter description of a lower-single-null boundary.
It is turned into eight labelled boundary points (the pivot set) which every
reward, termination and curation rule compares by index.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

GOAL_FIELDS = (
    "R_c", "Z_c", "a", "z_max", "delta_u", "R_x", "Z_x",
    "xi_TI", "xi_TO", "xi_BI", "xi_BO",
)
N_GOAL = len(GOAL_FIELDS)

PIVOT_ROLES = (
    "x-point",
    "bottom-inner squareness",
    "inner midplane",
    "top-inner squareness",
    "topmost",
    "top-outer squareness",
    "outer midplane",
    "bottom-outer squareness",
)
N_PIVOTS = len(PIVOT_ROLES)

# minimum centroid-to-x-point separation (m)
MIN_XPOINT_GAP = 1e-3


class ShapeValidationError(ValueError):
    """Raised when a shape goal violates one of its invariants."""


@dataclass(frozen=True)
class ShapeGoal:
    R_c: float
    Z_c: float
    a: float
    z_max: float
    delta_u: float
    R_x: float
    Z_x: float
    xi_TI: float
    xi_TO: float
    xi_BI: float
    xi_BO: float

    def __post_init__(self):
        validate_goal_vector(np.asarray(astuple(self), dtype=float))

    def to_array(self) -> np.ndarray:
        return np.asarray(astuple(self), dtype=float)

    def to_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_array(cls, values) -> ShapeGoal:
        values = np.asarray(values, dtype=float)
        if values.shape != (N_GOAL,):
            raise ShapeValidationError(f"expected {N_GOAL} goal values, got shape {values.shape}")
        return cls(*(float(v) for v in values))

    @classmethod
    def from_dict(cls, data: dict) -> ShapeGoal:
        missing = [k for k in GOAL_FIELDS if k not in data]
        extra = [k for k in data if k not in GOAL_FIELDS]
        if missing or extra:
            raise ShapeValidationError(f"bad goal keys: missing={missing} unknown={extra}")
        return cls(**{k: float(data[k]) for k in GOAL_FIELDS})


def goal_violations(g) -> list[str]:
    """Names of the invariants violated by a raw 11-vector (empty if valid)."""
    R_c, Z_c, a, z_max, _, _, Z_x, *xis = (float(v) for v in g)
    out = []
    if not np.all(np.isfinite(np.asarray(g, dtype=float))):
        return ["all parameters finite"]
    if not a > 0:
        out.append("a > 0")
    if not R_c - a > 0:
        out.append("R_c - a > 0")
    if not z_max > Z_c:
        out.append("z_max > Z_c")
    if not Z_c - Z_x >= MIN_XPOINT_GAP:
        out.append("Z_c - Z_x >= 1 mm")
    for name, xi in zip(GOAL_FIELDS[7:], xis):
        if not -1.0 <= xi <= 1.0:
            out.append(f"{name} in [-1, 1]")
    return out


def validate_goal_vector(g) -> None:
    bad = goal_violations(g)
    if bad:
        raise ShapeValidationError("invalid shape goal, violated: " + "; ".join(bad))


@dataclass(frozen=True)
class PivotSet:
    """Eight (R, Z) points in role order (see ``PIVOT_ROLES``)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape != (N_PIVOTS, 2):
            raise ValueError(f"PivotSet needs an 8x2 array, got {pts.shape}")
        object.__setattr__(self, "points", pts)

    def __getitem__(self, i):
        return self.points[i]

    def to_list(self) -> list[list[float]]:
        return self.points.tolist()


def pivot_array(goals) -> np.ndarray:
    """Vectorized pivot construction: (..., 11) goal vectors -> (..., 8, 2).

    No validation; callers that accept external input go through
    :func:`pivot_points`.
    """
    g = np.asarray(goals, dtype=float)
    R_c, Z_c, a, z_max, d_u, R_x, Z_x, xi_ti, xi_to, xi_bi, xi_bo = np.moveaxis(g, -1, 0)
    r_min = R_c - a
    r_max = R_c + a
    p5_r = R_c - a * d_u

    p1 = np.stack([R_x, Z_x], -1)
    p3 = np.stack([r_min, Z_c], -1)
    p5 = np.stack([p5_r, z_max], -1)
    p7 = np.stack([r_max, Z_c], -1)
    TI = np.stack([r_min, z_max], -1)
    TO = np.stack([r_max, z_max], -1)
    BI = np.stack([r_min, Z_x], -1)
    BO = np.stack([r_max, Z_x], -1)
    lower_anchor = np.stack([R_x, Z_c], -1)
    upper_anchor = np.stack([p5_r, Z_c], -1)

    p2 = (p1 + p3) / 2 + (BI - lower_anchor) / 2 * xi_bi[..., None]
    p4 = (p5 + p3) / 2 + (TI - upper_anchor) / 2 * xi_ti[..., None]
    p6 = (p5 + p7) / 2 + (TO - upper_anchor) / 2 * xi_to[..., None]
    p8 = (p1 + p7) / 2 + (BO - lower_anchor) / 2 * xi_bo[..., None]
    return np.stack([p1, p2, p3, p4, p5, p6, p7, p8], -2)


def pivot_points(goal: ShapeGoal | np.ndarray) -> PivotSet:
    if isinstance(goal, ShapeGoal):
        g = goal.to_array()
    else:
        g = np.asarray(goal, dtype=float)
        validate_goal_vector(g)
    return PivotSet(pivot_array(g))


def _pts(p):
    return p.points if isinstance(p, PivotSet) else np.asarray(p, dtype=float)


def mean_pivot_distance(p, q):
    """Mean Euclidean distance over index-paired pivots.

    Accepts PivotSets or arrays of shape (..., 8, 2); broadcasts over leading axes.
    """
    d = np.linalg.norm(_pts(p) - _pts(q), axis=-1)
    out = d.mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def xpoint_distance(p, q):
    d = np.linalg.norm(_pts(p)[..., 0, :] - _pts(q)[..., 0, :], axis=-1)
    return float(d) if np.ndim(d) == 0 else d
