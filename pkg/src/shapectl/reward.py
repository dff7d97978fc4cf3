"""Per-step shape-tracking reward."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import mean_pivot_distance, xpoint_distance


@dataclass(frozen=True)
class RewardConfig:
    geom_tol: float = 0.08
    alpha: float = -5.0

    def __post_init__(self):
        if not self.geom_tol > 0:
            raise ValueError("geom_tol must be > 0")
        if not self.alpha < 0:
            raise ValueError("alpha must be < 0 (soft-minimum regime)")


def phi(d, geom_tol: float = 0.08):
    """Squash a distance into (0, 1]: 1 at d=0, 0.1 at d=geom_tol."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    out = 2.0 / (1.0 + 19.0 ** (d / geom_tol))
    return float(out) if out.ndim == 0 else out


def combine(r_lcfs, r_xpt, alpha: float = -5.0):
    """Softmax-weighted average of the two components (soft minimum for alpha < 0)."""
    r1 = np.asarray(r_lcfs, dtype=float)
    r2 = np.asarray(r_xpt, dtype=float)
    e1 = alpha * r1
    e2 = alpha * r2
    top = np.maximum(e1, e2)
    w1 = np.exp(e1 - top)
    w2 = np.exp(e2 - top)
    out = (r1 * w1 + r2 * w2) / (w1 + w2)
    return float(out) if out.ndim == 0 else out


def step_reward(current, target, cfg: RewardConfig = RewardConfig()):
    """Returns (reward, d_shape, d_xpt) for a pair of pivot sets."""
    d_shape = mean_pivot_distance(current, target)
    d_xpt = xpoint_distance(current, target)
    r = combine(phi(d_shape, cfg.geom_tol), phi(d_xpt, cfg.geom_tol), cfg.alpha)
    return r, d_shape, d_xpt
