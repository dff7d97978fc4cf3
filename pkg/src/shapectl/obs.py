"""Observation layout, running standardization, noise and diagnostic dropout.

Actor inputs go through noise -> standardize -> mask, in that order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import GOAL_FIELDS, N_GOAL, N_PIVOTS

N_PROBES, N_LOOPS, N_COILS = 71, 43, 20
N_MASKABLE = N_PROBES + N_LOOPS
OBS_DIM = N_PROBES + N_LOOPS + N_COILS + 1 + N_GOAL  # 146

PROBES = slice(0, N_PROBES)
LOOPS = slice(N_PROBES, N_MASKABLE)
COILS = slice(N_MASKABLE, N_MASKABLE + N_COILS)
IP = slice(N_MASKABLE + N_COILS, N_MASKABLE + N_COILS + 1)
GOAL = slice(OBS_DIM - N_GOAL, OBS_DIM)

CHANNEL_TYPES = np.array(
    ["probe"] * N_PROBES + ["loop"] * N_LOOPS + ["coil"] * N_COILS + ["ip"] + ["goal"] * N_GOAL
)
CHANNEL_LABELS = (
    [f"probes_{i}" for i in range(N_PROBES)]
    + [f"loops_{i}" for i in range(N_LOOPS)]
    + [f"coil_{i}" for i in range(N_COILS)]
    + ["I_p"]
    + [f"goal_{name}" for name in GOAL_FIELDS]
)

N_DELTA_P = 2 * N_PIVOTS  # 16
PRIV_BASE_DIM = OBS_DIM + N_DELTA_P + 2  # observation + signed pivot and x-point errors
PRIV_DIM = 2 * PRIV_BASE_DIM  # plus time derivatives of all of it

STD_FLOOR = 1e-6


@dataclass
class Observation:
    probes: np.ndarray
    loops: np.ndarray
    coil_currents: np.ndarray
    I_p: float
    goal: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.probes, self.loops, self.coil_currents, [self.I_p], self.goal])

    @classmethod
    def from_vector(cls, v) -> Observation:
        v = np.asarray(v, dtype=float)
        if v.shape != (OBS_DIM,):
            raise ValueError(f"observation must have {OBS_DIM} channels, got {v.shape}")
        return cls(v[PROBES].copy(), v[LOOPS].copy(), v[COILS].copy(), float(v[IP][0]), v[GOAL].copy())


@dataclass
class PrivilegedObservation:
    """Critic-only view: noise-free observation, signed shape errors, and their time derivatives."""

    base: Observation
    delta_p: np.ndarray
    delta_x: np.ndarray
    derivatives: np.ndarray

    def static(self) -> np.ndarray:
        return np.concatenate([self.base.vector(), self.delta_p, self.delta_x])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.static(), self.derivatives])


@dataclass
class Normalizer:
    """Per-channel Welford statistics that stop updating after ``freeze_threshold`` samples."""

    dim: int
    freeze_threshold: int = 150_000
    count: int = 0
    mean: np.ndarray = None
    m2: np.ndarray = None
    frozen: bool = False

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.m2 is None:
            self.m2 = np.zeros(self.dim)

    @property
    def var(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros(self.dim)
        return self.m2 / (self.count - 1)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    def update(self, x) -> Normalizer:
        if self.frozen:
            return self
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} channels, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite observation passed to normalizer")
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)
        if self.count >= self.freeze_threshold:
            self.frozen = True
        return self

    def standardize(self, x) -> np.ndarray:
        """(x - mean) / max(std, 1e-6); before two samples the std is taken as 1."""
        x = np.asarray(x, dtype=float)
        if self.count < 2:
            return x - self.mean
        return (x - self.mean) / np.maximum(self.std, STD_FLOOR)

    def state_dict(self) -> dict:
        return {"dim": self.dim, "freeze_threshold": self.freeze_threshold, "count": self.count,
                "frozen": self.frozen}

    def copy(self) -> Normalizer:
        return Normalizer(self.dim, self.freeze_threshold, self.count, self.mean.copy(), self.m2.copy(),
                          self.frozen)


def normalizer_update(norm: Normalizer, obs) -> Normalizer:
    return norm.update(obs.vector() if isinstance(obs, Observation) else obs)


def standardize(norm: Normalizer, obs) -> np.ndarray:
    return norm.standardize(obs.vector() if isinstance(obs, Observation) else obs)


@dataclass(frozen=True)
class MaskSpec:
    """Per-episode availability of the 114 maskable channels (True = available)."""

    probe_mask: np.ndarray
    loop_mask: np.ndarray
    dropout_p: float = 0.0

    def __post_init__(self):
        pm = np.asarray(self.probe_mask, dtype=bool)
        lm = np.asarray(self.loop_mask, dtype=bool)
        if pm.shape != (N_PROBES,) or lm.shape != (N_LOOPS,):
            raise ValueError("mask must cover 71 probes and 43 loops")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        object.__setattr__(self, "probe_mask", pm)
        object.__setattr__(self, "loop_mask", lm)

    @property
    def maskable(self) -> np.ndarray:
        return np.concatenate([self.probe_mask, self.loop_mask])

    @property
    def masked_fraction(self) -> float:
        return 1.0 - self.maskable.mean()

    @classmethod
    def full(cls, dropout_p: float = 0.0) -> MaskSpec:
        return cls(np.ones(N_PROBES, bool), np.ones(N_LOOPS, bool), dropout_p)

    @classmethod
    def from_maskable(cls, avail, dropout_p: float = 0.0) -> MaskSpec:
        avail = np.asarray(avail, dtype=bool)
        return cls(avail[:N_PROBES], avail[N_PROBES:], dropout_p)

    def to_dict(self) -> dict:
        return {"probe_mask": self.probe_mask.astype(int).tolist(),
                "loop_mask": self.loop_mask.astype(int).tolist(),
                "dropout_p": self.dropout_p}

    @classmethod
    def from_dict(cls, d: dict) -> MaskSpec:
        return cls(np.array(d["probe_mask"], bool), np.array(d["loop_mask"], bool), float(d.get("dropout_p", 0.0)))


def sample_mask(p: float, rng: np.random.Generator) -> MaskSpec:
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    keep = rng.random(N_MASKABLE) >= p
    return MaskSpec.from_maskable(keep, p)


def mask_gain(mask: MaskSpec) -> np.ndarray:
    """Multiplier applied to a standardized 146-vector by :func:`apply_mask`."""
    gain = np.ones(OBS_DIM)
    gain[:N_MASKABLE] = mask.maskable / (1.0 - mask.dropout_p)
    return gain


def apply_mask(std_obs, mask: MaskSpec) -> np.ndarray:
    """Zero masked probe/loop channels and rescale survivors by 1/(1-p).

    Works on a single vector or a batch (..., 146).
    """
    return np.asarray(std_obs, dtype=float) * mask_gain(mask)


@dataclass(frozen=True)
class NoiseSigmas:
    probe: float = 1e-5  # T
    loop: float = 1e-5  # Wb
    coil: float = 100.0  # A


def add_observation_noise(obs: Observation, sigmas: NoiseSigmas, rng: np.random.Generator,
                          n_coils: int = N_COILS) -> Observation:
    """Gaussian noise on probes, loops and the first ``n_coils`` coil currents.

    I_p and the goal are passed through untouched; unpowered coil slots stay exactly 0.
    """
    if min(sigmas.probe, sigmas.loop, sigmas.coil) < 0:
        raise ValueError("noise sigma must be non-negative")
    coils = obs.coil_currents.copy()
    coils[:n_coils] += sigmas.coil * rng.standard_normal(n_coils)
    return Observation(
        probes=obs.probes + sigmas.probe * rng.standard_normal(N_PROBES),
        loops=obs.loops + sigmas.loop * rng.standard_normal(N_LOOPS),
        coil_currents=coils,
        I_p=obs.I_p,
        goal=obs.goal.copy(),
    )
