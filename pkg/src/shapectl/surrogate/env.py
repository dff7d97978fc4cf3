"""First-order surrogate tokamak for shape-control training.

This is a declared stand-in for a free-boundary equilibrium simulator. What
matches the real training setup is the contract: observation layout, chopper
actuation through a patch panel, bus-voltage randomization, observation noise,
reward and termination. The physics underneath is linear:

    L dI/dt = P a V_bus - R I                  (coil circuits, explicit Euler)
    y_eq    = y_ref + M I                      (equilibrium shape response)
    tau_p dy/dt = y_eq - y                     (plasma shape lag), then clamped

Magnetics treat the plasma as one filament at the centroid (R_c, Z_c).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..dataset import DEFAULT_ENVELOPE, ShapeDataset, check_envelope, envelope_bounds
from ..geometry import N_GOAL, pivot_array
from ..obs import (
    N_COILS, NoiseSigmas, Observation, PrivilegedObservation, add_observation_noise,
)
from ..reward import RewardConfig, step_reward
from .magnetics import Magnetics, SensorLayout, make_layout


class EnvFault(RuntimeError):
    """Non-finite internal state. ``dump`` holds the offending state for diagnosis."""

    def __init__(self, msg, dump):
        super().__init__(msg)
        self.dump = dump


def default_patch_matrix(n_coils: int, n_act: int) -> np.ndarray:
    """Block patch panel: the first (n_coils - n_act) coil pairs each share one supply."""
    if not 1 <= n_act <= n_coils <= 2 * n_act:
        raise ValueError("need n_act <= n_coils <= 2 n_act for pairwise sharing")
    shared = n_coils - n_act
    P = np.zeros((n_coils, n_act))
    for k in range(shared):
        P[2 * k, k] = P[2 * k + 1, k] = 1.0
    for j, c in enumerate(range(2 * shared, n_coils)):
        P[c, shared + j] = 1.0
    return P


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 1e-3
    episode_len: int = 1000
    resample_period: int = 250
    geom_tol: float = 0.08
    reward_alpha: float = -5.0
    n_coils: int = 20
    n_act: int = 14
    bus_voltage: float = 500.0  # V, nominal
    bus_voltage_halfwidth: float = 50.0  # V, uniform per-episode randomization
    coil_resistance: float = 0.05  # ohm
    coil_inductance: float = 5e-4  # H
    tau_plasma: float = 0.01  # s
    ip_nominal: float = 1.0e6  # A
    ip_band: float = 0.1  # relative half-width of the per-episode I_p draw
    sigma_probe: float = 1e-5  # T
    sigma_loop: float = 1e-5  # Wb
    sigma_coil: float = 100.0  # A
    response_seed: int = 0
    response_gain: float = 0.12  # actuator fraction needed, on average, to reach the envelope edge
    layout_seed: int = 0
    patch_matrix: tuple | None = None  # n_coils x n_act, row-major nested tuples
    clamp_widen: float = 0.5  # valid box = envelope widened by this fraction of its half-width
    clamp_margin: float = 1e-3  # m

    def __post_init__(self):
        if self.episode_len < self.resample_period:
            raise ValueError("episode_len must be >= resample_period")
        if not self.tau_plasma > self.dt:
            raise ValueError("tau_plasma must exceed dt")
        if not 1 <= self.n_coils <= N_COILS:
            raise ValueError(f"n_coils must lie in [1, {N_COILS}]")
        if self.coil_inductance / self.coil_resistance < self.dt:
            raise ValueError("coil L/R must exceed dt")
        if self.patch_matrix is not None:
            P = np.asarray(self.patch_matrix, dtype=float)
            if P.shape != (self.n_coils, self.n_act):
                raise ValueError(f"patch_matrix must be {self.n_coils} x {self.n_act}")
            if np.linalg.matrix_rank(P) < self.n_act:
                raise ValueError("patch_matrix must have full column rank")
        else:
            default_patch_matrix(self.n_coils, self.n_act)

    @property
    def reward(self) -> RewardConfig:
        return RewardConfig(self.geom_tol, self.reward_alpha)

    @property
    def noise(self) -> NoiseSigmas:
        return NoiseSigmas(self.sigma_probe, self.sigma_loop, self.sigma_coil)

    def patch(self) -> np.ndarray:
        if self.patch_matrix is None:
            return default_patch_matrix(self.n_coils, self.n_act)
        return np.asarray(self.patch_matrix, dtype=float)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["patch_matrix"] is not None:
            d["patch_matrix"] = [list(r) for r in d["patch_matrix"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EnvConfig:
        d = dict(d)
        if d.get("patch_matrix") is not None:
            d["patch_matrix"] = tuple(tuple(float(x) for x in r) for r in d["patch_matrix"])
        return cls(**d)


DESK_ENV = EnvConfig(n_coils=8, n_act=6, response_gain=0.3)


@dataclass
class EnvState:
    coil_currents: np.ndarray  # (n_coils,) A
    shape: np.ndarray  # (11,) realized goal-space shape
    I_p: float
    target: np.ndarray  # (11,)
    step_index: int
    episode_start_dshape: float
    bus_voltage: float
    prev_static: np.ndarray  # previous privileged static block, for derivatives
    mask: object = None  # MaskSpec held for the episode (owned by the caller)

    def copy(self) -> EnvState:
        return EnvState(self.coil_currents.copy(), self.shape.copy(), self.I_p, self.target.copy(),
                        self.step_index, self.episode_start_dshape, self.bus_voltage,
                        self.prev_static.copy(), self.mask)


class SurrogateEnv:
    def __init__(self, cfg: EnvConfig = EnvConfig(), layout: SensorLayout | None = None,
                 envelope: dict | None = None):
        self.cfg = cfg
        self.layout = make_layout(cfg.layout_seed) if layout is None else layout
        self.magnetics = Magnetics(self.layout)
        lo, hi = envelope_bounds(envelope or DEFAULT_ENVELOPE)
        self.y_ref = (lo + hi) / 2
        half = (hi - lo) / 2
        widen = 1.0 + cfg.clamp_widen
        self.shape_lo = self.y_ref - widen * half
        self.shape_hi = self.y_ref + widen * half
        self.shape_lo[7:] = np.maximum(self.shape_lo[7:], -1.0)
        self.shape_hi[7:] = np.minimum(self.shape_hi[7:], 1.0)
        check_envelope(self.shape_lo, self.shape_hi)

        self.P = cfg.patch()
        self.R = cfg.coil_resistance
        self.L = cfg.coil_inductance
        # M scaled so that an actuator vector of magnitude ~response_gain spans the envelope half-width
        rng = np.random.default_rng(cfg.response_seed)
        G = rng.standard_normal((N_GOAL, cfg.n_coils)) / np.sqrt(cfg.n_coils)
        i_max = cfg.bus_voltage / self.R
        self.M = half[:, None] * G / (cfg.response_gain * i_max)
        # steady-state map from actuator commands to shape (per unit action at nominal bus)
        self.B_act = self.M @ self.P * (cfg.bus_voltage / self.R)

    # ------------------------------------------------------------------ helpers
    def controllability(self) -> float:
        """Smallest singular value of the row-normalized response matrix."""
        Mn = self.M / np.linalg.norm(self.M, axis=1, keepdims=True)
        return float(np.linalg.svd(Mn, compute_uv=False).min())

    def reachable_basis(self) -> np.ndarray:
        """(11, n_act) steady-state shape change per unit actuator command."""
        return self.B_act.copy()

    def clamp_shape(self, y) -> np.ndarray:
        m = self.cfg.clamp_margin
        lo, hi = self.shape_lo.copy(), self.shape_hi.copy()
        lo[:7] += m
        hi[:7] -= m
        return np.clip(y, lo, hi)

    def equilibrium_currents(self, shape) -> np.ndarray:
        """Least-squares steady-state currents that hold ``shape`` in equilibrium."""
        u, *_ = np.linalg.lstsq(self.M @ self.P / self.R, np.asarray(shape) - self.y_ref, rcond=None)
        return self.P @ u / self.R

    def full_currents(self, I) -> np.ndarray:
        out = np.zeros(N_COILS)
        out[: self.cfg.n_coils] = I
        return out

    def clean_observation(self, state: EnvState) -> Observation:
        I = self.full_currents(state.coil_currents)
        probes, loops = self.magnetics(I, (state.shape[0], state.shape[1], state.I_p))
        return Observation(probes, loops, I, state.I_p, state.target.copy())

    def shape_errors(self, state: EnvState):
        cur, tgt = pivot_array(np.stack([state.shape, state.target]))
        return (cur - tgt).ravel(), cur[0] - tgt[0]

    def _privileged(self, state: EnvState, clean: Observation, first: bool) -> PrivilegedObservation:
        dp, dx = self.shape_errors(state)
        static = np.concatenate([clean.vector(), dp, dx])
        if first:
            deriv = np.zeros_like(static)
        else:
            deriv = (static - state.prev_static) / self.cfg.dt
        state.prev_static = static
        return PrivilegedObservation(clean, dp, dx, deriv)

    def _check_finite(self, state: EnvState, what: str):
        for name in ("coil_currents", "shape"):
            if not np.all(np.isfinite(getattr(state, name))):
                raise EnvFault(f"non-finite {name} after {what}", {
                    "step_index": state.step_index, "coil_currents": state.coil_currents.tolist(),
                    "shape": state.shape.tolist(), "target": state.target.tolist(),
                    "bus_voltage": state.bus_voltage,
                })

    # ------------------------------------------------------------------ episode API
    def reset(self, dataset: ShapeDataset, rng, initial: int | None = None, target: int | None = None):
        """Start an episode. Returns (state, noisy observation, privileged observation)."""
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        n = len(dataset)
        if n == 0:
            raise ValueError("dataset is empty")
        i0 = int(rng.integers(n)) if initial is None else initial
        it = int(rng.integers(n)) if target is None else target
        g0 = dataset[i0].to_array()
        I0 = self.equilibrium_currents(g0)
        y0 = self.clamp_shape(self.y_ref + self.M @ I0)
        cfg = self.cfg
        bus = cfg.bus_voltage + rng.uniform(-cfg.bus_voltage_halfwidth, cfg.bus_voltage_halfwidth)
        ip = cfg.ip_nominal * (1.0 + rng.uniform(-cfg.ip_band, cfg.ip_band))
        state = EnvState(I0, y0, float(ip), dataset[it].to_array(), 0, 0.0, float(bus), np.zeros(0))
        _, d_shape, _ = self._reward(state)
        state.episode_start_dshape = d_shape
        clean = self.clean_observation(state)
        priv = self._privileged(state, clean, first=True)
        obs = add_observation_noise(clean, cfg.noise, rng, cfg.n_coils)
        return state, obs, priv

    def _reward(self, state: EnvState):
        cur, tgt = pivot_array(np.stack([state.shape, state.target]))
        return step_reward(cur, tgt, self.cfg.reward)

    def step(self, state: EnvState, action, rng: np.random.Generator, dataset: ShapeDataset | None = None):
        """Advance one control period.

        Returns (next_state, noisy observation, privileged observation, reward, done, info).
        ``info["terminated"]`` marks the shape-excursion failure; hitting the episode
        length sets ``info["truncated"]`` instead.
        """
        a = np.asarray(action, dtype=float)
        if a.shape != (self.cfg.n_act,):
            raise ValueError(f"action must have {self.cfg.n_act} components")
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite action")
        if np.any(np.abs(a) > 1.0):
            raise ValueError("action components must lie in [-1, 1]")
        cfg = self.cfg
        s = state.copy()
        V = self.P @ a * s.bus_voltage
        with np.errstate(invalid="ignore", over="ignore"):
            s.coil_currents = s.coil_currents + cfg.dt / self.L * (V - self.R * s.coil_currents)
            y_eq = self.y_ref + self.M @ s.coil_currents
            s.shape = self.clamp_shape(s.shape + cfg.dt / cfg.tau_plasma * (y_eq - s.shape))
        self._check_finite(s, "dynamics update")
        s.step_index += 1

        r, d_shape, d_xpt = self._reward(s)
        terminated = d_shape > s.episode_start_dshape + cfg.geom_tol
        truncated = (not terminated) and s.step_index >= cfg.episode_len
        done = terminated or truncated
        changed = False
        if not done and dataset is not None:
            old = s.target
            s = maybe_resample_target(s, dataset, rng, cfg.resample_period)
            changed = s.target is not old

        clean = self.clean_observation(s)
        priv = self._privileged(s, clean, first=False)
        obs = add_observation_noise(clean, cfg.noise, rng, cfg.n_coils)
        info = {"d_shape": d_shape, "d_xpt": d_xpt, "terminated": bool(terminated),
                "truncated": bool(truncated), "target_changed": changed}
        return s, obs, priv, r, bool(done), info


def maybe_resample_target(state: EnvState, dataset: ShapeDataset, rng: np.random.Generator,
                          resample_period: int) -> EnvState:
    """Draw a new target uniformly from the dataset at multiples of the resample period (not step 0)."""
    if state.step_index > 0 and state.step_index % resample_period == 0:
        state.target = dataset[int(rng.integers(len(dataset)))].to_array()
    return state
