"""Axisymmetric filament magnetics.

Every coil, the plasma and every sensor are treated as circular filaments
coaxial with the machine axis. The only Green's function is the mutual
inductance between two such filaments; probe fields are finite differences
of the flux it produces.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MU0 = 4e-7 * np.pi
AGM_TOL = 1e-12
PROBE_STENCIL = 1e-3  # m


def ellipke(m):
    """Complete elliptic integrals K(m), E(m) (parameter m = k^2) by AGM iteration."""
    m = np.asarray(m, dtype=float)
    if np.any((m < 0) | (m >= 1)):
        raise ValueError("elliptic parameter must lie in [0, 1)")
    a = np.ones_like(m)
    b = np.sqrt(1.0 - m)
    c = np.sqrt(m)
    # sum of 2^(n-1) c_n^2, starting with n = 0
    s = 0.5 * c * c
    power = 0.5
    for _ in range(64):
        a, b, c = 0.5 * (a + b), np.sqrt(a * b), 0.5 * (a - b)
        power *= 2.0
        s = s + power * c * c
        if np.all(np.abs(c) <= AGM_TOL * a):
            break
    K = np.pi / (2.0 * a)
    E = K * (1.0 - s)
    return K, E


def filament_flux(source, point):
    """Flux through the filament at ``point`` per ampere in the filament at ``source`` (Wb/A).

    Both arguments are (R, Z) pairs or arrays of shape (..., 2); they broadcast.
    """
    src = np.asarray(source, dtype=float)
    pt = np.asarray(point, dtype=float)
    r1, z1 = src[..., 0], src[..., 1]
    r2, z2 = pt[..., 0], pt[..., 1]
    if np.any(r1 <= 0) or np.any(r2 <= 0):
        raise ValueError("filament radius must be positive")
    dz = z1 - z2
    denom = (r1 + r2) ** 2 + dz**2
    if np.any((r1 == r2) & (dz == 0)):
        raise ZeroDivisionError("coincident filaments: mutual inductance is singular")
    m = 4.0 * r1 * r2 / denom
    k = np.sqrt(m)
    K, E = ellipke(m)
    out = MU0 * np.sqrt(r1 * r2) * ((2.0 / k - k) * K - (2.0 / k) * E)
    return float(out) if out.ndim == 0 else out


def flux_and_field(source, point, h=PROBE_STENCIL):
    """Flux per ampere and (B_R, B_Z) per ampere at ``point`` from filament ``source``.

    The field comes from central differences of the flux with stencil ``h``:
    B_R = -dpsi/dZ / (2 pi R), B_Z = dpsi/dR / (2 pi R).
    """
    pt = np.asarray(point, dtype=float)
    dR = np.array([h, 0.0])
    dZ = np.array([0.0, h])
    psi = filament_flux(source, pt)
    dpsi_dR = (filament_flux(source, pt + dR) - filament_flux(source, pt - dR)) / (2 * h)
    dpsi_dZ = (filament_flux(source, pt + dZ) - filament_flux(source, pt - dZ)) / (2 * h)
    two_pi_r = 2 * np.pi * pt[..., 0]
    return psi, -dpsi_dZ / two_pi_r, dpsi_dR / two_pi_r


@dataclass(frozen=True)
class SensorLayout:
    """Probe, loop and coil placement inside a rectangular vessel.

    probe_positions: (71, 3) of (R, Z, orientation angle in rad); the probe reads
    B_R cos(angle) + B_Z sin(angle).
    loop_positions: (43, 2). coil_positions: (20, 3) of (R, Z, turns).
    vessel: (R_min, R_max, Z_min, Z_max).
    """

    probe_positions: np.ndarray
    loop_positions: np.ndarray
    coil_positions: np.ndarray
    vessel: tuple

    N_PROBES = 71
    N_LOOPS = 43
    N_COILS = 20

    def __post_init__(self):
        for name, n, w in (("probe_positions", self.N_PROBES, 3), ("loop_positions", self.N_LOOPS, 2),
                           ("coil_positions", self.N_COILS, 3)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n, w):
                raise ValueError(f"{name} must have shape {(n, w)}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "vessel", tuple(float(v) for v in self.vessel))
        for name in ("probe_positions", "loop_positions", "coil_positions"):
            if not np.all(self.inside(getattr(self, name)[:, :2])):
                raise ValueError(f"{name} must lie inside or on the vessel boundary")

    def inside(self, rz) -> np.ndarray:
        rz = np.asarray(rz, dtype=float)
        r0, r1, z0, z1 = self.vessel
        return (rz[..., 0] >= r0) & (rz[..., 0] <= r1) & (rz[..., 1] >= z0) & (rz[..., 1] <= z1)

    def to_dict(self) -> dict:
        return {
            "probe_positions": self.probe_positions.tolist(),
            "loop_positions": self.loop_positions.tolist(),
            "coil_positions": self.coil_positions.tolist(),
            "vessel": list(self.vessel),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SensorLayout:
        return cls(np.array(d["probe_positions"]), np.array(d["loop_positions"]),
                   np.array(d["coil_positions"]), tuple(d["vessel"]))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path) -> SensorLayout:
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _perimeter_points(box, n, offset, jitter, rng):
    """n points spread along the perimeter of an (R0, R1, Z0, Z1) box, plus tangent angles."""
    r0, r1, z0, z1 = box
    w, h = r1 - r0, z1 - z0
    total = 2 * (w + h)
    s = (np.arange(n) + offset + jitter * rng.uniform(-0.5, 0.5, n)) / n * total
    s = np.mod(s, total)
    pts = np.empty((n, 2))
    ang = np.empty(n)
    for i, si in enumerate(s):
        if si < w:  # bottom edge, left to right
            pts[i] = (r0 + si, z0); ang[i] = 0.0
        elif si < w + h:  # outer edge, upward
            pts[i] = (r1, z0 + si - w); ang[i] = np.pi / 2
        elif si < 2 * w + h:  # top edge, right to left
            pts[i] = (r1 - (si - w - h), z1); ang[i] = np.pi
        else:  # inner edge, downward
            pts[i] = (r0, z1 - (si - 2 * w - h)); ang[i] = -np.pi / 2
    return pts, ang


def make_layout(seed: int = 0, vessel=(0.95, 2.45, -1.45, 1.45), inset: float = 0.1) -> SensorLayout:
    """Deterministic layout: coils on the vessel boundary, sensors on a box inset from it."""
    rng = np.random.default_rng(seed)
    r0, r1, z0, z1 = vessel
    wall = (r0 + inset, r1 - inset, z0 + inset, z1 - inset)
    probes, ang = _perimeter_points(wall, SensorLayout.N_PROBES, 0.25, 0.3, rng)
    loops, _ = _perimeter_points(wall, SensorLayout.N_LOOPS, 0.75, 0.3, rng)
    coils, _ = _perimeter_points(vessel, SensorLayout.N_COILS, 0.5, 0.2, rng)
    turns = rng.integers(20, 60, SensorLayout.N_COILS).astype(float)
    return SensorLayout(
        probe_positions=np.column_stack([probes, ang]),
        loop_positions=loops,
        coil_positions=np.column_stack([coils, turns]),
        vessel=vessel,
    )


class Magnetics:
    """Synthetic probe and loop signals for a layout.

    Coil contributions are fixed linear maps (precomputed once); the plasma
    filament moves with the centroid and is evaluated per call.
    """

    def __init__(self, layout: SensorLayout):
        self.layout = layout
        coils = layout.coil_positions
        probes = layout.probe_positions
        src = coils[None, :, :2]
        self.loop_gain = filament_flux(src, layout.loop_positions[:, None, :]) * coils[None, :, 2]
        _, br, bz = flux_and_field(src, probes[:, None, :2])
        cos, sin = np.cos(probes[:, 2])[:, None], np.sin(probes[:, 2])[:, None]
        self.probe_gain = (br * cos + bz * sin) * coils[None, :, 2]

    def plasma_response(self, R_c: float, Z_c: float):
        """Per-ampere (probes, loops) response to a plasma filament at the centroid."""
        if not (R_c > 0 and self.layout.inside((R_c, Z_c))):
            raise ValueError(f"plasma centroid ({R_c}, {Z_c}) outside vessel")
        src = np.array([R_c, Z_c])
        lay = self.layout
        loops = filament_flux(src, lay.loop_positions)
        _, br, bz = flux_and_field(src, lay.probe_positions[:, :2])
        probes = br * np.cos(lay.probe_positions[:, 2]) + bz * np.sin(lay.probe_positions[:, 2])
        return probes, loops

    def __call__(self, coil_currents, plasma):
        R_c, Z_c, I_p = plasma
        I = np.asarray(coil_currents, dtype=float)
        if I.shape != (self.layout.N_COILS,):
            raise ValueError(f"expected {self.layout.N_COILS} coil currents, got {I.shape}")
        pp, pl = self.plasma_response(R_c, Z_c)
        return self.probe_gain @ I + pp * I_p, self.loop_gain @ I + pl * I_p


def synth_diagnostics(coil_currents, plasma, layout: SensorLayout):
    """(probes [T], loops [Wb]) for 20 coil currents and a (R_c, Z_c, I_p) plasma filament."""
    return Magnetics(layout)(coil_currents, plasma)
