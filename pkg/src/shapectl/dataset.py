"""Synthetic shape corpus and greedy diversity curation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import GOAL_FIELDS, N_GOAL, ShapeGoal, goal_violations, mean_pivot_distance, pivot_array

# per-parameter (low, high) ranges of the synthetic lower-single-null envelope
DEFAULT_ENVELOPE = {
    "R_c": (1.62, 1.82),
    "Z_c": (-0.10, 0.15),
    "a": (0.52, 0.66),
    "z_max": (0.75, 1.25),
    "delta_u": (0.0, 0.8),
    "R_x": (1.20, 1.60),
    "Z_x": (-1.35, -1.00),
    "xi_TI": (-0.4, 0.4),
    "xi_TO": (-0.4, 0.4),
    "xi_BI": (-0.4, 0.4),
    "xi_BO": (-0.4, 0.4),
}

# random-walk step (fraction of each half-width) and corpus length that give ~120 shapes at 8 cm
DEFAULT_WALK_STEP = 0.055
DEFAULT_CORPUS_SIZE = 5000


def envelope_bounds(envelope: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    env = DEFAULT_ENVELOPE if envelope is None else envelope
    unknown = set(env) - set(GOAL_FIELDS)
    if unknown or len(env) != N_GOAL:
        raise ValueError(f"envelope must give a range for each of {GOAL_FIELDS}")
    lo = np.array([env[k][0] for k in GOAL_FIELDS], dtype=float)
    hi = np.array([env[k][1] for k in GOAL_FIELDS], dtype=float)
    if np.any(hi < lo):
        raise ValueError("envelope ranges must have low <= high")
    return lo, hi


def check_envelope(lo, hi) -> None:
    """Raise unless every point of the box [lo, hi] is a valid goal.

    The invariants are monotone in each parameter, so the worst corners decide.
    """
    worst = []
    R_c, Z_c, a, z_max, Z_x = 0, 1, 2, 3, 6
    if not lo[a] > 0:
        worst.append("a > 0")
    if not lo[R_c] - hi[a] > 0:
        worst.append("R_c - a > 0")
    if not lo[z_max] > hi[Z_c]:
        worst.append("z_max > Z_c")
    if not lo[Z_c] - hi[Z_x] >= 1e-3:
        worst.append("Z_c - Z_x >= 1 mm")
    if np.any(lo[7:] < -1) or np.any(hi[7:] > 1):
        worst.append("squareness in [-1, 1]")
    if worst:
        raise ValueError("envelope incompatible with shape invariants: " + "; ".join(worst))


def _reflect(x):
    """Fold values back into [-1, 1]."""
    x = np.mod(x + 1.0, 4.0)
    return np.where(x > 2.0, 4.0 - x, x) - 1.0


def generate_corpus(n: int, seed: int, envelope: dict | None = None, walk_step: float = DEFAULT_WALK_STEP,
                    basis=None, origin=None, max_tries: int = 1000) -> list[ShapeGoal]:
    """Chronologically correlated shapes from a reflected random walk through the envelope.

    Without ``basis`` the walk runs in normalized per-parameter coordinates. With
    ``basis`` (11 x q) the walk runs in q latent coordinates in [-1, 1] and shapes
    are ``origin + basis @ z``; steps that leave the envelope are redrawn. The
    latent form restricts the corpus to an affine subspace, e.g. the shapes an
    actuator set can reach.
    """
    if n < 1:
        raise ValueError("corpus size must be >= 1")
    lo, hi = envelope_bounds(envelope)
    check_envelope(lo, hi)
    rng = np.random.default_rng(seed)
    center, half = (lo + hi) / 2, (hi - lo) / 2

    if basis is None:
        to_shape = lambda z: center + half * z
        dim = N_GOAL
    else:
        basis = np.asarray(basis, dtype=float)
        base = center if origin is None else np.asarray(origin, dtype=float)
        to_shape = lambda z: base + basis @ z
        dim = basis.shape[1]

    def ok(z):
        g = to_shape(z)
        return bool(np.all(g >= lo - 1e-12) and np.all(g <= hi + 1e-12) and not goal_violations(g))

    z = np.zeros(dim)
    if not ok(z):
        for _ in range(max_tries):
            z = rng.uniform(-1, 1, dim)
            if ok(z):
                break
        else:
            raise ValueError("could not find a valid starting shape inside the envelope")

    out = []
    for _ in range(n):
        for _ in range(max_tries):
            cand = _reflect(z + walk_step * rng.standard_normal(dim))
            if ok(cand):
                z = cand
                break
        else:
            raise RuntimeError("random walk stuck: no valid step found")
        out.append(ShapeGoal.from_array(np.clip(to_shape(z), lo, hi)))
    return out


@dataclass
class ShapeDataset:
    shapes: list
    provenance: dict = field(default_factory=dict)
    indices: list | None = None  # positions in the source corpus, when curated

    def __post_init__(self):
        if len(self.shapes) < 1:
            raise ValueError("dataset must contain at least one shape")

    def __len__(self):
        return len(self.shapes)

    def __getitem__(self, i) -> ShapeGoal:
        return self.shapes[i]

    def array(self) -> np.ndarray:
        return np.stack([s.to_array() for s in self.shapes])

    def extremes(self) -> dict[str, int]:
        """Indices of the four boundary configurations: min/max z_max and min/max R_x."""
        arr = self.array()
        zi, ri = GOAL_FIELDS.index("z_max"), GOAL_FIELDS.index("R_x")
        return {
            "min_z_max": int(np.argmin(arr[:, zi])),
            "max_z_max": int(np.argmax(arr[:, zi])),
            "min_R_x": int(np.argmin(arr[:, ri])),
            "max_R_x": int(np.argmax(arr[:, ri])),
        }

    def to_json(self) -> str:
        doc = {"provenance": self.provenance, "indices": self.indices,
               "shapes": [s.to_dict() for s in self.shapes]}
        return json.dumps(doc, indent=1, sort_keys=False)

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> ShapeDataset:
        doc = json.loads(text)
        if isinstance(doc, list):
            doc = {"shapes": doc}
        return cls([ShapeGoal.from_dict(d) for d in doc["shapes"]], doc.get("provenance", {}), doc.get("indices"))

    @classmethod
    def load(cls, path) -> ShapeDataset:
        with open(path) as f:
            return cls.from_json(f.read())


def greedy_select(corpus, threshold: float = 0.08, provenance: dict | None = None) -> ShapeDataset:
    """Keep a shape when its mean pivot distance to the last kept shape exceeds ``threshold``."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    pivots = pivot_array(np.stack([s.to_array() for s in corpus]))
    keep = [0]
    last = pivots[0]
    for i in range(1, len(corpus)):
        if mean_pivot_distance(pivots[i], last) > threshold:
            keep.append(i)
            last = pivots[i]
    prov = dict(provenance or {})
    prov["threshold"] = threshold
    prov["corpus_size"] = len(corpus)
    return ShapeDataset([corpus[i] for i in keep], prov, keep)
