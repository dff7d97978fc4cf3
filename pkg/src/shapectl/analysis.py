"""Evaluation harness and interpretability studies: gradient sensitivity of the
auxiliary head, proportional top-K sensor subsets, rank stability and the
dropout-rate sweep."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .neural import backward, forward
from .obs import (
    CHANNEL_LABELS, CHANNEL_TYPES, N_LOOPS, N_MASKABLE, N_PROBES, OBS_DIM, MaskSpec, mask_gain,
)
from .tqc import TQCAgent, load_checkpoint

SWEEP_K = (11, 23, 37, 58, 80, 114)
SETTLE_TIME = 0.05  # s excluded after each target change
DEPLOYMENT_DISABLED = 33  # of 114 maskable channels
TOP_SUBSET = 60
EVAL_COLUMNS = ["shape", "episodes", "d_shape_m", "d_xpt_m", "reward", "eplen", "terminated",
                "aux_sq_err", "zero_sq_err"]


# --- sensitivity ---------------------------------------------------------------

@dataclass
class SensitivityReport:
    scores: np.ndarray
    n_states: int
    labels: tuple = tuple(CHANNEL_LABELS)
    types: tuple = tuple(CHANNEL_TYPES)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.shape != (OBS_DIM,):
            raise ValueError(f"sensitivity report needs {OBS_DIM} channel scores")
        if np.any(self.scores < 0):
            raise ValueError("sensitivity scores must be non-negative")

    def ranking(self) -> np.ndarray:
        """Channel indices, most sensitive first; ties go to the lower index."""
        return np.lexsort((np.arange(OBS_DIM), -self.scores))

    def to_csv(self, path) -> None:
        order = self.ranking()
        rank = np.empty(OBS_DIM, dtype=int)
        rank[order] = np.arange(1, OBS_DIM + 1)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["channel", "label", "type", "score", "rank"])
            for i in range(OBS_DIM):
                w.writerow([i, self.labels[i], self.types[i], repr(float(self.scores[i])), int(rank[i])])

    @classmethod
    def from_csv(cls, path) -> SensitivityReport:
        with open(path) as f:
            rows = list(csv.DictReader(f))
        return cls(np.array([float(r["score"]) for r in rows]), 0)


def aux_jacobian(agent: TQCAgent, inputs) -> np.ndarray:
    """d(aux prediction)/d(actor input) for a batch of standardized inputs: (N, 16, 146)."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    out, cache = forward(agent.actor, x)
    zeros = np.zeros_like(out)
    W = agent.aux_head.weights[0]  # (hidden, 16)
    jac = np.empty((x.shape[0], W.shape[1], x.shape[1]))
    for k in range(W.shape[1]):
        gp = np.broadcast_to(W[:, k], cache.penultimate.shape)
        _, gin = backward(agent.actor, cache, zeros, grad_penultimate=gp, need_params=False)
        jac[:, k, :] = gin
    return jac


def gradient_sensitivity(agent: TQCAgent, eval_inputs) -> SensitivityReport:
    """s_i = mean over states of the Euclidean norm of the 16 aux partials at channel i."""
    x = np.atleast_2d(np.asarray(eval_inputs, dtype=float))
    if x.shape[1] != OBS_DIM:
        raise ValueError(f"evaluation states must have {OBS_DIM} channels")
    total = np.zeros(OBS_DIM)
    for start in range(0, x.shape[0], 512):
        jac = aux_jacobian(agent, x[start:start + 512])
        total += np.sqrt(np.sum(jac * jac, axis=1)).sum(axis=0)
    return SensitivityReport(total / x.shape[0], x.shape[0])


# --- sensor subsets --------------------------------------------------------------

def proportional_counts(K: int) -> tuple[int, int]:
    """Probe and loop counts for K sensors: probes rounded first, loops take the rest."""
    if not 1 <= K <= N_MASKABLE:
        raise ValueError(f"K must lie in [1, {N_MASKABLE}]")
    n_probes = min(N_PROBES, int(math.floor(N_PROBES * K / N_MASKABLE + 0.5)))
    n_loops = K - n_probes
    if n_loops > N_LOOPS:
        n_probes, n_loops = K - N_LOOPS, N_LOOPS
    return n_probes, n_loops


def percent_to_k(percent: float) -> int:
    """Sensor count for keeping ``percent`` of each type (per-type rounding)."""
    if not 0.0 < percent <= 100.0:
        raise ValueError("percentage must lie in (0, 100]")
    f = percent / 100.0
    return int(math.floor(N_PROBES * f + 0.5)) + int(math.floor(N_LOOPS * f + 0.5))


def _top(scores, n):
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    keep = np.zeros(len(scores), dtype=bool)
    keep[order[:n]] = True
    return keep


def topk_proportional(report: SensitivityReport, K: int, dropout_p: float = 0.0) -> MaskSpec:
    """Keep the highest-scoring probes and loops in proportion to their counts."""
    n_probes, n_loops = proportional_counts(K)
    s = report.scores
    probes = _top(s[:N_PROBES], n_probes)
    loops = _top(s[N_PROBES:N_MASKABLE], n_loops)
    return MaskSpec(probes, loops, dropout_p)


def random_k_masks(K: int, n_draws: int, rng: np.random.Generator, dropout_p: float = 0.0) -> list[MaskSpec]:
    n_probes, n_loops = proportional_counts(K)
    out = []
    for _ in range(n_draws):
        probes = np.zeros(N_PROBES, dtype=bool)
        loops = np.zeros(N_LOOPS, dtype=bool)
        probes[rng.choice(N_PROBES, n_probes, replace=False)] = True
        loops[rng.choice(N_LOOPS, n_loops, replace=False)] = True
        out.append(MaskSpec(probes, loops, dropout_p))
    return out


def deployment_mask(seed: int = 0, n_disabled: int = DEPLOYMENT_DISABLED) -> MaskSpec:
    """Fixed mask with a seeded subset of the maskable channels disabled."""
    if not 0 <= n_disabled <= N_MASKABLE:
        raise ValueError("n_disabled out of range")
    avail = np.ones(N_MASKABLE, dtype=bool)
    avail[np.random.default_rng(seed).choice(N_MASKABLE, n_disabled, replace=False)] = False
    return MaskSpec.from_maskable(avail)


# --- rank statistics ----------------------------------------------------------------

def spearman(a, b) -> float:
    """Pearson correlation of average ranks; NaN when either ranking is constant."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("spearman needs two equal-length lists with at least 2 entries")
    ra, rb = rankdata(a) - (a.size + 1) / 2, rankdata(b) - (b.size + 1) / 2
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0.0:
        return float("nan")
    return float(np.clip((ra @ rb) / den, -1.0, 1.0))


def rank_matrix(score_sets: list, channels=None) -> np.ndarray:
    n = len(score_sets)
    sel = slice(None) if channels is None else channels
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = spearman(np.asarray(score_sets[i])[sel], np.asarray(score_sets[j])[sel])
    return out


def top_channels(score_sets: list, n: int = TOP_SUBSET) -> np.ndarray:
    """The n channels with the highest mean score across agents (ties to lower index)."""
    mean = np.mean(np.stack(score_sets), axis=0)
    return np.sort(np.lexsort((np.arange(mean.size), -mean))[:n])


# --- evaluation ---------------------------------------------------------------------

def settle_steps(dt: float) -> int:
    return int(math.ceil(SETTLE_TIME / dt - 1e-9))


def deployment_view(mask: MaskSpec, dropout_p: float) -> MaskSpec:
    """The mask as an agent trained at ``dropout_p`` sees it (same survivors, its own rescale)."""
    return MaskSpec(mask.probe_mask, mask.loop_mask, dropout_p)


def run_episode(policy, env, dataset, target: int, rng: np.random.Generator, mask: MaskSpec,
                episode_len: int, collect: bool = False) -> dict:
    """One held-target episode. ``policy`` is a TQCAgent or the string "random".

    Metrics cover the settled window (steps after the first ``settle_steps``).
    If the episode terminates early, the missing settled steps count with zero
    reward and the last shape error, so failures are never averaged away.
    """
    n = len(dataset)
    initial = (target + 1 + int(rng.integers(n - 1))) % n if n > 1 else target
    state, obs, priv = env.reset(dataset, rng, initial=initial, target=target)
    agent = policy if isinstance(policy, TQCAgent) else None
    gain = mask_gain(mask) if agent is not None else None
    skip = settle_steps(env.cfg.dt)
    rewards, dshape, dxpt, inputs, dps = [], [], [], [], []
    terminated = False
    steps = 0
    for t in range(episode_len):
        if agent is None:
            action = rng.uniform(-1.0, 1.0, env.cfg.n_act)
        else:
            x = agent.actor_input(obs.vector(), gain)
            if collect:
                inputs.append(x)
                dps.append(priv.delta_p.copy())
            action = agent.policy(x, deterministic=True)[0].action
        state, obs, priv, r, done, info = env.step(state, action, rng)
        steps += 1
        if t >= skip:
            rewards.append(r)
            dshape.append(info["d_shape"])
            dxpt.append(info["d_xpt"])
        if info["terminated"]:
            terminated = True
            break
    window = max(episode_len - skip, 1)
    missing = window - len(rewards)
    if missing > 0:
        last_s = info["d_shape"]
        last_x = info["d_xpt"]
        rewards += [0.0] * missing
        dshape += [last_s] * missing
        dxpt += [last_x] * missing
    out = {"d_shape": float(np.mean(dshape)), "d_xpt": float(np.mean(dxpt)), "reward": float(np.mean(rewards)),
           "eplen": steps, "terminated": terminated}
    if collect:
        out["inputs"] = np.array(inputs).reshape(-1, OBS_DIM)
        out["delta_p"] = np.array(dps).reshape(-1, 16)
    return out


def _eval_shape(args):
    policy, env, dataset, mask, i, episodes, seed, episode_len, collect = args
    rows = []
    for e in range(episodes):
        rng = np.random.default_rng([seed, i, e])
        rows.append(run_episode(policy, env, dataset, i, rng, mask, episode_len, collect))
    return rows


def evaluate_policy(policy, env, dataset, mask: MaskSpec, episodes_per_shape: int = 1, seed: int = 0,
                    episode_len: int | None = None, workers: int = 1, collect: bool = False):
    """Per-shape metrics table with each dataset shape held as the target.

    The agent's own training dropout rate sets the survivor rescale of ``mask``.
    Returns (rows, collected) where ``collected`` holds every visited actor input
    and ground-truth pivot errors when ``collect`` is set (else None).
    """
    if episode_len is None:
        episode_len = env.cfg.resample_period
    if isinstance(policy, TQCAgent):
        mask = deployment_view(mask, policy.cfg.dropout_p)
    elif policy != "random":
        raise ValueError("policy must be a TQCAgent or 'random'")
    jobs = [(policy, env, dataset, mask, i, episodes_per_shape, seed, episode_len, collect)
            for i in range(len(dataset))]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_eval_shape, jobs))
    else:
        results = [_eval_shape(j) for j in jobs]
    rows, xs, dps = [], [], []
    for i, eps in enumerate(results):
        row = {"shape": i, "episodes": len(eps),
               "d_shape_m": float(np.mean([e["d_shape"] for e in eps])),
               "d_xpt_m": float(np.mean([e["d_xpt"] for e in eps])),
               "reward": float(np.mean([e["reward"] for e in eps])),
               "eplen": float(np.mean([e["eplen"] for e in eps])),
               "terminated": int(sum(e["terminated"] for e in eps))}
        if collect and isinstance(policy, TQCAgent):
            x = np.concatenate([e["inputs"] for e in eps])
            dp = np.concatenate([e["delta_p"] for e in eps])
            pred = policy.predict_delta_p(x) if len(x) else np.zeros((0, 16))
            row["aux_sq_err"] = float(np.mean(np.sum((pred - dp) ** 2, axis=1))) if len(x) else float("nan")
            row["zero_sq_err"] = float(np.mean(np.sum(dp ** 2, axis=1))) if len(x) else float("nan")
            xs.append(x)
            dps.append(dp)
        rows.append(row)
    collected = None
    if collect and xs:
        collected = {"inputs": np.concatenate(xs), "delta_p": np.concatenate(dps)}
    return rows, collected


def collect_states(agent: TQCAgent, env, dataset, n_states: int, seed: int = 0, episode_len: int | None = None,
                   workers: int = 1) -> np.ndarray:
    """Standardized actor inputs from held-out full-mask rollouts, truncated to ``n_states``."""
    chunks, total, rep = [], 0, 0
    while total < n_states:
        _, coll = evaluate_policy(agent, env, dataset, MaskSpec.full(), seed=seed + 7919 * (rep + 1),
                                  episode_len=episode_len, workers=workers, collect=True)
        chunks.append(coll["inputs"])
        total += len(coll["inputs"])
        rep += 1
    return np.concatenate(chunks)[:n_states]


def summarize(rows: list[dict]) -> dict:
    """Mean and standard deviation of the per-shape metrics."""
    out = {}
    for key in ("d_shape_m", "d_xpt_m", "reward", "eplen"):
        v = np.array([r[key] for r in rows], dtype=float)
        out[f"mean_{key}"] = float(v.mean())
        out[f"std_{key}"] = float(v.std())
    out["terminated"] = int(sum(r["terminated"] for r in rows))
    return out


def write_rows(path, rows: list[dict], columns=None) -> None:
    if columns is None:
        columns = [c for c in EVAL_COLUMNS if not rows or c in rows[0]]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


# --- sweeps ---------------------------------------------------------------------------

SWEEP_COLUMNS = ["p", "mean_d_shape_m", "std_d_shape_m", "mean_d_xpt_m", "std_d_xpt_m", "mean_reward", "std_reward"]


def sweep_dropout(checkpoints: dict, env, dataset, fixed_mask: MaskSpec, seed: int = 0,
                  sensitivity_states: int = 10_000, episode_len: int | None = None, workers: int = 1,
                  top_subset: int = TOP_SUBSET) -> dict:
    """Evaluate one checkpoint per dropout rate on a fixed mask and compare sensitivity rankings.

    ``checkpoints`` maps p to a checkpoint directory. Returns a dict with the
    comparison table, the per-agent sensitivity scores and Spearman matrices
    over all channels and over the top-60 subset.
    """
    _require_checkpoints({f"p={p}": path for p, path in checkpoints.items()})
    ps = sorted(checkpoints)
    table, scores = [], []
    for p in ps:
        agent = load_checkpoint(checkpoints[p])
        rows, _ = evaluate_policy(agent, env, dataset, fixed_mask, seed=seed, episode_len=episode_len,
                                  workers=workers)
        s = summarize(rows)
        table.append({"p": p, **{k: s[k] for k in SWEEP_COLUMNS[1:]}})
        states = collect_states(agent, env, dataset, sensitivity_states, seed, episode_len, workers)
        scores.append(gradient_sensitivity(agent, states).scores)
    top = top_channels(scores, top_subset)
    return {"table": table, "p": ps, "scores": [s.tolist() for s in scores],
            "rank_full": rank_matrix(scores).tolist(), "rank_top": rank_matrix(scores, top).tolist(),
            "top_channels": top.tolist()}


def _require_checkpoints(checkpoints: dict) -> None:
    missing = [f"{k}: {path}" for k, path in checkpoints.items()
               if not os.path.exists(os.path.join(path, "checkpoint.json"))]
    if missing:
        raise FileNotFoundError("missing checkpoints: " + "; ".join(missing))


def ablation_table(checkpoints: dict, env, dataset, mask: MaskSpec, seed: int = 0,
                   episode_len: int | None = None, workers: int = 1) -> list[dict]:
    """One summary row per labelled checkpoint (e.g. full, no_aux, no_privileged), same mask and seeds."""
    _require_checkpoints(checkpoints)
    out = []
    for label, path in checkpoints.items():
        agent = load_checkpoint(path)
        rows, _ = evaluate_policy(agent, env, dataset, mask, seed=seed, episode_len=episode_len, workers=workers)
        out.append({"label": label, "dropout_p": agent.cfg.dropout_p, "no_aux": agent.cfg.no_aux,
                    "no_privileged": agent.cfg.no_privileged, **summarize(rows)})
    return out


def sensor_sweep(agent: TQCAgent, env, dataset, report: SensitivityReport, Ks=SWEEP_K, n_random: int = 5,
                 seed: int = 0, episode_len: int | None = None, workers: int = 1) -> list[dict]:
    """Top-K versus proportional random-K performance for each K."""
    rng = np.random.default_rng([seed, 7])
    out = []
    for K in Ks:
        rows, _ = evaluate_policy(agent, env, dataset, topk_proportional(report, K), seed=seed,
                                  episode_len=episode_len, workers=workers)
        out.append({"K": K, "kind": "top", "draw": 0, **summarize(rows)})
        for d, m in enumerate(random_k_masks(K, n_random, rng)):
            rows, _ = evaluate_policy(agent, env, dataset, m, seed=seed, episode_len=episode_len, workers=workers)
            out.append({"K": K, "kind": "random", "draw": d, **summarize(rows)})
    return out


def save_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
