"""Asymmetric TQC: distributional critics on privileged inputs, a squashed
Gaussian actor on the masked observation, and a linear auxiliary head on the
actor's penultimate layer that regresses the signed pivot-point error."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .neural import (
    LOG_STD_BOUNDS, MLP, AdamW, backward, forward, init_mlp, policy_head, sample_squashed,
    squashed_from_noise,
)
from .obs import (
    N_DELTA_P, N_MASKABLE, OBS_DIM, PRIV_DIM, MaskSpec, Normalizer, mask_gain, sample_mask,
)
from .surrogate.env import EnvFault

DELTA_P = slice(OBS_DIM, OBS_DIM + N_DELTA_P)  # position of the pivot error inside the critic vector
METRIC_COLUMNS = ["episode", "steps", "mean_reward", "mean_d_shape_m", "mean_d_xpt_m", "eplen", "mask_fraction"]
RNG_STREAMS = ("init", "env", "masks", "noise", "replay")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TQCConfig:
    n_critics: int = 3
    n_quantiles: int = 25
    top_quantiles_to_drop: int = 6  # per critic
    gamma: float = 0.97
    tau: float = 0.005
    batch_size: int = 1024
    buffer_size: int = 1_000_000
    warmup: int = 10_000
    updates_per_step: int = 1
    init_alpha: float = 0.2
    target_entropy: float | None = None  # None means -n_act
    aux_weight: float = 1.0
    total_steps: int = 1_000_000
    lr: float = 3e-5
    weight_decay: float = 0.01
    actor_hidden: tuple = (256, 256)
    critic_hidden: tuple = (256, 256)
    dropout_p: float = 0.3
    freeze_threshold: int = 150_000
    no_aux: bool = False
    no_privileged: bool = False
    algorithm: str = "tqc"

    def __post_init__(self):
        object.__setattr__(self, "actor_hidden", tuple(int(h) for h in self.actor_hidden))
        object.__setattr__(self, "critic_hidden", tuple(int(h) for h in self.critic_hidden))
        positive = ["n_critics", "n_quantiles", "gamma", "tau", "batch_size", "buffer_size",
                    "updates_per_step", "init_alpha", "lr", "freeze_threshold"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.top_quantiles_to_drop < self.n_quantiles:
            raise ValueError("top_quantiles_to_drop must satisfy 0 <= d < n_quantiles")
        if self.gamma >= 1 or self.tau > 1:
            raise ValueError("gamma must be < 1 and tau <= 1")
        if self.warmup < 0 or self.total_steps < 0 or self.aux_weight < 0 or self.weight_decay < 0:
            raise ValueError("warmup, total_steps, aux_weight and weight_decay must be non-negative")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if not self.actor_hidden or not self.critic_hidden or min(self.actor_hidden + self.critic_hidden) < 1:
            raise ValueError("hidden layer sizes must be positive")
        if self.algorithm not in ("tqc", "sac"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")

    @property
    def n_keep(self) -> int:
        return self.n_critics * (self.n_quantiles - self.top_quantiles_to_drop)

    @property
    def effective_aux_weight(self) -> float:
        return 0.0 if self.no_aux else self.aux_weight

    def to_dict(self) -> dict:
        d = asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TQCConfig:
        return cls(**d)


# --- distributional pieces ----------------------------------------------------

def quantile_midpoints(m: int) -> np.ndarray:
    return (2 * np.arange(1, m + 1) - 1) / (2.0 * m)


@numba.njit(cache=True)
def _quantile_huber_kernel(pred, target, kappa):
    B, M = pred.shape
    K = target.shape[1]
    grad = np.empty((B, M))
    total = 0.0
    for b in range(B):
        for i in range(M):
            tau = (2 * i + 1) / (2.0 * M)
            q = pred[b, i]
            s = 0.0
            g = 0.0
            for j in range(K):
                u = target[b, j] - q
                a = abs(u)
                c = min(a, kappa)
                w = tau + (u < 0) * (1.0 - 2.0 * tau)
                s += w * c * (a - 0.5 * c)
                g += w * np.copysign(c, u)
            total += s
            grad[b, i] = g
    n = B * M * K
    return total / (kappa * n), -grad / (kappa * n)


def quantile_huber_loss(pred, target, kappa: float = 1.0, return_grad: bool = False):
    """Mean over (sample, quantile, atom) of |tau - 1{u<0}| * huber_kappa(u) / kappa, u = atom - pred.

    ``pred`` is (M,) or (B, M); ``target`` is (K,) or (B, K). With ``return_grad``
    also returns d loss / d pred.
    """
    pred = np.ascontiguousarray(pred, dtype=float)
    target = np.ascontiguousarray(target, dtype=float)
    squeeze = pred.ndim == 1
    if squeeze:
        pred, target = pred[None], target[None]
    if pred.shape[0] != target.shape[0]:
        raise ValueError("pred and target batch sizes differ")
    loss, grad = _quantile_huber_kernel(pred, target, float(kappa))
    if not return_grad:
        return loss
    return loss, (grad[0] if squeeze else grad)


def truncate_atoms(quantiles, n_keep: int) -> np.ndarray:
    """Pool (B, n_critics, M) quantiles, sort ascending and keep the smallest ``n_keep``."""
    q = np.asarray(quantiles, dtype=float)
    pooled = np.sort(q.reshape(q.shape[0], -1), axis=1)
    if not 0 < n_keep <= pooled.shape[1]:
        raise ValueError("n_keep out of range")
    return pooled[:, :n_keep]


def truncated_target(next_quantiles, reward, done, next_log_prob, alpha: float, gamma: float,
                     n_keep: int) -> np.ndarray:
    """r + gamma (1 - done) (atom - alpha log pi(a'|s')) for each kept atom."""
    kept = truncate_atoms(next_quantiles, n_keep)
    reward = np.asarray(reward, dtype=float)[:, None]
    notdone = 1.0 - np.asarray(done, dtype=float)[:, None]
    soft = kept - alpha * np.asarray(next_log_prob, dtype=float)[:, None]
    return reward + gamma * notdone * soft


def polyak_update(targets: list, sources: list, tau: float) -> None:
    for tnet, snet in zip(targets, sources):
        for t, s in zip(tnet.tensors(), snet.tensors()):
            t *= 1.0 - tau
            t += tau * s


# --- replay -------------------------------------------------------------------

class ReplayBuffer:
    """FIFO ring of raw transitions; standardization happens when a batch is drawn."""

    def __init__(self, capacity: int, n_act: int, priv_dim: int = PRIV_DIM):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, OBS_DIM))
        self.next_obs = np.zeros((capacity, OBS_DIM))
        self.priv = np.zeros((capacity, priv_dim))
        self.next_priv = np.zeros((capacity, priv_dim))
        self.action = np.zeros((capacity, n_act))
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.mask = np.ones((capacity, N_MASKABLE), dtype=bool)
        self.dropout_p = np.zeros(capacity)
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done, priv, next_priv, mask: MaskSpec) -> None:
        i = self.ptr
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.priv[i] = priv
        self.next_priv[i] = next_priv
        self.action[i] = action
        self.reward[i] = reward
        self.done[i] = float(done)
        self.mask[i] = mask.maskable
        self.dropout_p[i] = mask.dropout_p
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, batch)

    def gains(self, idx) -> np.ndarray:
        g = np.ones((len(idx), OBS_DIM))
        g[:, :N_MASKABLE] = self.mask[idx] / (1.0 - self.dropout_p[idx])[:, None]
        return g


@dataclass
class Batch:
    obs: np.ndarray  # standardized, masked actor input
    next_obs: np.ndarray
    critic: np.ndarray  # standardized critic input (without action)
    next_critic: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    delta_p: np.ndarray  # raw signed pivot error, aux target


# --- agent --------------------------------------------------------------------

@dataclass
class UpdateStats:
    critic_loss: float
    actor_loss: float
    aux_loss: float
    alpha: float
    entropy: float


class TQCAgent:
    def __init__(self, cfg: TQCConfig, n_act: int, seed: int = 0):
        if cfg.algorithm == "sac":
            raise NotImplementedError("SAC variant is not implemented; use algorithm='tqc'")
        self.cfg = cfg
        self.n_act = int(n_act)
        self.seed = int(seed)
        root = np.random.SeedSequence(seed)
        self.rngs = {name: np.random.default_rng(s) for name, s in zip(RNG_STREAMS, root.spawn(len(RNG_STREAMS)))}
        init = self.rngs["init"]
        h_a, h_c = cfg.actor_hidden, cfg.critic_hidden
        self.actor = init_mlp((OBS_DIM, *h_a, 2 * n_act), init)
        self.aux_head = init_mlp((h_a[-1], N_DELTA_P), init)
        self.critic_dim = OBS_DIM if cfg.no_privileged else PRIV_DIM
        self.critics = [init_mlp((self.critic_dim + n_act, *h_c, cfg.n_quantiles), init)
                        for _ in range(cfg.n_critics)]
        self.target_critics = [c.copy() for c in self.critics]
        self.log_alpha = np.array([np.log(cfg.init_alpha)])
        self.actor_opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.critic_opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.alpha_opt = AdamW(lr=cfg.lr, weight_decay=0.0)
        self.actor_norm = Normalizer(OBS_DIM, cfg.freeze_threshold)
        self.critic_norm = Normalizer(PRIV_DIM, cfg.freeze_threshold)
        self.env_steps = 0
        self.updates = 0
        self.episodes = 0
        self.first_update_step = None

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    @property
    def target_entropy(self) -> float:
        t = self.cfg.target_entropy
        return -float(self.n_act) if t is None else float(t)

    def actor_tensors(self) -> list:
        return self.actor.tensors() + self.aux_head.tensors()

    def actor_names(self) -> list:
        return self.actor.tensor_names("actor.") + self.aux_head.tensor_names("aux.")

    def critic_tensors(self) -> list:
        return [t for c in self.critics for t in c.tensors()]

    def critic_names(self) -> list:
        return [n for i, c in enumerate(self.critics) for n in c.tensor_names(f"critic{i}.")]

    # ---------------------------------------------------------------- inputs
    def actor_input(self, raw_obs, gain) -> np.ndarray:
        return self.actor_norm.standardize(raw_obs) * gain

    def critic_input(self, raw_priv, actor_in) -> np.ndarray:
        if self.cfg.no_privileged:
            return actor_in
        return self.critic_norm.standardize(raw_priv)

    def make_batch(self, buf: ReplayBuffer, idx) -> Batch:
        gain = buf.gains(idx)
        o = self.actor_input(buf.obs[idx], gain)
        o2 = self.actor_input(buf.next_obs[idx], gain)
        return Batch(o, o2, self.critic_input(buf.priv[idx], o), self.critic_input(buf.next_priv[idx], o2),
                     buf.action[idx], buf.reward[idx], buf.done[idx], buf.priv[idx][:, DELTA_P])

    # ---------------------------------------------------------------- policy
    def policy(self, actor_in, rng=None, deterministic: bool = False):
        out, cache = forward(self.actor, actor_in)
        mean, log_std, inside = policy_head(out, self.n_act, LOG_STD_BOUNDS)
        sample = sample_squashed(mean, log_std, rng, deterministic=deterministic)
        return sample, inside, cache

    def predict_delta_p(self, actor_in) -> np.ndarray:
        _, cache = forward(self.actor, actor_in)
        return forward(self.aux_head, cache.penultimate)[0]

    def critic_quantiles(self, nets, critic_in, action) -> tuple[np.ndarray, list]:
        x = np.concatenate([critic_in, action], axis=-1)
        outs, caches = [], []
        for net in nets:
            q, c = forward(net, x)
            outs.append(q)
            caches.append(c)
        return np.stack(outs, axis=1), caches


def act(obs, agent: TQCAgent, mask: MaskSpec, deterministic: bool = True, rng=None) -> np.ndarray:
    """Deployment path: standardize, apply the fixed mask, actor forward."""
    raw = obs.vector() if hasattr(obs, "vector") else np.asarray(obs, dtype=float)
    x = agent.actor_input(raw, mask_gain(mask))
    if rng is None:
        rng = agent.rngs["noise"]
    sample, _, _ = agent.policy(x, rng, deterministic=deterministic)
    return sample.action


# --- gradient updates -----------------------------------------------------------

def critic_loss_and_grads(agent: TQCAgent, batch: Batch, next_sample) -> tuple[float, list]:
    cfg = agent.cfg
    nq, _ = agent.critic_quantiles(agent.target_critics, batch.next_critic, next_sample.action)
    y = truncated_target(nq, batch.reward, batch.done, next_sample.log_prob, agent.alpha, cfg.gamma, cfg.n_keep)
    x = np.concatenate([batch.critic, batch.action], axis=-1)
    total, grads = 0.0, []
    for net in agent.critics:
        q, cache = forward(net, x)
        loss, g = quantile_huber_loss(q, y, return_grad=True)
        total += loss / cfg.n_critics
        grads += backward(net, cache, g / cfg.n_critics, need_input=False)[0]
    return total, grads


def critic_update(agent: TQCAgent, batch: Batch, rng) -> float:
    next_sample, _, _ = agent.policy(batch.next_obs, rng)
    loss, grads = critic_loss_and_grads(agent, batch, next_sample)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite critic loss at update {agent.updates}")
    agent.critic_opt.step(agent.critic_tensors(), grads, agent.critic_names())
    polyak_update(agent.target_critics, agent.critics, agent.cfg.tau)
    return loss


def actor_loss_and_grads(agent: TQCAgent, batch: Batch, eps) -> tuple[float, float, list, np.ndarray]:
    """Total actor loss (entropy-regularized critic value plus weighted aux regression).

    ``eps`` is the reparameterization noise, so the loss is a deterministic
    function of the parameters. Returns (actor loss, aux loss, grads, log-probs).
    """
    cfg, B, n = agent.cfg, batch.obs.shape[0], agent.n_act
    out, cache = forward(agent.actor, batch.obs)
    mean, log_std, inside = policy_head(out, n, LOG_STD_BOUNDS)
    s = squashed_from_noise(mean, log_std, eps)
    q, ccaches = agent.critic_quantiles(agent.critics, batch.critic, s.action)
    alpha = agent.alpha
    actor_loss = float(np.mean(alpha * s.log_prob - q.mean(axis=(1, 2))))

    g_q = np.full((B, cfg.n_quantiles), -1.0 / (B * cfg.n_critics * cfg.n_quantiles))
    g_action = np.zeros((B, n))
    for net, cc in zip(agent.critics, ccaches):
        g_action += backward(net, cc, g_q, need_params=False, input_cols=slice(-n, None))[1]
    g_mean, g_ls = s.backward(g_action, np.full(B, alpha / B))
    g_out = np.concatenate([g_mean, g_ls * inside], axis=1)

    w = cfg.effective_aux_weight
    aux_loss = 0.0
    if w > 0:
        pred, hcache = forward(agent.aux_head, cache.penultimate)
        resid = pred - batch.delta_p
        aux_loss = float(np.mean(np.sum(resid * resid, axis=1)))
        aux_grads, g_pen = backward(agent.aux_head, hcache, 2.0 * w * resid / B)
        grads, _ = backward(agent.actor, cache, g_out, grad_penultimate=g_pen)
    else:
        grads, _ = backward(agent.actor, cache, g_out)
        aux_grads = [np.zeros_like(t) for t in agent.aux_head.tensors()]
    return actor_loss, aux_loss, grads + aux_grads, s.log_prob


def actor_update(agent: TQCAgent, batch: Batch, rng) -> tuple[float, float, np.ndarray]:
    eps = rng.standard_normal((batch.obs.shape[0], agent.n_act))
    actor_loss, aux_loss, grads, logp = actor_loss_and_grads(agent, batch, eps)
    total = actor_loss + agent.cfg.effective_aux_weight * aux_loss
    if not np.isfinite(total):
        raise FloatingPointError(
            f"non-finite actor loss at update {agent.updates}: actor={actor_loss} aux={aux_loss} alpha={agent.alpha}")
    agent.actor_opt.step(agent.actor_tensors(), grads, agent.actor_names())
    return actor_loss, aux_loss, logp


def alpha_gradient(log_alpha: float, log_prob, target_entropy: float) -> float:
    """d/d(log alpha) of mean(-alpha (log pi + target_entropy)), log pi held fixed."""
    return float(-np.exp(log_alpha) * np.mean(np.asarray(log_prob) + target_entropy))


def alpha_update(agent: TQCAgent, log_prob) -> float:
    g = alpha_gradient(agent.log_alpha[0], log_prob, agent.target_entropy)
    agent.alpha_opt.step([agent.log_alpha], [np.array([g])], ["log_alpha"])
    return agent.alpha


def gradient_update(agent: TQCAgent, buf: ReplayBuffer) -> UpdateStats:
    rng = agent.rngs["replay"]
    batch = agent.make_batch(buf, buf.sample_indices(agent.cfg.batch_size, rng))
    closs = critic_update(agent, batch, rng)
    aloss, xloss, logp = actor_update(agent, batch, rng)
    alpha = alpha_update(agent, logp)
    agent.updates += 1
    return UpdateStats(closs, aloss, xloss, alpha, float(-np.mean(logp)))


# --- training loop --------------------------------------------------------------

def _episode_row(agent, rewards, dshape, dxpt, mask) -> dict:
    return {
        "episode": agent.episodes,
        "steps": agent.env_steps,
        "mean_reward": float(np.mean(rewards)),
        "mean_d_shape_m": float(np.mean(dshape)),
        "mean_d_xpt_m": float(np.mean(dxpt)),
        "eplen": len(rewards),
        "mask_fraction": float(mask.masked_fraction),
    }


def train(env, dataset, agent: TQCAgent, steps: int | None = None, metrics_path=None,
          fault_checkpoint=None, callback=None) -> tuple[TQCAgent, list[dict]]:
    """Run the episode loop for ``steps`` environment steps (default: remaining total_steps).

    One gradient update per env step once ``warmup`` steps have been collected.
    Episodes cut off by the step budget are not logged; a resumed run starts a
    fresh episode. On an environment fault a checkpoint is written to
    ``fault_checkpoint`` (if given) before the fault propagates.
    """
    cfg = agent.cfg
    if steps is None:
        steps = max(0, cfg.total_steps - agent.env_steps)
    capacity = max(1, min(cfg.buffer_size, steps))
    buf = ReplayBuffer(capacity, agent.n_act)
    rng_env, rng_mask, rng_noise = agent.rngs["env"], agent.rngs["masks"], agent.rngs["noise"]
    rows = []
    writer = None
    fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "a" if agent.episodes > 0 and os.path.exists(metrics_path) else "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        if fh.tell() == 0:
            writer.writeheader()
    end = agent.env_steps + steps
    try:
        while agent.env_steps < end:
            mask = sample_mask(cfg.dropout_p, rng_mask)
            gain = mask_gain(mask)
            state, obs, priv = env.reset(dataset, rng_env)
            raw, raw_priv = obs.vector(), priv.vector()
            agent.actor_norm.update(raw)
            agent.critic_norm.update(raw_priv)
            rewards, dshape, dxpt = [], [], []
            done = False
            while not done and agent.env_steps < end:
                if agent.env_steps < cfg.warmup:
                    action = rng_noise.uniform(-1.0, 1.0, agent.n_act)
                else:
                    sample, _, _ = agent.policy(agent.actor_input(raw, gain), rng_noise)
                    action = sample.action
                try:
                    state, obs, priv, r, done, info = env.step(state, action, rng_env, dataset)
                except EnvFault:
                    if fault_checkpoint is not None:
                        save_checkpoint(agent, fault_checkpoint)
                    raise
                raw2, raw_priv2 = obs.vector(), priv.vector()
                buf.add(raw, action, r, raw2, info["terminated"], raw_priv, raw_priv2, mask)
                agent.actor_norm.update(raw2)
                agent.critic_norm.update(raw_priv2)
                raw, raw_priv = raw2, raw_priv2
                agent.env_steps += 1
                rewards.append(r)
                dshape.append(info["d_shape"])
                dxpt.append(info["d_xpt"])
                if agent.env_steps >= cfg.warmup:
                    if agent.first_update_step is None:
                        agent.first_update_step = agent.env_steps
                    for _ in range(cfg.updates_per_step):
                        stats = gradient_update(agent, buf)
                        if callback is not None:
                            callback(agent, stats)
            if done:
                agent.episodes += 1
                row = _episode_row(agent, rewards, dshape, dxpt, mask)
                rows.append(row)
                if writer is not None:
                    writer.writerow(row)
                    fh.flush()
    finally:
        if fh is not None:
            fh.close()
    return agent, rows


# --- checkpoints ----------------------------------------------------------------

def _named_tensors(agent: TQCAgent) -> list[tuple[str, np.ndarray]]:
    out = list(zip(agent.actor_names(), agent.actor_tensors()))
    out += list(zip(agent.critic_names(), agent.critic_tensors()))
    for i, c in enumerate(agent.target_critics):
        out += list(zip(c.tensor_names(f"target{i}."), c.tensors()))
    out.append(("log_alpha", agent.log_alpha))
    for name, opt in (("actor_opt", agent.actor_opt), ("critic_opt", agent.critic_opt),
                      ("alpha_opt", agent.alpha_opt)):
        if opt.m is not None:
            out += [(f"{name}.m", opt.m), (f"{name}.v", opt.v)]
    for name, norm in (("actor_norm", agent.actor_norm), ("critic_norm", agent.critic_norm)):
        out += [(f"{name}.mean", norm.mean), (f"{name}.m2", norm.m2)]
    return out


def save_checkpoint(agent: TQCAgent, directory) -> tuple[str, str]:
    """Write ``checkpoint.json`` (manifest) and ``checkpoint.bin`` (little-endian float64 tensors)."""
    os.makedirs(directory, exist_ok=True)
    tensors = _named_tensors(agent)
    blob = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for _, t in tensors)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": agent.cfg.to_dict(),
        "n_act": agent.n_act,
        "seed": agent.seed,
        "counters": {"env_steps": agent.env_steps, "updates": agent.updates, "episodes": agent.episodes,
                     "first_update_step": agent.first_update_step},
        "optimizer_steps": {"actor_opt": agent.actor_opt.t, "critic_opt": agent.critic_opt.t,
                            "alpha_opt": agent.alpha_opt.t},
        "normalizers": {"actor_norm": agent.actor_norm.state_dict(), "critic_norm": agent.critic_norm.state_dict()},
        "rng_states": {k: g.bit_generator.state for k, g in agent.rngs.items()},
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    jpath = os.path.join(directory, "checkpoint.json")
    bpath = os.path.join(directory, "checkpoint.bin")
    with open(bpath, "wb") as f:
        f.write(blob)
    with open(jpath, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return jpath, bpath


def load_checkpoint(directory) -> TQCAgent:
    with open(os.path.join(directory, "checkpoint.json")) as f:
        man = json.load(f)
    if man.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {man.get('version')}")
    with open(os.path.join(directory, "checkpoint.bin"), "rb") as f:
        blob = f.read()
    if hashlib.sha256(blob).hexdigest() != man["blob_sha256"]:
        raise ValueError("checkpoint blob does not match manifest digest")
    agent = TQCAgent(TQCConfig.from_dict(man["config"]), man["n_act"], man["seed"])
    c = man["counters"]
    agent.env_steps, agent.updates, agent.episodes = c["env_steps"], c["updates"], c["episodes"]
    agent.first_update_step = c["first_update_step"]
    for name, opt in (("actor_opt", agent.actor_opt), ("critic_opt", agent.critic_opt),
                      ("alpha_opt", agent.alpha_opt)):
        opt.t = man["optimizer_steps"][name]
        n = sum(e["shape"][0] for e in man["tensors"] if e["name"] == f"{name}.m")
        if n:
            opt.m, opt.v = np.zeros(n), np.zeros(n)
    for name, norm in (("actor_norm", agent.actor_norm), ("critic_norm", agent.critic_norm)):
        st = man["normalizers"][name]
        norm.count, norm.frozen, norm.freeze_threshold = st["count"], st["frozen"], st["freeze_threshold"]
    for k, state in man["rng_states"].items():
        agent.rngs[k].bit_generator.state = state
    flat = np.frombuffer(blob, dtype="<f8")
    targets = dict(_named_tensors(agent))
    pos = 0
    for entry in man["tensors"]:
        t = targets.get(entry["name"])
        if t is None or list(t.shape) != entry["shape"]:
            raise ValueError(f"checkpoint tensor {entry['name']} does not fit the architecture")
        t[...] = flat[pos:pos + t.size].reshape(t.shape)
        pos += t.size
    if pos != flat.size:
        raise ValueError("checkpoint blob length does not match manifest")
    return agent
