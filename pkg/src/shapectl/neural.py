"""Dense ReLU networks with exact reverse-mode gradients, a tanh-squashed
Gaussian policy head and AdamW. Everything is float64."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

LOG_STD_BOUNDS = (-20.0, 2.0)
_HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)
_ACTION_LIMIT = 1.0 - 1e-12


@dataclass
class MLP:
    """Affine layers with ReLU between them and a linear output.

    ``sizes`` is (input, hidden..., output); weights are stored (fan_in, fan_out)
    so a batch row vector maps as ``x @ W + b``.
    """

    sizes: tuple
    weights: list
    biases: list

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} has shape {w.shape}/{b.shape}, expected sizes {self.sizes}")

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def tensors(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def tensor_names(self, prefix: str = "") -> list[str]:
        names = []
        for i in range(len(self.weights)):
            names += [f"{prefix}W{i}", f"{prefix}b{i}"]
        return names

    def copy(self) -> MLP:
        return MLP(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors())


def init_mlp(sizes, rng: np.random.Generator, out_scale: float = 1.0) -> MLP:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; ``out_scale`` shrinks the last layer."""
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        bound = 1.0 / np.sqrt(sizes[i])
        if i == len(sizes) - 2:
            bound *= out_scale
        weights.append(rng.uniform(-bound, bound, (sizes[i], sizes[i + 1])))
        biases.append(rng.uniform(-bound, bound, sizes[i + 1]))
    return MLP(tuple(sizes), weights, biases)


def zeros_like_mlp(net: MLP) -> MLP:
    return MLP(net.sizes, [np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])


@dataclass
class Cache:
    inputs: list  # input to each affine layer
    pre: list  # pre-activation of each hidden layer
    squeeze: bool

    @property
    def penultimate(self) -> np.ndarray:
        """Activation feeding the output layer."""
        return self.inputs[-1]


def forward(net: MLP, x) -> tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != net.n_in:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {net.n_in}")
    inputs, pre = [], []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        if i < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return (h[0] if squeeze else h), Cache(inputs, pre, squeeze)


def backward(net: MLP, cache: Cache, grad_out, grad_penultimate=None, need_params: bool = True,
             need_input: bool = True, input_cols=None) -> tuple[list | None, np.ndarray | None]:
    """Gradients of sum(grad_out * output) w.r.t. every tensor and the input.

    ``grad_penultimate`` is an extra upstream gradient on the activation feeding
    the output layer (used by heads that share the trunk). Parameter gradients
    are summed over the batch and returned in :meth:`MLP.tensors` order.
    ``need_params`` / ``need_input`` skip work whose result is not wanted;
    ``input_cols`` (a slice) restricts the input gradient to those features.
    """
    g = np.asarray(grad_out, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], net.n_out):
        raise ValueError(f"output gradient shape {g.shape} does not match network output")
    grads = [None] * (2 * len(net.weights)) if need_params else None
    last = len(net.weights) - 1
    for i in range(last, -1, -1):
        if need_params:
            grads[2 * i] = cache.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
        if i == 0 and not need_input:
            return grads, None
        w = net.weights[i] if (i > 0 or input_cols is None) else net.weights[0][input_cols]
        g = g @ w.T
        if i == last and grad_penultimate is not None:
            gp = np.asarray(grad_penultimate, dtype=float)
            g = g + (gp[None, :] if cache.squeeze else gp)
        if i > 0:
            g = g * (cache.pre[i - 1] > 0)
    return grads, (g[0] if cache.squeeze else g)


def numerical_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. the array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


# --- squashed Gaussian policy -------------------------------------------------

def policy_head(out, n_act: int, bounds=LOG_STD_BOUNDS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split actor output into (mean, clamped log_std, clamp-pass mask)."""
    out = np.asarray(out, dtype=float)
    if out.shape[-1] != 2 * n_act:
        raise ValueError(f"actor output must have {2 * n_act} entries")
    mean = out[..., :n_act]
    raw = out[..., n_act:]
    log_std = np.clip(raw, bounds[0], bounds[1])
    inside = (raw >= bounds[0]) & (raw <= bounds[1])
    return mean, log_std, inside


def _log1m_tanh2(u):
    """log(1 - tanh(u)^2) without cancellation."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


@dataclass
class SquashedSample:
    mean: np.ndarray
    log_std: np.ndarray
    eps: np.ndarray
    u: np.ndarray
    action: np.ndarray
    log_prob: np.ndarray

    def backward(self, grad_action=None, grad_log_prob=None) -> tuple[np.ndarray, np.ndarray]:
        """Reparameterized gradients w.r.t. (mean, log_std) holding eps fixed."""
        std = np.exp(self.log_std)
        t = np.tanh(self.u)
        g_mean = np.zeros_like(self.mean)
        g_ls = np.zeros_like(self.log_std)
        if grad_action is not None:
            da = np.asarray(grad_action) * (1.0 - t * t)
            g_mean += da
            g_ls += da * std * self.eps
        if grad_log_prob is not None:
            gl = np.asarray(grad_log_prob, dtype=float)
            if gl.ndim < self.mean.ndim:
                gl = gl[..., None]
            g_mean += gl * 2.0 * t
            g_ls += gl * (-1.0 + 2.0 * t * std * self.eps)
        return g_mean, g_ls


def squashed_from_noise(mean, log_std, eps) -> SquashedSample:
    mean = np.asarray(mean, dtype=float)
    log_std = np.asarray(log_std, dtype=float)
    u = mean + np.exp(log_std) * eps
    action = np.clip(np.tanh(u), -_ACTION_LIMIT, _ACTION_LIMIT)
    logp = np.sum(-0.5 * eps * eps - log_std - _HALF_LOG_2PI - _log1m_tanh2(u), axis=-1)
    return SquashedSample(mean, log_std, eps, u, action, logp)


def sample_squashed(mean, log_std, rng: np.random.Generator, deterministic: bool = False) -> SquashedSample:
    """tanh(N(mean, exp(log_std))) with its exact log-density; deterministic mode uses eps = 0."""
    mean = np.asarray(mean, dtype=float)
    eps = np.zeros_like(mean) if deterministic else rng.standard_normal(mean.shape)
    return squashed_from_noise(mean, log_std, eps)


def squashed_log_prob(mean, log_std, action) -> np.ndarray:
    """Log-density of a given action in (-1, 1)^n under the squashed Gaussian."""
    u = np.arctanh(np.asarray(action, dtype=float))
    eps = (u - mean) / np.exp(log_std)
    return np.sum(-0.5 * eps * eps - log_std - _HALF_LOG_2PI - _log1m_tanh2(u), axis=-1)


# --- optimizer ----------------------------------------------------------------

class NonFiniteGradient(FloatingPointError):
    pass


@numba.njit(cache=True)
def _adam_moments(g, m, v, beta1, beta2, lr_c1, inv_c2, eps):
    """Update first/second moments in place and return the bias-corrected step."""
    out = np.empty_like(g)
    for i in range(g.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        out[i] = lr_c1 * m[i] / (np.sqrt(v[i] * inv_c2) + eps)
    return out


@dataclass
class AdamW:
    """Adam moments with decoupled weight decay applied before the moment step."""

    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def step(self, params: list, grads: list, names=None) -> None:
        """Update ``params`` in place. Moments are kept as one flat vector."""
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                n = names[i] if names else f"tensor{i}"
                raise ValueError(f"gradient for {n} has shape {g.shape}, parameter has {p.shape}")
        flat = np.concatenate([np.ravel(g) for g in grads])
        if not np.all(np.isfinite(flat)):
            for i, g in enumerate(grads):
                if not np.all(np.isfinite(g)):
                    raise NonFiniteGradient(f"non-finite gradient in {names[i] if names else f'tensor{i}'}")
        if self.m is None or len(self.m) != flat.size:
            self.m = np.zeros(flat.size)
            self.v = np.zeros(flat.size)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        upd = _adam_moments(flat, self.m, self.v, self.beta1, self.beta2, self.lr / c1, 1.0 / c2, self.eps)
        decay = 1.0 - self.lr * self.weight_decay
        pos = 0
        for p in params:
            n = p.size
            if self.weight_decay:
                p *= decay
            p -= upd[pos:pos + n].reshape(p.shape)
            pos += n



def adamw_step(params: list, grads: list, state: AdamW, names=None) -> tuple[list, AdamW]:
    state.step(params, grads, names)
    return params, state
