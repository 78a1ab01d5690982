"""Latent-action diffusion actor.

The actor maps (observation, latent x_I) to action logits x_0 by running I
reverse denoising steps with a small noise-prediction MLP, then takes a
softmax over the B nodes. Each base station keeps the last x_0 it produced
for every arrival position and feeds it back in as the next x_I.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .nn import MlpParams, ShapeError, init_mlp, mlp_backward, mlp_forward
from .sim import Action, ConfigError

LATENT_CLIP = 5.0
NOISE_COEFFS = ("half_var", "sqrt_var")
CLIP_GRADS = ("straight", "mask")


@dataclass(frozen=True)
class BetaSchedule:
    steps: int
    beta_min: float
    beta_max: float
    beta: np.ndarray
    lam: np.ndarray
    lam_bar: np.ndarray
    beta_tilde: np.ndarray
    _coeffs: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        # plain floats per step: 1/sqrt(lam), beta/sqrt(1 - lam_bar), half var, sqrt var
        object.__setattr__(self, "_coeffs", tuple(
            (float(1.0 / np.sqrt(lam)), float(b / np.sqrt(1.0 - lb)), float(bt / 2.0),
             float(np.sqrt(bt)))
            for b, lam, lb, bt in zip(self.beta, self.lam, self.lam_bar, self.beta_tilde)))

    def step_coeffs(self, i: int) -> tuple[float, float]:
        """(1/sqrt(lam_i), beta_i/sqrt(1 - lam_bar_i))."""
        c = self._coeffs[i - 1]
        return c[0], c[1]

    def noise_scale(self, i: int, mode: str = "half_var") -> float:
        if mode == "half_var":
            return self._coeffs[i - 1][2]
        if mode == "sqrt_var":
            return self._coeffs[i - 1][3]
        raise ConfigError(f"unknown noise_coeff {mode!r}; expected one of {NOISE_COEFFS}")


def build_schedule(steps: int, beta_min: float = 0.1, beta_max: float = 10.0) -> BetaSchedule:
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if not 0 < beta_min <= beta_max:
        raise ConfigError(f"need 0 < beta_min <= beta_max, got {beta_min}, {beta_max}")
    i = np.arange(1, steps + 1)
    beta = 1.0 - np.exp(-beta_min / steps - (2 * i - 1) / (2 * steps ** 2) * (beta_max - beta_min))
    lam = 1.0 - beta
    lam_bar = np.cumprod(lam)
    lam_bar_prev = np.concatenate([[1.0], lam_bar[:-1]])
    beta_tilde = (1.0 - lam_bar_prev) / (1.0 - lam_bar) * beta
    for arr in (beta, lam, lam_bar, beta_tilde):
        arr.setflags(write=False)
    return BetaSchedule(steps, beta_min, beta_max, beta, lam, lam_bar, beta_tilde)


def sinusoidal_encode(i: float, dim: int = 16) -> np.ndarray:
    """Transformer-style timestep embedding, sin/cos interleaved."""
    if dim % 2:
        raise ConfigError(f"embedding width must be even, got {dim}")
    freqs = 10000.0 ** (-np.arange(0, dim, 2) / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(i * freqs)
    out[1::2] = np.cos(i * freqs)
    return out


@lru_cache(maxsize=256)
def _embedding(i: int, dim: int) -> np.ndarray:
    out = sinusoidal_encode(i, dim)
    out.setflags(write=False)
    return out


@dataclass
class PolicyNet:
    """Noise predictor eps(x_i, i, s) over B nodes."""

    params: MlpParams
    num_nodes: int
    embed_dim: int = 16

    @property
    def obs_dim(self) -> int:
        return self.num_nodes + 2

    @property
    def in_dim(self) -> int:
        return self.obs_dim + self.num_nodes + self.embed_dim

    @classmethod
    def create(cls, num_nodes: int, rng: np.random.Generator, hidden=(20, 20),
               embed_dim: int = 16) -> PolicyNet:
        in_dim = 2 * num_nodes + 2 + embed_dim
        return cls(init_mlp([in_dim, *hidden, num_nodes], rng), num_nodes, embed_dim)

    def net_input(self, x: np.ndarray, i: int, s: np.ndarray) -> np.ndarray:
        emb = _embedding(i, self.embed_dim)
        if x.ndim == 1:
            return np.concatenate([s, x, emb])
        return np.concatenate([s, x, np.broadcast_to(emb, (x.shape[0], emb.size))], axis=1)

    def eps(self, x: np.ndarray, i: int, s: np.ndarray):
        return mlp_forward(self.params, self.net_input(x, i, s))


@dataclass
class ActionDistribution:
    probs: np.ndarray
    source_latent: np.ndarray


def _obs_vec(s) -> np.ndarray:
    return s.normalized if hasattr(s, "normalized") else np.asarray(s, dtype=np.float64)


def _check_step(i: int, sched: BetaSchedule) -> None:
    if not 1 <= i <= sched.steps:
        raise ShapeError(f"denoising step {i} outside [1, {sched.steps}]")


def denoise_step(x_i: np.ndarray, i: int, s, net: PolicyNet, sched: BetaSchedule,
                 noise: np.ndarray | None = None, noise_coeff: str = "half_var") -> np.ndarray:
    """One reverse step x_i -> x_{i-1}; no clipping (the chain applies it)."""
    _check_step(i, sched)
    x_i = np.asarray(x_i, dtype=np.float64)
    eps_hat, _ = net.eps(x_i, i, _obs_vec(s))
    return _combine(x_i, eps_hat, i, sched, noise, noise_coeff)


def _combine(x_i, eps_hat, i, sched, noise, noise_coeff):
    inv_sqrt_lam, coef = sched.step_coeffs(i)
    mean = inv_sqrt_lam * (x_i - coef * eps_hat)
    if noise is None:
        return mean
    return mean + sched.noise_scale(i, noise_coeff) * noise


@dataclass
class ChainTrace:
    """Per-step values kept from a reverse chain for backpropagation."""

    inputs: list[np.ndarray]     # x_i fed into each step, i = I..1
    eps: list[np.ndarray]        # eps predictions, same order
    caches: list[list[np.ndarray]]
    masks: list[np.ndarray]      # True where the post-step value was not clipped
    noise: np.ndarray            # (I, *x.shape), the injected Gaussian draws


def draw_chain_noise(shape, sched: BetaSchedule, rng: np.random.Generator | None) -> np.ndarray:
    if rng is None:
        return np.zeros((sched.steps, *shape))
    return rng.standard_normal((sched.steps, *shape))


def reverse_chain(x_I: np.ndarray, s, net: PolicyNet, sched: BetaSchedule,
                  rng: np.random.Generator | None = None, noise: np.ndarray | None = None,
                  noise_coeff: str = "half_var", clip: float | None = LATENT_CLIP,
                  clip_grad: str = "straight"):
    """Run steps I..1. ``noise[j]`` is used at step ``I - j``.

    Without ``noise`` or ``rng`` the chain is noiseless. Returns ``(x_0, trace)``.
    With ``clip_grad="straight"`` the clamp passes gradients through unchanged
    (the derivative of the unclamped update); ``"mask"`` zeroes them where the
    clamp was active, which is the exact derivative of the clamped chain.
    """
    if clip_grad not in CLIP_GRADS:
        raise ConfigError(f"clip_grad must be one of {CLIP_GRADS}, got {clip_grad!r}")
    x = np.asarray(x_I, dtype=np.float64)
    if x.shape[-1] != net.num_nodes:
        raise ShapeError(f"latent width {x.shape[-1]} != node count {net.num_nodes}")
    s = _obs_vec(s)
    if noise is None:
        noise = draw_chain_noise(x.shape, sched, rng)
    trace = ChainTrace([], [], [], [], noise)
    for j, i in enumerate(range(sched.steps, 0, -1)):
        eps_hat, cache = net.eps(x, i, s)
        trace.inputs.append(x)
        trace.eps.append(eps_hat)
        trace.caches.append(cache)
        x = _combine(x, eps_hat, i, sched, noise[j], noise_coeff)
        if clip is not None and clip_grad == "mask":
            trace.masks.append(np.abs(x) <= clip)
        else:
            trace.masks.append(np.ones(x.shape, dtype=bool))
        if clip is not None:
            x = np.minimum(np.maximum(x, -clip), clip)
    return x, trace


def infer_chain(x_I: np.ndarray, s: np.ndarray, net: PolicyNet, sched: BetaSchedule,
                noise: np.ndarray, noise_coeff: str = "half_var",
                clip: float | None = LATENT_CLIP) -> np.ndarray:
    """Single-vector reverse chain without a trace; matches reverse_chain up to round-off.

    The observation part of the first layer is computed once per call.
    """
    p = net.params
    w1, b1 = p.weights[0], p.biases[0]
    n_obs, B = net.obs_dim, net.num_nodes
    w_x = w1[:, n_obs:n_obs + B]
    w_e = w1[:, n_obs + B:]
    base = w1[:, :n_obs] @ s + b1
    rest = list(zip(p.weights[1:], p.biases[1:]))
    x = np.asarray(x_I, dtype=np.float64)
    for j, i in enumerate(range(sched.steps, 0, -1)):
        h = w_x @ x + (base + w_e @ _embedding(i, net.embed_dim))
        for w, b in rest:
            h = np.maximum(h, 0.0)
            h = w @ h + b
        x = _combine(x, h, i, sched, noise[j], noise_coeff)
        if clip is not None:
            x = np.minimum(np.maximum(x, -clip), clip)
    return x


def chain_backward(net: PolicyNet, sched: BetaSchedule, trace: ChainTrace,
                   grad_x0: np.ndarray):
    """Gradients of a scalar loss w.r.t. the net parameters and x_I.

    Injected noise is treated as a constant (reparameterization).
    """
    n_obs = net.obs_dim
    B = net.num_nodes
    g = np.asarray(grad_x0, dtype=np.float64)
    total = None
    for j in range(sched.steps - 1, -1, -1):
        i = sched.steps - j
        g = g * trace.masks[j]
        inv_sqrt_lam, coef = sched.step_coeffs(i)
        bundle = mlp_backward(net.params, trace.caches[j], -coef * inv_sqrt_lam * g)
        gp = bundle.params
        if total is None:
            total = gp
        else:
            for a, b in zip(total.weights, gp.weights):
                a += b
            for a, b in zip(total.biases, gp.biases):
                a += b
        g = inv_sqrt_lam * g + bundle.input[..., n_obs:n_obs + B]
    return total, g


def forward_diffuse(x0: np.ndarray, i: int, sched: BetaSchedule, eps: np.ndarray) -> np.ndarray:
    _check_step(i, sched)
    lb = sched.lam_bar[i - 1]
    return np.sqrt(lb) * np.asarray(x0) + np.sqrt(1.0 - lb) * np.asarray(eps)


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    return probs * (grad_probs - np.sum(grad_probs * probs, axis=-1, keepdims=True))


def action_probs(x0: np.ndarray) -> ActionDistribution:
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x0)):
        raise FloatingPointError(f"non-finite latent {x0}")
    return ActionDistribution(softmax(x0), x0)


def select_action(dist: ActionDistribution, mode: str = "argmax",
                  rng: np.random.Generator | None = None) -> Action:
    p = dist.probs
    if mode == "argmax":
        return Action(int(np.argmax(p)), p.size)
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        return Action(sample_index(p, rng), p.size)
    raise ValueError(f"unknown selection mode {mode!r}")


def sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    # inverse CDF; guards the top end against round-off in the cumulative sum
    c = np.cumsum(p)
    k = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return min(k, p.size - 1)


class LatentStore:
    """Per-BS array of the last x_0 produced at each arrival position."""

    def __init__(self, num_bs: int, max_tasks: int, num_nodes: int, rng: np.random.Generator):
        self.data = rng.standard_normal((num_bs, max_tasks, num_nodes))

    def _check(self, b: int, n: int) -> None:
        if not (0 <= b < self.data.shape[0] and 0 <= n < self.data.shape[1]):
            raise IndexError(f"latent slot ({b}, {n}) outside {self.data.shape[:2]}")

    def fetch(self, b: int, n: int) -> np.ndarray:
        self._check(b, n)
        return self.data[b, n].copy()

    def update(self, b: int, n: int, x0: np.ndarray) -> None:
        self._check(b, n)
        self.data[b, n] = x0


def latent_fetch(store: LatentStore, b: int, n: int) -> np.ndarray:
    return store.fetch(b, n)


def latent_update(store: LatentStore, b: int, n: int, x0: np.ndarray) -> None:
    store.update(b, n, x0)
