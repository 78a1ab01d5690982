"""Discrete soft actor-critic training for per-BS schedulers.

Each base station owns one :class:`SacAgent`: an actor (diffusion or plain
softmax), twin critics with target copies, a learned entropy temperature and
a FIFO replay buffer of extended transitions (latents included).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import (
    CLIP_GRADS, NOISE_COEFFS, BetaSchedule, PolicyNet, chain_backward, draw_chain_noise,
    reverse_chain, softmax,
)
from .nn import (
    AdamState, MlpParams, adam_step, copy_params, init_mlp, mlp_backward, mlp_forward,
    soft_update,
)
from .sim import Action, ConfigError, Observation

ALPHA_FLOOR = 1e-4
TARGET_STYLES = ("paper", "expectation")
ACTOR_STYLES = ("paper", "standard")


class InsufficientDataError(ValueError):
    pass


@dataclass
class Hyperparams:
    gamma: float = 0.95
    tau: float = 0.005
    alpha: float = 0.05
    target_entropy: float = -1.0
    batch_size: int = 64
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    lr_alpha: float = 3e-4
    episodes: int = 60
    buffer_size: int = 1000
    warmup: int = 300
    hidden: tuple[int, ...] = (20, 20)
    denoising_steps: int = 5
    beta_min: float = 0.1
    beta_max: float = 10.0
    embed_dim: int = 16
    target_style: str = "paper"
    actor_style: str = "paper"
    noise_coeff: str = "half_var"
    latent_clip: float = 5.0
    clip_grad: str = "straight"
    eval_greedy: bool = True
    # DQN baseline
    dqn_target_interval: int = 200
    dqn_eps_start: float = 1.0
    dqn_eps_end: float = 0.01
    dqn_eps_decay_frac: float = 0.5

    def validate(self) -> Hyperparams:
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {self.episodes}")
        if self.buffer_size < self.batch_size:
            raise ConfigError("buffer_size must be >= batch_size")
        if self.target_style not in TARGET_STYLES:
            raise ConfigError(f"target_style must be one of {TARGET_STYLES}")
        if self.actor_style not in ACTOR_STYLES:
            raise ConfigError(f"actor_style must be one of {ACTOR_STYLES}")
        if self.noise_coeff not in NOISE_COEFFS:
            raise ConfigError(f"unknown noise_coeff {self.noise_coeff!r}")
        if self.clip_grad not in CLIP_GRADS:
            raise ConfigError(f"unknown clip_grad {self.clip_grad!r}")
        if self.latent_clip <= 0:
            raise ConfigError(f"latent_clip must be > 0, got {self.latent_clip}")
        return self


@dataclass
class Transition:
    s: Observation
    x_I: np.ndarray
    a: Action
    r: float
    s_next: Observation
    x_I_next: np.ndarray
    done: bool = False


@dataclass
class Batch:
    obs: np.ndarray
    x: np.ndarray
    a: np.ndarray
    r: np.ndarray
    obs_next: np.ndarray
    x_next: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return self.a.size


class ReplayBuffer:
    """Fixed-capacity ring buffer; the oldest transition is evicted first."""

    def __init__(self, capacity: int, obs_dim: int, num_nodes: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.x = np.zeros((capacity, num_nodes))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.obs_next = np.zeros((capacity, obs_dim))
        self.x_next = np.zeros((capacity, num_nodes))
        self.done = np.zeros(capacity, dtype=bool)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def push(self, t: Transition) -> None:
        if not np.isfinite(t.r):
            raise ValueError(f"non-finite reward {t.r}")
        k = self.inserted % self.capacity
        self.obs[k] = t.s.normalized
        self.x[k] = t.x_I
        self.a[k] = t.a.index
        self.r[k] = t.r
        self.obs_next[k] = t.s_next.normalized
        self.x_next[k] = t.x_I_next
        self.done[k] = t.done
        self.inserted += 1

    def rows(self, idx: np.ndarray) -> Batch:
        return Batch(self.obs[idx], self.x[idx], self.a[idx], self.r[idx],
                     self.obs_next[idx], self.x_next[idx], self.done[idx])

    def sample(self, k: int, rng: np.random.Generator) -> Batch:
        size = len(self)
        if size < k:
            raise InsufficientDataError(f"buffer holds {size} transitions, batch needs {k}")
        return self.rows(rng.integers(0, size, size=k))

    def ordered(self) -> Batch:
        """All stored transitions, oldest first."""
        n = len(self)
        start = self.inserted - n
        return self.rows(np.arange(start, start + n) % self.capacity)


def push(buffer: ReplayBuffer, t: Transition) -> None:
    buffer.push(t)


def sample(buffer: ReplayBuffer, k: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(k, rng)


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats along the last axis; 0*log 0 counts as 0."""
    p = np.asarray(probs, dtype=np.float64)
    logs = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logs, axis=-1)


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    c = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0]) * c[:, -1]
    idx = np.sum(c <= u[:, None], axis=-1)
    return np.minimum(idx, probs.shape[1] - 1)


# ---------------------------------------------------------------- actors

class DiffusionActor:
    """Reverse-chain actor: logits are x_0 of the denoising chain."""

    uses_latent = True

    def __init__(self, net: PolicyNet, sched: BetaSchedule, noise_coeff: str = "half_var",
                 clip: float | None = 5.0, clip_grad: str = "straight"):
        self.net = net
        self.sched = sched
        self.noise_coeff = noise_coeff
        self.clip = clip
        self.clip_grad = clip_grad

    @property
    def params(self) -> MlpParams:
        return self.net.params

    @params.setter
    def params(self, value: MlpParams) -> None:
        self.net.params = value

    def draw_noise(self, shape, rng):
        return draw_chain_noise(shape, self.sched, rng)

    def logits(self, obs, x, noise=None):
        x0, trace = reverse_chain(x, obs, self.net, self.sched, noise=noise,
                                  noise_coeff=self.noise_coeff, clip=self.clip,
                                  clip_grad=self.clip_grad)
        return x0, trace

    def backward(self, ctx, grad_logits) -> MlpParams:
        grads, _ = chain_backward(self.net, self.sched, ctx, grad_logits)
        return grads


class SoftmaxActor:
    """Plain MLP actor over the observation (no latent input)."""

    uses_latent = False

    def __init__(self, params: MlpParams):
        self.params = params

    @classmethod
    def create(cls, obs_dim: int, num_nodes: int, rng, hidden=(20, 20)) -> SoftmaxActor:
        return cls(init_mlp([obs_dim, *hidden, num_nodes], rng))

    def draw_noise(self, shape, rng):
        return None

    def logits(self, obs, x=None, noise=None):
        return mlp_forward(self.params, obs)

    def backward(self, ctx, grad_logits) -> MlpParams:
        return mlp_backward(self.params, ctx, grad_logits).params


# ---------------------------------------------------------------- critics

def critic_input(obs: np.ndarray, actions: np.ndarray, num_nodes: int) -> np.ndarray:
    onehot = np.zeros((actions.size, num_nodes))
    onehot[np.arange(actions.size), actions] = 1.0
    return np.concatenate([obs, onehot], axis=1)


def critic_values(params: MlpParams, obs: np.ndarray, actions: np.ndarray, num_nodes: int):
    q, cache = mlp_forward(params, critic_input(obs, actions, num_nodes))
    return q[:, 0], cache


def critic_all_actions(params: MlpParams, obs: np.ndarray, num_nodes: int) -> np.ndarray:
    """Q(s, a) for every action; shape (K, B)."""
    k = obs.shape[0]
    rep = np.repeat(obs, num_nodes, axis=0)
    acts = np.tile(np.arange(num_nodes), k)
    q, _ = mlp_forward(params, critic_input(rep, acts, num_nodes))
    return q[:, 0].reshape(k, num_nodes)


def q_target(batch: Batch, actor, targets: list[MlpParams], hp: Hyperparams, alpha: float,
             rng: np.random.Generator, noise=None) -> np.ndarray:
    """Bootstrapped regression target per sample; terminal samples get r."""
    num_nodes = batch.x.shape[1]
    if noise is None:
        noise = actor.draw_noise(batch.x_next.shape, rng)
    logits, _ = actor.logits(batch.obs_next, batch.x_next, noise)
    probs = softmax(logits)
    h_next = entropy(probs)
    if hp.target_style == "paper":
        a_next = sample_rows(probs, rng)
        q_min = np.minimum(*(critic_values(t, batch.obs_next, a_next, num_nodes)[0]
                             for t in targets))
        pi_a = probs[np.arange(len(batch)), a_next]
        boot = pi_a * q_min + alpha * h_next
    else:
        q_min = np.minimum(*(critic_all_actions(t, batch.obs_next, num_nodes) for t in targets))
        boot = np.sum(probs * q_min, axis=1) + alpha * h_next
    return np.where(batch.done, batch.r, batch.r + hp.gamma * boot)


def critic_loss(batch: Batch, critic: MlpParams, targets_vec: np.ndarray):
    """Mean squared error of one critic against fixed targets -> (loss, grads)."""
    num_nodes = batch.x.shape[1]
    q, cache = critic_values(critic, batch.obs, batch.a, num_nodes)
    diff = q - targets_vec
    k = diff.size
    loss = float(np.mean(diff ** 2))
    grads = mlp_backward(critic, cache, (2.0 / k * diff)[:, None]).params
    return loss, grads


def actor_loss(batch: Batch, actor, critics: list[MlpParams], alpha: float, hp: Hyperparams,
               rng: np.random.Generator | None = None, noise=None):
    """Actor objective on stored (s, x_I, a). Returns ``(loss, grads, mean entropy)``.

    Critic values enter as constants; gradients flow only into the actor.
    """
    num_nodes = batch.x.shape[1]
    k = len(batch)
    if noise is None:
        noise = actor.draw_noise(batch.x.shape, rng)
    logits, ctx = actor.logits(batch.obs, batch.x, noise)
    logp = log_softmax(logits)
    probs = np.exp(logp)
    h = -np.sum(probs * logp, axis=1)
    # dH/dlogits = -pi * (log pi + H)
    dh = -probs * (logp + h[:, None])
    if hp.actor_style == "paper":
        q_eval = np.minimum(*(critic_values(c, batch.obs, batch.a, num_nodes)[0] for c in critics))
        rows = np.arange(k)
        pi_a = probs[rows, batch.a]
        res = -alpha * h - pi_a * q_eval
        loss = float(np.mean(res ** 2))
        dpi_a = -probs * pi_a[:, None]
        dpi_a[rows, batch.a] += pi_a
        dres = -alpha * dh - q_eval[:, None] * dpi_a
        grad_logits = (2.0 / k) * res[:, None] * dres
    else:
        q_all = np.minimum(*(critic_all_actions(c, batch.obs, num_nodes) for c in critics))
        f = alpha * logp - q_all
        loss = float(np.mean(np.sum(probs * f, axis=1)))
        grad_logits = probs * (f - np.sum(probs * f, axis=1, keepdims=True)) / k
    grads = actor.backward(ctx, grad_logits)
    return loss, grads, float(np.mean(h))


def alpha_update(h_batch: float, hp: Hyperparams, alpha: float) -> float:
    """One gradient step on (-H - H_target) * alpha, floored at ALPHA_FLOOR."""
    return max(alpha - hp.lr_alpha * (-h_batch - hp.target_entropy), ALPHA_FLOOR)


class SacAgent:
    """Actor, serving copy, twin critics and targets for one base station."""

    def __init__(self, actor, obs_dim: int, num_nodes: int, hp: Hyperparams,
                 rng: np.random.Generator):
        self.actor = actor
        self.hp = hp
        self.num_nodes = num_nodes
        self.serving = copy_params(actor.params)
        sizes = [obs_dim + num_nodes, *hp.hidden, 1]
        self.critics = [init_mlp(sizes, rng), init_mlp(sizes, rng)]
        self.targets = [copy_params(c) for c in self.critics]
        self.critic_opt = [AdamState.for_params(c, hp.lr_critic) for c in self.critics]
        self.actor_opt = AdamState.for_params(actor.params, hp.lr_actor)
        self.alpha = hp.alpha
        self.buffer = ReplayBuffer(hp.buffer_size, obs_dim, num_nodes)
        self.updates = 0

    def ready(self) -> bool:
        n = len(self.buffer)
        return n > self.hp.warmup and n >= self.hp.batch_size

    def train_step(self, rng: np.random.Generator) -> dict | None:
        if not self.ready():
            return None
        hp = self.hp
        batch = self.buffer.sample(hp.batch_size, rng)
        y = q_target(batch, self.actor, self.targets, hp, self.alpha, rng)
        c_losses = []
        for j in range(2):
            loss, grads = critic_loss(batch, self.critics[j], y)
            self.critics[j] = adam_step(self.critics[j], grads, self.critic_opt[j])
            c_losses.append(loss)
        a_loss, a_grads, h = actor_loss(batch, self.actor, self.critics, self.alpha, hp, rng)
        self.actor.params = adam_step(self.actor.params, a_grads, self.actor_opt)
        self.alpha = alpha_update(h, hp, self.alpha)
        self.targets = [soft_update(t, c, hp.tau) for t, c in zip(self.targets, self.critics)]
        self.serving = copy_params(self.actor.params)
        self.updates += 1
        return {"critic_loss": c_losses, "actor_loss": a_loss, "alpha": self.alpha, "entropy": h}


def train_step(agent: SacAgent, rng: np.random.Generator) -> dict | None:
    return agent.train_step(rng)
