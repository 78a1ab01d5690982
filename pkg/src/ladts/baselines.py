"""Schedulers behind one interface: LAD-TS and the four comparison methods.

A policy owns one agent per base station. The harness calls
``select`` for every arrival, ``learn`` with each completed transition and
``train`` once per base station per slot.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import (
    LatentStore, PolicyNet, build_schedule, draw_chain_noise, infer_chain, sample_index, softmax,
)
from .nn import (
    AdamState, MlpParams, adam_step, copy_params, init_mlp, load_snapshot, mlp_backward,
    mlp_forward, save_snapshot,
)
from .sac import DiffusionActor, Hyperparams, ReplayBuffer, SacAgent, SoftmaxActor, Transition
from .sim import Action, ConfigError, EdgeEnv, EnvConfig, Observation, Task

METHODS = ("lad", "d2sac", "sac", "dqn", "opt")


@dataclass
class Decision:
    action: Action
    x_I: np.ndarray
    x_0: np.ndarray | None = None


class SchedulerPolicy:
    name = "base"
    learns = True

    def __init__(self, env_cfg: EnvConfig, hp: Hyperparams, seed: int):
        self.env_cfg = env_cfg
        self.hp = hp
        self.seed = seed
        self.num_nodes = env_cfg.num_nodes
        self.obs_dim = env_cfg.num_nodes + 2
        self.act_rng = np.random.default_rng([seed, 2])
        self.train_rng = np.random.default_rng([seed, 3])
        self.progress = 0.0

    def begin_episode(self, episode: int, total: int) -> None:
        self.progress = episode / max(total, 1)

    def select(self, b: int, obs: Observation, task: Task, env: EdgeEnv,
               training: bool = True) -> Decision:
        raise NotImplementedError

    def learn(self, b: int, transition: Transition) -> None:
        pass

    def train(self, b: int) -> dict | None:
        return None

    def networks(self) -> dict[str, MlpParams]:
        return {}

    def save(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        for name, params in self.networks().items():
            save_snapshot(params, directory / f"{name}.ckpt")

    def load(self, directory: Path) -> None:
        pass

    def _choose(self, probs: np.ndarray, training: bool) -> int:
        if training or not self.hp.eval_greedy:
            return sample_index(probs, self.act_rng)
        return int(np.argmax(probs))


# ---------------------------------------------------------------- opt

def opt_select(task: Task, env: EdgeEnv) -> Action:
    """Node with the smallest service delay under the true current state."""
    delays = env.delays_for(task)
    return Action(int(np.argmin(delays)), delays.size)


class OptPolicy(SchedulerPolicy):
    name = "opt"
    learns = False

    def select(self, b, obs, task, env, training=True):
        return Decision(opt_select(task, env), np.zeros(self.num_nodes))


# ---------------------------------------------------------------- SAC family

class _SacFamily(SchedulerPolicy):
    def __init__(self, env_cfg, hp, seed):
        super().__init__(env_cfg, hp, seed)
        self.agents: list[SacAgent] = []
        for b in range(self.num_nodes):
            rng = np.random.default_rng([seed, 4, b])
            self.agents.append(SacAgent(self.make_actor(rng), self.obs_dim, self.num_nodes, hp, rng))

    def make_actor(self, rng):
        raise NotImplementedError

    def learn(self, b, transition):
        self.agents[b].buffer.push(transition)

    def train(self, b):
        return self.agents[b].train_step(self.train_rng)

    def networks(self):
        out = {}
        for b, ag in enumerate(self.agents):
            out[f"{b}_actor"] = ag.actor.params
            out[f"{b}_serving"] = ag.serving
            out[f"{b}_critic1"], out[f"{b}_critic2"] = ag.critics
            out[f"{b}_target1"], out[f"{b}_target2"] = ag.targets
        return out

    def load(self, directory):
        for b, ag in enumerate(self.agents):
            ag.actor.params = load_snapshot(directory / f"{b}_actor.ckpt")
            ag.serving = load_snapshot(directory / f"{b}_serving.ckpt")
            ag.critics = [load_snapshot(directory / f"{b}_critic{j}.ckpt") for j in (1, 2)]
            ag.targets = [load_snapshot(directory / f"{b}_target{j}.ckpt") for j in (1, 2)]


class LadPolicy(_SacFamily):
    """Diffusion actor seeded with the previous x_0 at the same arrival slot."""

    name = "lad"
    fresh_latent = False

    def __init__(self, env_cfg, hp, seed):
        self.sched = build_schedule(hp.denoising_steps, hp.beta_min, hp.beta_max)
        super().__init__(env_cfg, hp, seed)
        self.latents = LatentStore(self.num_nodes, env_cfg.max_tasks, self.num_nodes,
                                   np.random.default_rng([seed, 5]))

    def make_actor(self, rng):
        net = PolicyNet.create(self.num_nodes, rng, self.hp.hidden, self.hp.embed_dim)
        return DiffusionActor(net, self.sched, self.hp.noise_coeff, self.hp.latent_clip,
                              self.hp.clip_grad)

    def next_latent(self, b: int, n: int) -> np.ndarray:
        if self.fresh_latent:
            return self.act_rng.standard_normal(self.num_nodes)
        return self.latents.fetch(b, n)

    def select(self, b, obs, task, env, training=True):
        x_I = self.next_latent(b, task.arrival_index)
        ag = self.agents[b]
        net = PolicyNet(ag.serving, self.num_nodes, self.hp.embed_dim)
        noise = draw_chain_noise(x_I.shape, self.sched, self.act_rng)
        x0 = infer_chain(x_I, obs.normalized, net, self.sched, noise, self.hp.noise_coeff,
                         self.hp.latent_clip)
        if not self.fresh_latent:
            self.latents.update(b, task.arrival_index, x0)
        probs = softmax(x0)
        return Decision(Action(self._choose(probs, training), self.num_nodes), x_I, x0)

    def save(self, directory):
        super().save(directory)
        np.save(directory / "latents.npy", self.latents.data)

    def load(self, directory):
        super().load(directory)
        path = directory / "latents.npy"
        if path.exists():
            self.latents.data = np.load(path)


class D2sacPolicy(LadPolicy):
    """Same diffusion actor, but every chain starts from fresh Gaussian noise."""

    name = "d2sac"
    fresh_latent = True

    def save(self, directory):
        _SacFamily.save(self, directory)

    def load(self, directory):
        _SacFamily.load(self, directory)


class SacPolicy(_SacFamily):
    name = "sac"

    def make_actor(self, rng):
        return SoftmaxActor.create(self.obs_dim, self.num_nodes, rng, self.hp.hidden)

    def select(self, b, obs, task, env, training=True):
        logits, _ = mlp_forward(self.agents[b].serving, obs.normalized)
        probs = softmax(logits)
        return Decision(Action(self._choose(probs, training), self.num_nodes),
                        np.zeros(self.num_nodes))


# ---------------------------------------------------------------- DQN

def dqn_loss(batch, qnet: MlpParams, target: MlpParams, gamma: float):
    """Squared TD error against a frozen target network -> (loss, grads)."""
    k = len(batch)
    rows = np.arange(k)
    q_next, _ = mlp_forward(target, batch.obs_next)
    y = batch.r + gamma * np.where(batch.done, 0.0, q_next.max(axis=1))
    q, cache = mlp_forward(qnet, batch.obs)
    diff = q[rows, batch.a] - y
    g = np.zeros_like(q)
    g[rows, batch.a] = 2.0 / k * diff
    return float(np.mean(diff ** 2)), mlp_backward(qnet, cache, g).params


class DqnAgent:
    def __init__(self, obs_dim, num_nodes, hp: Hyperparams, rng):
        self.hp = hp
        self.qnet = init_mlp([obs_dim, *hp.hidden, num_nodes], rng)
        self.target = copy_params(self.qnet)
        self.opt = AdamState.for_params(self.qnet, hp.lr_critic)
        self.buffer = ReplayBuffer(hp.buffer_size, obs_dim, num_nodes)
        self.updates = 0

    def train_step(self, rng) -> dict | None:
        n = len(self.buffer)
        if n <= self.hp.warmup or n < self.hp.batch_size:
            return None
        batch = self.buffer.sample(self.hp.batch_size, rng)
        loss, grads = dqn_loss(batch, self.qnet, self.target, self.hp.gamma)
        self.qnet = adam_step(self.qnet, grads, self.opt)
        self.updates += 1
        if self.updates % self.hp.dqn_target_interval == 0:
            self.target = copy_params(self.qnet)
        return {"td_loss": loss}


class DqnPolicy(SchedulerPolicy):
    name = "dqn"

    def __init__(self, env_cfg, hp, seed):
        super().__init__(env_cfg, hp, seed)
        self.agents = [DqnAgent(self.obs_dim, self.num_nodes, hp, np.random.default_rng([seed, 4, b]))
                       for b in range(self.num_nodes)]

    @property
    def epsilon(self) -> float:
        hp = self.hp
        span = hp.dqn_eps_decay_frac
        frac = min(self.progress / span, 1.0) if span > 0 else 1.0
        return hp.dqn_eps_start + (hp.dqn_eps_end - hp.dqn_eps_start) * frac

    def select(self, b, obs, task, env, training=True):
        eps = self.epsilon if training else 0.0
        if eps > 0 and self.act_rng.random() < eps:
            idx = int(self.act_rng.integers(self.num_nodes))
        else:
            q, _ = mlp_forward(self.agents[b].qnet, obs.normalized)
            idx = int(np.argmax(q))
        return Decision(Action(idx, self.num_nodes), np.zeros(self.num_nodes))

    def learn(self, b, transition):
        self.agents[b].buffer.push(transition)

    def train(self, b):
        return self.agents[b].train_step(self.train_rng)

    def networks(self):
        out = {}
        for b, ag in enumerate(self.agents):
            out[f"{b}_qnet"] = ag.qnet
            out[f"{b}_qtarget"] = ag.target
        return out

    def load(self, directory):
        for b, ag in enumerate(self.agents):
            ag.qnet = load_snapshot(directory / f"{b}_qnet.ckpt")
            ag.target = load_snapshot(directory / f"{b}_qtarget.ckpt")


_REGISTRY = {"lad": LadPolicy, "d2sac": D2sacPolicy, "sac": SacPolicy, "dqn": DqnPolicy,
             "opt": OptPolicy}


def make_policy(method: str, env_cfg: EnvConfig, hp: Hyperparams, seed: int) -> SchedulerPolicy:
    try:
        cls = _REGISTRY[method]
    except KeyError:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}") from None
    return cls(env_cfg, hp, seed)
