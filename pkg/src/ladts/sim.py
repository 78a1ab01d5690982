"""Time-slotted edge environment: task arrivals, service delay and queue evolution.

Nodes are indexed from 0. Slots run 1..horizon. Within a slot, every task
routed to node ``b'`` waits behind the node's backlog from the end of the
previous slot plus everything already accepted earlier in the same slot;
backlogs only drain at the slot boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class EnvConfig:
    num_nodes: int = 20
    horizon: int = 60
    slot_seconds: float = 1.0
    tasks_per_bs: tuple[int, int] = (1, 50)
    data_mbits: tuple[float, float] = (2.0, 5.0)
    result_mbits: tuple[float, float] = (0.6, 1.0)
    quality_steps: tuple[int, int] = (1, 15)
    # per-step compute cost, in units of ``cycle_scale`` cycles
    cycles_per_step: tuple[float, float] = (100.0, 300.0)
    cycle_scale: float = 1e6
    rate_mbps: tuple[float, float] = (400.0, 500.0)
    capacity_ghz: tuple[float, float] = (10.0, 50.0)

    def validate(self) -> EnvConfig:
        if self.num_nodes < 1:
            raise ConfigError(f"num_nodes must be >= 1, got {self.num_nodes}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.slot_seconds <= 0:
            raise ConfigError(f"slot_seconds must be > 0, got {self.slot_seconds}")
        if self.cycle_scale <= 0:
            raise ConfigError(f"cycle_scale must be > 0, got {self.cycle_scale}")
        for name in ("tasks_per_bs", "data_mbits", "result_mbits", "quality_steps",
                     "cycles_per_step", "rate_mbps", "capacity_ghz"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: min {lo} > max {hi}")
            if lo <= 0:
                raise ConfigError(f"{name}: values must be positive, got min {lo}")
        return self

    @property
    def max_tasks(self) -> int:
        return int(self.tasks_per_bs[1])

    @property
    def max_workload(self) -> float:
        return self.cycles_per_step[1] * self.cycle_scale * self.quality_steps[1]


@dataclass(frozen=True)
class Task:
    id: int
    origin_bs: int
    slot: int
    arrival_index: int
    data_bits: float
    result_bits: float
    quality_steps: int
    cycles_per_step: float

    @property
    def workload(self) -> float:
        return self.cycles_per_step * self.quality_steps


@dataclass(frozen=True)
class EdgeNode:
    id: int
    capacity_hz: float


@dataclass
class LinkRates:
    """Bits/s for every ordered node pair, per slot; ``rates[t-1, b, b']``."""

    rates: np.ndarray

    def rate(self, b: int, b2: int, t: int) -> float:
        return self.rates[t - 1, b, b2]


@dataclass
class SlotClock:
    t: int
    slot_seconds: float
    horizon: int
    finished: bool = False


@dataclass
class SlotState:
    backlog: np.ndarray
    within_slot: np.ndarray

    def copy(self) -> SlotState:
        return SlotState(self.backlog.copy(), self.within_slot.copy())


@dataclass
class Observation:
    raw: np.ndarray
    normalized: np.ndarray


@dataclass(frozen=True)
class Action:
    index: int
    size: int

    def __post_init__(self):
        if not 0 <= self.index < self.size:
            raise ValueError(f"action index {self.index} outside [0, {self.size})")

    @property
    def one_hot(self) -> np.ndarray:
        v = np.zeros(self.size)
        v[self.index] = 1.0
        return v

    @classmethod
    def from_one_hot(cls, vec) -> Action:
        vec = np.asarray(vec)
        hot = np.flatnonzero(vec == 1)
        if hot.size != 1 or np.count_nonzero(vec) != 1:
            raise ValueError(f"action must have exactly one active entry: {vec}")
        return cls(int(hot[0]), vec.size)


@dataclass(frozen=True)
class StepOutcome:
    service_delay_s: float
    reward: float
    target_node: int


def generate_tasks(slot: int, rng: np.random.Generator, cfg: EnvConfig,
                   first_id: int = 0) -> list[list[Task]]:
    """Draw one slot of arrivals, one list per base station.

    Every base station gets its own child stream and the k-th task always
    consumes the same four uniforms, so widening a range (more tasks, more
    steps) keeps the earlier draws and moves sampled values monotonically.
    """
    cfg.validate()
    out = []
    next_id = first_id
    seeds = rng.integers(0, 2 ** 63, size=cfg.num_nodes)
    for b in range(cfg.num_nodes):
        child = np.random.default_rng(seeds[b])
        n = _uniform_int(child.random(), cfg.tasks_per_bs)
        u = child.random((n, 4))
        data = _scale(u[:, 0], cfg.data_mbits) * 1e6
        result = _scale(u[:, 1], cfg.result_mbits) * 1e6
        steps = [_uniform_int(v, cfg.quality_steps) for v in u[:, 2]]
        rho = _scale(u[:, 3], cfg.cycles_per_step) * cfg.cycle_scale
        tasks = [Task(next_id + k, b, slot, k, float(data[k]), float(result[k]),
                      steps[k], float(rho[k])) for k in range(n)]
        next_id += n
        out.append(tasks)
    return out


def _scale(u, bounds):
    lo, hi = bounds
    return lo + (hi - lo) * u


def _uniform_int(u: float, bounds) -> int:
    lo, hi = int(bounds[0]), int(bounds[1])
    return min(lo + int(u * (hi - lo + 1)), hi)


def sample_link_rates(rng: np.random.Generator, cfg: EnvConfig) -> LinkRates:
    b = cfg.num_nodes
    return LinkRates(rng.uniform(*cfg.rate_mbps, size=(cfg.horizon, b, b)) * 1e6)


def sample_nodes(rng: np.random.Generator, cfg: EnvConfig) -> list[EdgeNode]:
    caps = rng.uniform(*cfg.capacity_ghz, size=cfg.num_nodes) * 1e9
    return [EdgeNode(i, float(c)) for i, c in enumerate(caps)]


def observation_scale(cfg: EnvConfig, nodes: list[EdgeNode]) -> np.ndarray:
    """Divisors turning a raw observation into the normalized one."""
    mean_cap = float(np.mean([n.capacity_hz for n in nodes]))
    backlog_scale = mean_cap * cfg.slot_seconds * cfg.horizon
    return np.concatenate([[cfg.data_mbits[1] * 1e6, cfg.max_workload],
                           np.full(cfg.num_nodes, backlog_scale)])


def reset(cfg: EnvConfig) -> tuple[SlotState, SlotClock]:
    cfg.validate()
    z = np.zeros(cfg.num_nodes)
    return SlotState(z, z.copy()), SlotClock(1, cfg.slot_seconds, cfg.horizon)


def observe(task: Task, state: SlotState, scale: np.ndarray) -> Observation:
    raw = np.empty(state.backlog.size + 2)
    raw[0] = task.data_bits
    raw[1] = task.workload
    raw[2:] = state.backlog
    return Observation(raw, raw / scale)


def waiting_time(target: int, state: SlotState, node: EdgeNode) -> float:
    return (state.backlog[target] + state.within_slot[target]) / node.capacity_hz


def service_delay(task: Task, action: Action, state: SlotState, links: LinkRates,
                  nodes: list[EdgeNode]) -> float:
    b, b2, t = task.origin_bs, action.index, task.slot
    node = nodes[b2]
    return (task.data_bits / links.rate(b, b2, t)
            + task.workload / node.capacity_hz
            + waiting_time(b2, state, node)
            + task.result_bits / links.rate(b2, b, t))


def apply_decision(task: Task, action: Action, state: SlotState, links: LinkRates,
                   nodes: list[EdgeNode]) -> StepOutcome:
    """Score the placement, then book its workload into the node's slot queue."""
    delay = service_delay(task, action, state, links, nodes)
    state.within_slot[action.index] += task.workload
    return StepOutcome(delay, -delay, action.index)


def advance_slot(state: SlotState, nodes: list[EdgeNode], clock: SlotClock) -> SlotState:
    caps = np.array([n.capacity_hz for n in nodes])
    backlog = np.maximum(state.backlog + state.within_slot - caps * clock.slot_seconds, 0.0)
    if clock.t < clock.horizon:
        clock.t += 1
    else:
        clock.finished = True
    return SlotState(backlog, np.zeros_like(state.within_slot))


@dataclass
class EdgeEnv:
    """One environment instance: fixed node capacities, per-episode arrivals.

    Capacities are drawn once from ``seed``; each ``reset(episode)`` draws a
    fresh task stream and link-rate table from ``(seed, episode)`` so every
    method sees the same arrivals in the same episode.
    """

    cfg: EnvConfig
    seed: int = 0
    nodes: list[EdgeNode] = field(init=False)
    scale: np.ndarray = field(init=False)

    def __post_init__(self):
        self.cfg.validate()
        self.nodes = sample_nodes(np.random.default_rng([self.seed, 0]), self.cfg)
        self.capacities = np.array([n.capacity_hz for n in self.nodes])
        self.scale = observation_scale(self.cfg, self.nodes)
        self.reset(0)

    def reset(self, episode: int = 0) -> None:
        rng = np.random.default_rng([self.seed, 1, episode])
        self.tasks: list[list[list[Task]]] = []
        first = 0
        for t in range(1, self.cfg.horizon + 1):
            slot = generate_tasks(t, rng, self.cfg, first)
            first += sum(len(x) for x in slot)
            self.tasks.append(slot)
        self.links = sample_link_rates(rng, self.cfg)
        self.state, self.clock = reset(self.cfg)

    def slot_tasks(self, b: int) -> list[Task]:
        return self.tasks[self.clock.t - 1][b]

    def observe(self, task: Task) -> Observation:
        return observe(task, self.state, self.scale)

    def delays_for(self, task: Task) -> np.ndarray:
        """Service delay of ``task`` on every node under the current state."""
        b, t = task.origin_bs, task.slot
        rates = self.links.rates[t - 1]
        return (task.data_bits / rates[b, :]
                + task.workload / self.capacities
                + (self.state.backlog + self.state.within_slot) / self.capacities
                + task.result_bits / rates[:, b])

    def apply(self, task: Task, action: Action) -> StepOutcome:
        return apply_decision(task, action, self.state, self.links, self.nodes)

    def advance(self) -> None:
        self.state = advance_slot(self.state, self.nodes, self.clock)

    def with_config(self, **changes) -> EdgeEnv:
        return EdgeEnv(replace(self.cfg, **changes), self.seed)
