"""Experiment orchestration: episode loop, training runs, sweeps, CSV output."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .baselines import METHODS, SchedulerPolicy, make_policy
from .sac import Hyperparams, Transition
from .sim import ConfigError, EdgeEnv, EnvConfig

log = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "seed", "sweep_param", "sweep_value", "episode", "mean_delay_s",
               "convergence_episode", "wall_ms")
SWEEP_PARAMS = ("N_max", "f_max", "z_max", "B", "I", "alpha")

CONV_WINDOW = 5
CONV_FINAL = 10
CONV_TOL = 0.05


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    hp: Hyperparams = field(default_factory=Hyperparams)
    method: str = "lad"
    seed: int = 0
    num_seeds: int = 5
    out_dir: str | None = None
    record_wall: bool = False

    def validate(self) -> ExperimentConfig:
        self.env.validate()
        self.hp.validate()
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.num_seeds < 1:
            raise ConfigError("num_seeds must be >= 1")
        return self

    def to_dict(self) -> dict:
        return {"env": asdict(self.env), "hp": asdict(self.hp), "method": self.method,
                "seed": self.seed, "num_seeds": self.num_seeds}

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        env = EnvConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["env"].items()})
        hp = Hyperparams(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["hp"].items()})
        return cls(env, hp, d["method"], d["seed"], d.get("num_seeds", 5))


_ENV_KEYS = {f.name for f in fields(EnvConfig)}
_HP_KEYS = {f.name for f in fields(Hyperparams)}
_TOP_KEYS = {"method", "seed", "num_seeds", "out_dir", "record_wall"}


def apply_overrides(cfg: ExperimentConfig, values: dict) -> ExperimentConfig:
    """Route flat ``key: value`` pairs onto the env, hyperparameter or top level."""
    env_kw, hp_kw, top_kw = {}, {}, {}
    for key, value in values.items():
        if isinstance(value, list):
            value = tuple(value)
        if key in _ENV_KEYS:
            env_kw[key] = value
        elif key in _HP_KEYS:
            hp_kw[key] = value
        elif key in _TOP_KEYS:
            top_kw[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return replace(cfg, env=replace(cfg.env, **env_kw), hp=replace(cfg.hp, **hp_kw), **top_kw)


def load_config(path: str | Path | None, **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a flat key-value mapping")
        cfg = apply_overrides(cfg, data)
    cfg = apply_overrides(cfg, {k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()


@dataclass
class MetricsRow:
    method: str
    seed: int
    episode: int
    mean_delay_s: float
    sweep_param: str = ""
    sweep_value: float | str = ""
    convergence_episode: int = 0
    wall_ms: float = 0.0


@dataclass
class ConvergenceSummary:
    convergence_episode: int
    final_delay: float


@dataclass
class EpisodeStats:
    delays: list[float]
    reward_sum: float
    decisions: int
    select_seconds: float


def run_episode(policy: SchedulerPolicy, env: EdgeEnv, episode: int, total_episodes: int = 1,
                training: bool = True) -> EpisodeStats:
    """One pass over every slot, base station and arrival.

    A transition is completed when the next decision at the same base station
    is observed, so its next-state and next-latent are exactly what that
    decision consumed. Each base station's last transition of the episode is
    stored as terminal.
    """
    env.reset(episode)
    policy.begin_episode(episode, total_episodes)
    store = training and policy.learns
    B = env.cfg.num_nodes
    pending: list[tuple | None] = [None] * B
    delays: list[float] = []
    reward_sum = 0.0
    select_s = 0.0
    for _ in range(env.cfg.horizon):
        for b in range(B):
            for task in env.slot_tasks(b):
                obs = env.observe(task)
                t0 = time.perf_counter()
                dec = policy.select(b, obs, task, env, training)
                select_s += time.perf_counter() - t0
                out = env.apply(task, dec.action)
                if store and pending[b] is not None:
                    s, x, a, r = pending[b]
                    policy.learn(b, Transition(s, x, a, r, obs, dec.x_I, False))
                pending[b] = (obs, dec.x_I, dec.action, out.reward)
                delays.append(out.service_delay_s)
                reward_sum += out.reward
            if training:
                policy.train(b)
        env.advance()
    if store:
        for b in range(B):
            if pending[b] is not None:
                s, x, a, r = pending[b]
                policy.learn(b, Transition(s, x, a, r, s, x, True))
    return EpisodeStats(delays, reward_sum, len(delays), select_s)


def convergence(delays: list[float]) -> ConvergenceSummary:
    """First episode whose trailing moving average sits within 5% of the final mean."""
    if not delays:
        raise ValueError("no episodes to summarise")
    d = np.asarray(delays, dtype=np.float64)
    final = float(np.mean(d[-CONV_FINAL:]))
    for e in range(len(d)):
        ma = np.mean(d[max(0, e - CONV_WINDOW + 1):e + 1])
        if abs(ma - final) <= CONV_TOL * abs(final):
            return ConvergenceSummary(e + 1, final)
    return ConvergenceSummary(len(d), final)


@dataclass
class TrainingResult:
    rows: list[MetricsRow]
    summary: ConvergenceSummary
    policy: SchedulerPolicy


def run_training(cfg: ExperimentConfig, sweep_param: str = "", sweep_value: float | str = "",
                 checkpoint_dir: str | Path | None = None) -> TrainingResult:
    cfg.validate()
    env = EdgeEnv(cfg.env, cfg.seed)
    policy = make_policy(cfg.method, cfg.env, cfg.hp, cfg.seed)
    rows = []
    E = cfg.hp.episodes
    for ep in range(E):
        t0 = time.perf_counter()
        stats = run_episode(policy, env, ep, E, training=True)
        wall = (time.perf_counter() - t0) * 1e3 if cfg.record_wall else 0.0
        mean = float(np.mean(stats.delays))
        rows.append(MetricsRow(cfg.method, cfg.seed, ep + 1, mean, sweep_param, sweep_value,
                               0, wall))
        log.debug("%s seed=%d episode=%d delay=%.4f", cfg.method, cfg.seed, ep + 1, mean)
    summary = convergence([r.mean_delay_s for r in rows])
    for r in rows:
        r.convergence_episode = summary.convergence_episode
    if checkpoint_dir is not None:
        save_checkpoint(cfg, policy, Path(checkpoint_dir))
    return TrainingResult(rows, summary, policy)


def save_checkpoint(cfg: ExperimentConfig, policy: SchedulerPolicy, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    policy.save(directory)
    (directory / "run.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


def evaluate_checkpoint(directory: str | Path, episodes: int = 5, eval_greedy: bool | None = None,
                        record_wall: bool = False) -> list[MetricsRow]:
    """Replay a saved policy without learning on fresh episodes."""
    directory = Path(directory)
    try:
        cfg = ExperimentConfig.from_dict(json.loads((directory / "run.json").read_text()))
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {directory}: {exc}") from exc
    if eval_greedy is not None:
        cfg.hp = replace(cfg.hp, eval_greedy=eval_greedy)
    policy = make_policy(cfg.method, cfg.env, cfg.hp, cfg.seed)
    policy.load(directory)
    env = EdgeEnv(cfg.env, cfg.seed)
    rows = []
    for k in range(episodes):
        ep = cfg.hp.episodes + k
        t0 = time.perf_counter()
        stats = run_episode(policy, env, ep, cfg.hp.episodes, training=False)
        wall = (time.perf_counter() - t0) * 1e3 if record_wall else 0.0
        rows.append(MetricsRow(cfg.method, cfg.seed, k + 1, float(np.mean(stats.delays)),
                               "", "", 0, wall))
    return rows


def swept_config(cfg: ExperimentConfig, param: str, value) -> ExperimentConfig:
    env, hp = cfg.env, cfg.hp
    if param == "N_max":
        env = replace(env, tasks_per_bs=(env.tasks_per_bs[0], int(value)))
    elif param == "f_max":
        env = replace(env, capacity_ghz=(env.capacity_ghz[0], float(value)))
    elif param == "z_max":
        env = replace(env, quality_steps=(env.quality_steps[0], int(value)))
    elif param == "B":
        env = replace(env, num_nodes=int(value))
    elif param == "I":
        hp = replace(hp, denoising_steps=int(value))
    elif param == "alpha":
        hp = replace(hp, alpha=float(value))
    else:
        raise ConfigError(f"unknown sweep parameter {param!r}; expected one of {SWEEP_PARAMS}")
    return replace(cfg, env=env, hp=hp).validate()


def seed_list(cfg: ExperimentConfig) -> list[int]:
    return [cfg.seed + k for k in range(cfg.num_seeds)]


def sweep(cfg: ExperimentConfig, param: str, values, seeds: list[int] | None = None,
          methods: list[str] | None = None) -> list[MetricsRow]:
    """Fresh training run per (method, value, seed); rows tagged with the value."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {param!r}; expected one of {SWEEP_PARAMS}")
    seeds = seed_list(cfg) if seeds is None else seeds
    methods = [cfg.method] if methods is None else methods
    rows: list[MetricsRow] = []
    for method in methods:
        for value in values:
            for seed in seeds:
                run_cfg = replace(swept_config(cfg, param, value), method=method, seed=seed)
                rows.extend(run_training(run_cfg, param, value).rows)
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def rows_to_csv(rows: list[MetricsRow], columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in columns])
    return buf.getvalue()


def write_csv(rows: list[MetricsRow], path: str | Path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(rows_to_csv(rows))
    except OSError as exc:
        raise OSError(f"failed writing metrics to {path}: {exc}") from exc


def read_csv(path: str | Path) -> list[MetricsRow]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            sv = rec["sweep_value"]
            out.append(MetricsRow(rec["method"], int(rec["seed"]), int(rec["episode"]),
                                  float(rec["mean_delay_s"]), rec["sweep_param"],
                                  float(sv) if sv else "", int(rec["convergence_episode"]),
                                  float(rec["wall_ms"])))
    return out


def final_delay(rows: list[MetricsRow]) -> float:
    return float(np.mean([r.mean_delay_s for r in rows][-CONV_FINAL:]))


def emit_plot_data(rows: list[MetricsRow], out_dir: str | Path) -> dict[str, Path]:
    """Write learning curves and sweep summaries as mean/std over seeds.

    ``learning_curves.csv``: one series per (method, sweep value), episode vs delay.
    ``sweep_summary.csv``: final delay (mean of the last 10 episodes) per sweep value.
    """
    out_dir = Path(out_dir)
    groups: dict[tuple, dict[int, list[MetricsRow]]] = {}
    for r in rows:
        groups.setdefault((r.method, r.sweep_param, r.sweep_value), {}).setdefault(r.seed, []).append(r)

    curve_lines = [["method", "sweep_param", "sweep_value", "episode", "mean_delay_s",
                    "std_delay_s", "n_seeds"]]
    summary_lines = [["method", "sweep_param", "sweep_value", "final_delay_mean",
                      "final_delay_std", "n_seeds"]]
    for (method, param, value), by_seed in groups.items():
        runs = [sorted(rs, key=lambda r: r.episode) for rs in by_seed.values()]
        n_ep = min(len(rs) for rs in runs)
        mat = np.array([[r.mean_delay_s for r in rs[:n_ep]] for rs in runs])
        for e in range(n_ep):
            curve_lines.append([method, param, _fmt(value), e + 1, _fmt(float(mat[:, e].mean())),
                                _fmt(float(mat[:, e].std())), len(runs)])
        finals = np.array([final_delay(rs) for rs in runs])
        summary_lines.append([method, param, _fmt(value), _fmt(float(finals.mean())),
                              _fmt(float(finals.std())), len(runs)])

    paths = {"curves": out_dir / "learning_curves.csv", "summary": out_dir / "sweep_summary.csv"}
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for key, lines in (("curves", curve_lines), ("summary", summary_lines)):
            buf = io.StringIO()
            csv.writer(buf, lineterminator="\n").writerows(lines)
            paths[key].write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(f"failed writing plot data under {out_dir}: {exc}") from exc
    return paths
