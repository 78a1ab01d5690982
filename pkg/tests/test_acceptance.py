"""Acceptance checks, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line (repeated in the pytest
terminal summary). The learning experiment behind criteria 5 and 6 runs once
per session and is shared; set ``LADTS_ACCEPT_OUT`` to keep its CSVs.
"""

import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from ladts.baselines import dqn_loss, make_policy, opt_select
from ladts.diffusion import (
    PolicyNet, build_schedule, denoise_step, forward_diffuse, sinusoidal_encode,
)
from ladts.harness import (
    ExperimentConfig, emit_plot_data, run_episode, run_training, sweep, write_csv,
)
from ladts.nn import MlpParams, init_mlp
from ladts.sac import Batch, DiffusionActor, Hyperparams, actor_loss, critic_loss
from ladts.sim import Action, EdgeEnv, EnvConfig, LinkRates, SlotState, Task, service_delay

from _fd import numeric_grad, rel_err

DESK_ENV = EnvConfig(num_nodes=5, horizon=30, tasks_per_bs=(1, 10))
DESK_EPISODES = 100
SEEDS = [0, 1, 2, 3, 4]
ORDER = ["lad", "d2sac", "sac", "dqn"]


def desk_config(method="opt", seed=0, **hp) -> ExperimentConfig:
    return ExperimentConfig(env=DESK_ENV, hp=Hyperparams(episodes=DESK_EPISODES, **hp),
                            method=method, seed=seed, num_seeds=len(SEEDS))


# ---------------------------------------------------------------- 1

def test_c1_diffusion_math(report):
    t0 = time.perf_counter()
    ok_sched = True
    for steps in range(1, 11):
        s = build_schedule(steps, 0.1, 10.0)
        ok_sched &= bool(np.all(np.diff(s.beta) > 0) and s.beta_tilde[0] == 0.0
                         and np.all(np.diff(s.lam_bar) < 0) and s.lam_bar[0] < 1)

    rng = np.random.default_rng(0)
    B = 5
    sched = build_schedule(5)
    x0, eps = rng.normal(size=B), rng.normal(size=B)
    x1 = forward_diffuse(x0, 1, sched, eps)
    n_in = 2 * B + 2 + 16
    true_eps_net = PolicyNet(MlpParams([np.zeros((B, n_in))], [eps]), B)
    roundtrip = float(np.max(np.abs(denoise_step(x1, 1, np.zeros(B + 2), true_eps_net, sched) - x0)))

    net = PolicyNet.create(B, rng)
    worst = 0.0
    for i in range(1, 6):
        x, obs, z = rng.normal(size=B), rng.random(B + 2), rng.normal(size=B)
        h = np.concatenate([obs, x, sinusoidal_encode(i, 16)])
        for k, (w, b) in enumerate(zip(net.params.weights, net.params.biases)):
            h = w @ h + b
            h = np.maximum(h, 0) if k < len(net.params.weights) - 1 else h
        beta = sched.beta[i - 1]
        lb = np.prod(1 - sched.beta[:i])
        lb_prev = np.prod(1 - sched.beta[:i - 1])
        expect = ((x - beta / math.sqrt(1 - lb) * h) / math.sqrt(1 - beta)
                  + (1 - lb_prev) / (1 - lb) * beta / 2 * z)
        worst = max(worst, float(np.max(np.abs(denoise_step(x, i, obs, net, sched, z) - expect))))
    dt = time.perf_counter() - t0
    ok = ok_sched and roundtrip < 1e-10 and worst < 1e-12 and dt < 1.0
    assert report("C1 diffusion math", ok,
                  f"schedule invariants I=1..10 {'ok' if ok_sched else 'BROKEN'}, "
                  f"round-trip err {roundtrip:.1e} (<1e-10), step err {worst:.1e} (<1e-12), "
                  f"{dt:.2f}s (<1s)")


# ---------------------------------------------------------------- 2

def test_c2_gradients(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    B, K = 4, 6
    batch = Batch(rng.random((K, B + 2)), 3 * rng.normal(size=(K, B)), rng.integers(0, B, K),
                  -rng.random(K), rng.random((K, B + 2)), rng.normal(size=(K, B)),
                  rng.random(K) < 0.3)
    errs = {}

    critic = init_mlp([2 * B + 2, 20, 20, 1], rng)
    y = rng.normal(size=K)
    _, g = critic_loss(batch, critic, y)
    errs["critic"] = rel_err(g, numeric_grad(lambda: critic_loss(batch, critic, y)[0], critic))

    net = PolicyNet.create(B, rng, (20, 20))
    assert net.in_dim == 26
    actor = DiffusionActor(net, build_schedule(5), clip_grad="mask")
    critics = [init_mlp([2 * B + 2, 20, 20, 1], rng) for _ in range(2)]
    noise = actor.draw_noise(batch.x.shape, rng)
    for style in ("paper", "standard"):
        hp = Hyperparams(actor_style=style)
        _, g, _ = actor_loss(batch, actor, critics, 0.05, hp, noise=noise)
        num = numeric_grad(lambda: actor_loss(batch, actor, critics, 0.05, hp, noise=noise)[0],
                           actor.params)
        errs[f"actor/{style}"] = rel_err(g, num)

    q, tgt = init_mlp([B + 2, 20, 20, B], rng), init_mlp([B + 2, 20, 20, B], rng)
    _, g = dqn_loss(batch, q, tgt, 0.95)
    errs["dqn"] = rel_err(g, numeric_grad(lambda: dqn_loss(batch, q, tgt, 0.95)[0], q))
    dt = time.perf_counter() - t0
    ok = max(errs.values()) < 1e-4 and dt < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    assert report("C2 gradients vs finite differences", ok, f"{detail} (<1e-4), {dt:.1f}s (<30s)")


# ---------------------------------------------------------------- 3

def test_c3_queue_and_delay(report):
    t0 = time.perf_counter()
    cfg = EnvConfig(num_nodes=5, horizon=10, tasks_per_bs=(1, 10))
    env = EdgeEnv(cfg, 0)
    rng = np.random.default_rng(3)
    violations = 0
    decisions = 0
    for ep in range(1000):
        env.reset(ep)
        for _ in range(cfg.horizon):
            prev = env.state.backlog.copy()
            accepted = np.zeros(5)
            last_wait = np.full(5, -1.0)
            for b in range(5):
                for task in env.slot_tasks(b):
                    k = int(rng.integers(5))
                    wait = (env.state.backlog[k] + env.state.within_slot[k]) / env.capacities[k]
                    violations += wait < last_wait[k]
                    last_wait[k] = wait
                    out = env.apply(task, Action(k, 5))
                    violations += (out.reward + out.service_delay_s != 0.0) + (out.service_delay_s <= 0)
                    accepted[k] += task.workload
                    decisions += 1
            violations += not np.array_equal(env.state.within_slot, accepted)
            env.advance()
            expect = np.maximum(prev + accepted - env.capacities * cfg.slot_seconds, 0.0)
            violations += not np.array_equal(env.state.backlog, expect)
            violations += bool(np.any(env.state.backlog < 0))
    dt = time.perf_counter() - t0
    ok = violations == 0 and dt < 10
    assert report("C3 queue/delay arithmetic", ok,
                  f"{violations} violations over 1000 episodes / {decisions} decisions, "
                  f"{dt:.1f}s (<10s)")


# ---------------------------------------------------------------- 4

def test_c4_opt_oracle(report):
    rng = np.random.default_rng(4)
    cfg = EnvConfig(num_nodes=5, horizon=1)
    env = EdgeEnv(cfg, 0)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(10_000):
        env.capacities = rng.uniform(10e9, 50e9, 5)
        env.nodes = [replace(n, capacity_hz=float(c)) for n, c in zip(env.nodes, env.capacities)]
        env.links = LinkRates(rng.uniform(400e6, 500e6, (1, 5, 5)))
        env.state = SlotState(rng.uniform(0, 20e9, 5), rng.uniform(0, 5e9, 5))
        task = Task(0, int(rng.integers(5)), 1, 0, rng.uniform(2e6, 5e6), rng.uniform(.6e6, 1e6),
                    int(rng.integers(1, 16)), rng.uniform(1e8, 3e8))
        delays = [service_delay(task, Action(k, 5), env.state, env.links, env.nodes)
                  for k in range(5)]
        best = min(range(5), key=lambda k: (delays[k], k))
        mismatches += opt_select(task, env).index != best
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 5
    assert report("C4 Opt-TS vs exhaustive enumeration", ok,
                  f"{mismatches}/10000 mismatches, {dt:.1f}s (<5s)")


# ---------------------------------------------------------------- 5, 6

@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    out = Path(os.environ.get("LADTS_ACCEPT_OUT") or tmp_path_factory.mktemp("desk"))
    t0 = time.perf_counter()
    results = {}
    rows = []
    for seed in SEEDS:
        for method in ["opt", *ORDER]:
            res = run_training(desk_config(method, seed))
            results[(method, seed)] = res.summary
            rows.extend(res.rows)
    elapsed = time.perf_counter() - t0
    write_csv(rows, out / "metrics.csv")
    emit_plot_data(rows, out)
    return results, elapsed


def test_c5_desk_ordering(desk_runs, report):
    results, elapsed = desk_runs
    ordered = 0
    per_seed = []
    for seed in SEEDS:
        f = [results[(m, seed)].final_delay for m in ORDER]
        ok = all(a <= b for a, b in zip(f, f[1:]))
        ordered += ok
        per_seed.append("/".join(f"{v:.3f}" for v in f) + ("" if ok else "*"))
    lad = np.mean([results[("lad", s)].final_delay for s in SEEDS])
    opt = np.mean([results[("opt", s)].final_delay for s in SEEDS])
    gap = lad / opt - 1
    ok = ordered >= 4 and gap <= 0.10 and elapsed < 600
    assert report("C5 desk-scale ordering", ok,
                  f"LAD<=D2SAC<=SAC<=DQN in {ordered}/5 seeds (need 4) "
                  f"[{'; '.join(per_seed)}], LAD {lad:.4f}s vs Opt {opt:.4f}s gap "
                  f"{100 * gap:+.1f}% (need <=10%), {elapsed:.0f}s (<600s)")


def test_c6_convergence_speed(desk_runs, report):
    results, _ = desk_runs
    pairs = [(results[("lad", s)].convergence_episode, results[("d2sac", s)].convergence_episode)
             for s in SEEDS]
    wins = sum(a <= b for a, b in pairs)
    ok = wins >= 4
    assert report("C6 LAD converges no later than D2SAC", ok,
                  f"{wins}/5 seeds (need 4), episodes LAD/D2SAC "
                  + ", ".join(f"{a}/{b}" for a, b in pairs))


# ---------------------------------------------------------------- 7

def test_c7_sweep_monotonicity(report):
    t0 = time.perf_counter()
    env = DESK_ENV
    grid = {
        "N_max": ([round(env.tasks_per_bs[1] * k) for k in (0.5, 1, 2)], +1),
        "z_max": ([round(env.quality_steps[1] * k) for k in (0.5, 1, 2)], +1),
        "f_max": ([env.capacity_ghz[1] * k for k in (0.5, 1, 2)], -1),
    }
    broken = []
    for param, (values, direction) in grid.items():
        rows = sweep(desk_config("opt"), param, values, seeds=SEEDS)
        for seed in SEEDS:
            means = [np.mean([r.mean_delay_s for r in rows
                              if r.seed == seed and r.sweep_value == v]) for v in values]
            steps = np.diff(means) * direction
            if np.any(steps < 0):
                broken.append(f"{param}/seed{seed}")
    dt = time.perf_counter() - t0
    ok = not broken and dt < 300
    verdict = ("N_max/z_max non-decreasing, f_max non-increasing over x0.5/x1/x2 for all seeds"
               if not broken else f"violations: {', '.join(broken)}")
    assert report("C7 Opt-TS sweep monotonicity", ok, f"{verdict}; {dt:.0f}s (<300s)")


# ---------------------------------------------------------------- 8

def test_c8_determinism(tmp_path, report):
    outputs = []
    for k in range(2):
        rows = []
        for method in ("lad", "dqn"):
            cfg = replace(desk_config(method, seed=7), hp=Hyperparams(episodes=6))
            rows.extend(run_training(cfg).rows)
        path = tmp_path / f"run{k}.csv"
        write_csv(rows, path)
        outputs.append(path.read_bytes())
    ok = outputs[0] == outputs[1] and len(outputs[0]) > 0
    assert report("C8 determinism", ok,
                  f"two runs with seed 7 -> {'byte-identical' if ok else 'DIFFERENT'} CSVs "
                  f"({len(outputs[0])} bytes)")


# ---------------------------------------------------------------- 9

def per_decision_seconds(n: int, repeats: int = 3) -> float:
    env_cfg = EnvConfig(num_nodes=5, horizon=10, tasks_per_bs=(n, n))
    hp = Hyperparams(warmup=10 ** 9)
    samples = []
    for r in range(repeats):
        pol = make_policy("lad", env_cfg, hp, seed=0)
        stats = run_episode(pol, EdgeEnv(env_cfg, 0), r)
        samples.append(stats.select_seconds / stats.decisions)
    return float(np.median(samples))


def test_c9_decision_cost_flat(report):
    per_decision_seconds(5, 1)  # warm caches
    small = per_decision_seconds(5)
    large = per_decision_seconds(50)
    change = large / small - 1
    ok = abs(change) < 0.20
    assert report("C9 per-decision cost vs 10x tasks", ok,
                  f"N=5: {1e6 * small:.1f}us, N=50: {1e6 * large:.1f}us, change "
                  f"{100 * change:+.1f}% (need <20%)")
