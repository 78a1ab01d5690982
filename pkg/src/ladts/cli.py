"""Command line entry point: ``ladts train | sweep | eval``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import (
    SWEEP_PARAMS, emit_plot_data, evaluate_checkpoint, load_config, run_training, seed_list,
    sweep, write_csv,
)
from .baselines import METHODS
from .sac import ACTOR_STYLES, TARGET_STYLES
from .diffusion import NOISE_COEFFS
from .sim import ConfigError


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat YAML file of key: value overrides")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", type=Path, default=Path("runs"))
    p.add_argument("--target-style", choices=TARGET_STYLES)
    p.add_argument("--actor-style", choices=ACTOR_STYLES)
    p.add_argument("--noise-coeff", choices=NOISE_COEFFS)
    p.add_argument("--eval-greedy", action=argparse.BooleanOptionalAction, default=None,
                   help="argmax at evaluation (default) or keep sampling")
    p.add_argument("--timing", action="store_true",
                   help="fill wall_ms (makes CSVs non-reproducible)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ladts")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one method on one seed")
    _common(train)

    sw = sub.add_parser("sweep", help="retrain across values of one parameter")
    _common(sw)
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sw.add_argument("--values", required=True, help="comma separated, e.g. 10,30,50")
    sw.add_argument("--methods", help="comma separated; defaults to --method")
    sw.add_argument("--num-seeds", type=int)

    ev = sub.add_parser("eval", help="replay a checkpoint without learning")
    ev.add_argument("--ckpt", type=Path, required=True)
    ev.add_argument("--episodes", type=int, default=5)
    ev.add_argument("--out", type=Path)
    ev.add_argument("--eval-greedy", action=argparse.BooleanOptionalAction, default=None)
    ev.add_argument("--timing", action="store_true")
    return parser


def _config(args):
    return load_config(
        args.config, method=args.method, seed=args.seed, episodes=args.episodes,
        target_style=args.target_style, actor_style=args.actor_style,
        noise_coeff=args.noise_coeff, eval_greedy=args.eval_greedy,
        record_wall=True if args.timing else None,
        num_seeds=getattr(args, "num_seeds", None),
    )


def _parse_values(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(int(tok))
        except ValueError:
            try:
                out.append(float(tok))
            except ValueError:
                raise ConfigError(f"sweep value {tok!r} is not a number") from None
    return out


def cmd_train(args) -> int:
    cfg = _config(args)
    out = args.out
    res = run_training(cfg, checkpoint_dir=out / "checkpoint")
    write_csv(res.rows, out / "metrics.csv")
    emit_plot_data(res.rows, out)
    print(f"{cfg.method} seed={cfg.seed} final_delay={res.summary.final_delay:.6g}s "
          f"convergence_episode={res.summary.convergence_episode} -> {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    methods = args.methods.split(",") if args.methods else None
    rows = sweep(cfg, args.param, _parse_values(args.values), seed_list(cfg), methods)
    write_csv(rows, args.out / "metrics.csv")
    emit_plot_data(rows, args.out)
    print(f"{len(rows)} rows -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    rows = evaluate_checkpoint(args.ckpt, args.episodes, args.eval_greedy, args.timing)
    out = args.out or args.ckpt
    write_csv(rows, out / "eval.csv")
    mean = sum(r.mean_delay_s for r in rows) / len(rows)
    print(f"{rows[0].method} eval over {len(rows)} episodes: mean_delay={mean:.6g}s -> {out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"train": cmd_train, "sweep": cmd_sweep, "eval": cmd_eval}[args.command]
    try:
        return handler(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
