"""Command line entry point: ``dacer train|eval|export-q|trajectories|report|experiment``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..envs import make_env
from ..trainer import RunMetrics, TrainConfig, agent_from_checkpoint, train
from .evaluation import aggregate, evaluate, final_metric
from .exporters import PROBE_STARTS, export_q_landscape, sample_trajectories


def _cmd_train(args) -> int:
    text = Path(args.config).read_text() if args.config else ""
    cfg = TrainConfig.from_text(text, seed=args.seed, env=args.env, noise_mode=args.noise_mode,
                                diffusion_steps=args.diffusion_steps, total_steps=args.total_steps)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = Path(args.out) / cfg.env / f"seed{cfg.seed}" / stamp
    trainer, metrics = train(cfg, run_dir=run_dir)
    evals = metrics.series("eval_return")
    print(f"run directory: {run_dir}")
    if evals:
        print(f"last evaluation return: {evals[-1][1]:.4f}")
    return 0


def _cmd_eval(args) -> int:
    agent = agent_from_checkpoint(args.checkpoint)
    env = make_env(agent.cfg.env)
    ret = evaluate(agent.policy, env, args.episodes, np.random.default_rng(args.seed))
    print(f"mean return over {args.episodes} episodes: {ret:.4f}")
    return 0


def _cmd_export_q(args) -> int:
    agent = agent_from_checkpoint(args.checkpoint)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "export"
    grid = export_q_landscape(agent.policy, agent.critic, out, args.resolution, seed=args.seed)
    print(f"wrote {out}/q_landscape.csv ({grid.resolution}x{grid.resolution}); "
          f"{len(grid.peaks)} peak clusters")
    for x, y, q in grid.peaks:
        print(f"  peak at ({x:.2f}, {y:.2f})  q={q:.4f}")
    return 0


def _parse_starts(spec: str | None):
    if not spec:
        return PROBE_STARTS
    p = Path(spec)
    if p.exists():
        return [tuple(row) for row in np.atleast_2d(np.loadtxt(p, delimiter=","))]
    vals = [float(v) for v in spec.replace(";", ",").split(",") if v.strip()]
    return list(zip(vals[::2], vals[1::2]))


def _cmd_trajectories(args) -> int:
    agent = agent_from_checkpoint(args.checkpoint)
    env = make_env(agent.cfg.env)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "export"
    fans = sample_trajectories(agent.policy, env, _parse_starts(args.starts), args.n, args.seed, out)
    for fan in fans:
        print(f"start {fan.start}: goal counts {fan.goal_histogram().tolist()}")
    return 0


def collect_runs(root) -> dict[tuple, dict[int, tuple[list, int]]]:
    """Group every metrics.csv under ``root`` by (env, noise_mode, diffusion_steps) and seed."""
    groups: dict[tuple, dict[int, tuple[list, int]]] = defaultdict(dict)
    for mpath in sorted(Path(root).rglob("metrics.csv")):
        cfg_path = mpath.parent / "config.txt"
        if not cfg_path.exists():
            continue
        cfg = TrainConfig.from_text(cfg_path.read_text())
        evals = RunMetrics.read_csv(mpath).series("eval_return")
        groups[(cfg.env, cfg.noise_mode, cfg.diffusion_steps)][cfg.seed] = (evals, cfg.total_steps)
    return groups


def _cmd_report(args) -> int:
    groups = collect_runs(args.runs)
    if not groups:
        print(f"no runs found under {args.runs}")
        return 1
    print(f"{'env':<10} {'noise':<9} {'T':>3} {'seeds':>5}  final-10% return (mean ± std)")
    for (env, mode, T), runs in sorted(groups.items()):
        per_seed = [final_metric(ev, total) for ev, total in runs.values()]
        mean, std = aggregate(per_seed)
        print(f"{env:<10} {mode:<9} {T:>3} {len(per_seed):>5}  {mean:.3f} ± {std:.3f}")
    return 0


def _cmd_experiment(args) -> int:
    from .experiments import bandit_experiment, multigoal_experiment

    if args.name == "bandit":
        res = bandit_experiment(seed=args.seeds[0], total_steps=args.total_steps or 20_000)
        print(f"diffusion policy mass near +0.6 / -0.6 / 0: {res.diffusion['pos']:.3f} / "
              f"{res.diffusion['neg']:.3f} / {res.diffusion['mid']:.3f}")
        print(f"gaussian control mass near +0.6 / -0.6 / 0: {res.gaussian['pos']:.3f} / "
              f"{res.gaussian['neg']:.3f} / {res.gaussian['mid']:.3f}")
        print(f"{res.steps} steps in {res.seconds:.0f}s")
        return 0
    res = multigoal_experiment(Path(args.out) / "multigoal-experiment", seeds=args.seeds,
                               total_steps=args.total_steps or 100_000)
    print(f"{len(res.peaks)} Q-landscape peak clusters:")
    for x, y, q in res.peaks:
        print(f"  ({x:.2f}, {y:.2f})  q={q:.4f}")
    print(f"goals reached from (0, 0): {res.goals_from_origin}")
    for mode in res.final_returns:
        mean, std = res.summary(mode)
        print(f"{mode:<9} final-10% return {mean:.3f} ± {std:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dacer", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("train", help="train an agent")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--seed", type=int)
    t.add_argument("--env", choices=["multigoal", "bandit"])
    t.add_argument("--noise-mode", choices=["adaptive", "fixed", "linear", "none"])
    t.add_argument("--diffusion-steps", type=int)
    t.add_argument("--total-steps", type=int)
    t.add_argument("--out", default="runs")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="noise-free evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(fn=_cmd_eval)

    q = sub.add_parser("export-q", help="export the Q landscape and action field")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--resolution", type=int, default=101)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out")
    q.set_defaults(fn=_cmd_export_q)

    tr = sub.add_parser("trajectories", help="sample rollout fans from probe start points")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--starts", help="CSV file of x,y rows or an inline list 'x1,y1;x2,y2'")
    tr.add_argument("--n", type=int, default=100)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out")
    tr.set_defaults(fn=_cmd_trajectories)

    r = sub.add_parser("report", help="aggregate final-10% returns across seeds")
    r.add_argument("--runs", required=True)
    r.set_defaults(fn=_cmd_report)

    x = sub.add_parser("experiment", help="run a packaged experiment (bandit comparison or multi-goal)")
    x.add_argument("name", choices=["bandit", "multigoal"])
    x.add_argument("--seeds", type=int, nargs="+", default=[0])
    x.add_argument("--total-steps", type=int)
    x.add_argument("--out", default="runs")
    x.set_defaults(fn=_cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
