"""Command-line entry point: train / eval / compare-mpc / print-config.

Exit codes: 0 success, 2 usage or configuration problem, 3 numeric failure.
Every CSV written starts with a comment line carrying the version and seed;
all writes go through a temp-file rename.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__, checkpoint, config, evaluate, mpc, rollout, training, world
from .checkpoint import CheckpointError
from .config import ConfigError
from .rollout import RolloutEngine, RolloutNumericsError


def _write_csv(path: str, cols, rows, seed: int):
    lines = ["# drivelab %s seed=%d" % (__version__, seed), ",".join(cols)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    checkpoint._atomic_write(path, ("\n".join(lines) + "\n").encode())


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def cmd_train(args) -> int:
    cfg = config.load_config(args.config)
    tcfg = cfg.train_config()
    if args.iters is not None:
        tcfg.iterations = args.iters
    trainer = training.Trainer(cfg.world_config(), cfg.vehicle_config(),
                               cfg.objective_config(), tcfg, args.seed)
    os.makedirs(args.out, exist_ok=True)
    checkpoint._atomic_write(os.path.join(args.out, "config.ini"),
                             config.emit_config(cfg).encode())
    trainer.train(tcfg.iterations, out_dir=args.out,
                  progress=_progress_printer(tcfg) if args.verbose else None)
    print("final checkpoint: %s" % os.path.join(
        args.out, "checkpoints", "iter_%08d" % trainer.k))
    return 0


def _progress_printer(tcfg):
    def cb(row):
        if row["iteration"] % 50 == 0:
            print("iter %6d  j_pi %10.4f  j_track %10.4f  j_safe %10.6f  rho %8.2f"
                  % (row["iteration"], row["j_pi"], row["j_track"],
                     row["j_safe"], row["rho"]))
            sys.stdout.flush()
    return cb


EVAL_COLS = ["episode", "seed", "task", "reason", "completed", "collided",
             "time_to_pass_s", "comfort_index", "red_light_violations", "steps"]
LATENCY_COLS = ["episode", "mean_latency_ms", "max_latency_ms"]


def cmd_eval(args) -> int:
    cfg = config.load_config(args.config)
    wcfg = cfg.world_config()
    vcfg = cfg.vehicle_config()
    task = args.task or cfg.get("eval", "task")
    episodes = cfg.get("eval", "episodes") if args.episodes is None else args.episodes
    if task not in world.MOVEMENTS:
        raise ConfigError("unknown task %r" % task)

    if args.baseline == "rule":
        driver = evaluate.RuleDriver(wcfg, vcfg)
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required unless --baseline rule")
        bundle = checkpoint.load_checkpoint(args.checkpoint)
        if args.baseline == "fp" and bundle.representation != "fp":
            raise ConfigError("--baseline fp needs a checkpoint trained with "
                              "representation=fp (got %s)" % bundle.representation)
        driver = evaluate.PolicyDriver(bundle, vcfg)

    os.makedirs(args.out, exist_ok=True)
    traj_dir = os.path.join(args.out, "trajectories")
    os.makedirs(traj_dir, exist_ok=True)

    w = world.World(wcfg, task, args.seed, vcfg) if episodes > 0 else None
    rows, lat_rows = [], []
    metrics_list = []
    for ep in range(episodes):
        if ep > 0:
            w.reset()
        traj: list = []
        m = evaluate.run_episode(driver, w, seed=args.seed + ep, traj_rows=traj)
        metrics_list.append(m)
        rows.append([ep, m.seed, task, m.reason, int(m.completed), int(m.collided),
                     m.time_to_pass, m.comfort_index, m.red_light_violations, m.steps])
        lat_rows.append([ep, m.mean_latency_ms, m.max_latency_ms])
        _write_csv(os.path.join(traj_dir, "ep_%03d.csv" % ep),
                   evaluate.TRAJ_HEADER, traj, args.seed)
    if metrics_list:
        rows.extend(_aggregate_rows(metrics_list, task))
        lat = np.array([[m.mean_latency_ms, m.max_latency_ms] for m in metrics_list])
        lat_rows.append(["mean", float(lat[:, 0].mean()), float(lat[:, 1].max())])
    _write_csv(os.path.join(args.out, "metrics.csv"), EVAL_COLS, rows, args.seed)
    _write_csv(os.path.join(args.out, "latency.csv"), LATENCY_COLS, lat_rows, args.seed)
    return 0


def _aggregate_rows(metrics_list, task):
    ttp = [m.time_to_pass for m in metrics_list if m.time_to_pass is not None]
    comfort = [m.comfort_index for m in metrics_list]
    mean = ["mean", "", task, "", float(np.mean([m.completed for m in metrics_list])),
            float(np.mean([m.collided for m in metrics_list])),
            float(np.mean(ttp)) if ttp else None, float(np.mean(comfort)),
            float(np.mean([m.red_light_violations for m in metrics_list])),
            float(np.mean([m.steps for m in metrics_list]))]
    std = ["std", "", task, "", "", "",
           float(np.std(ttp)) if ttp else None, float(np.std(comfort)),
           float(np.std([m.red_light_violations for m in metrics_list])),
           float(np.std([m.steps for m in metrics_list]))]
    return [mean, std]


def cmd_compare_mpc(args) -> int:
    cfg = config.load_config(args.config)
    wcfg = cfg.world_config()
    vcfg = cfg.vehicle_config()
    ocfg = cfg.objective_config()
    bundle = checkpoint.load_checkpoint(args.checkpoint)
    task = args.task or cfg.get("eval", "task")
    engine = RolloutEngine(wcfg, vcfg, ocfg, world.LightSystem(wcfg.phase_durations),
                           horizon=cfg.get("mpc", "horizon"),
                           fp_mode=bundle.representation == "fp")

    def make_world(seed):
        return world.World(wcfg, task, seed, vcfg)

    rows = mpc.compare_policy_mpc(bundle, engine, make_world, args.cases, args.seed,
                                  rho_solve=cfg.get("mpc", "rho"),
                                  budget=cfg.get("mpc", "budget"),
                                  restarts=cfg.get("mpc", "restarts"))
    out_rows = [[r[c] for c in mpc.COMPARE_HEADER] for r in rows]
    _write_csv(args.out, mpc.COMPARE_HEADER, out_rows, args.seed)
    if rows:
        jp = np.array([r["j_policy"] for r in rows])
        jm = np.array([r["j_mpc"] for r in rows])
        print("mean policy cost %.4f, mean oracle cost %.4f, ratio %.3f"
              % (jp.mean(), jm.mean(), jp.mean() / max(jm.mean(), 1e-12)))
    return 0


def cmd_print_config(args) -> int:
    cfg = config.load_config(args.config)
    text = config.emit_config(cfg)
    if args.out:
        checkpoint._atomic_write(args.out, text.encode())
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drivelab",
                                description="Constrained model-based RL lab for "
                                            "intersection driving")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the training loop")
    t.add_argument("--config", default=None, help="config file (defaults used if omitted)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--iters", type=int, default=None, help="override train.iterations")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint or baseline over episodes")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--config", default=None)
    e.add_argument("--episodes", type=int, default=None)
    e.add_argument("--task", default=None, choices=list(world.MOVEMENTS))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.add_argument("--baseline", default=None, choices=["rule", "fp"])
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare-mpc", help="compare the policy against the "
                                           "trajectory-optimization oracle")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--config", default=None)
    c.add_argument("--cases", type=int, default=20)
    c.add_argument("--task", default=None, choices=list(world.MOVEMENTS))
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True, help="output CSV path")
    c.set_defaults(func=cmd_compare_mpc)

    g = sub.add_parser("print-config", help="emit the annotated reference config")
    g.add_argument("--config", default=None)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_print_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 2
    except RolloutNumericsError as e:
        print("numeric failure: %s" % e, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
