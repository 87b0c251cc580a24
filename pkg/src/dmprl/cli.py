"""Command-line entry point.

Subcommands: demo-prep, train, test, rollout, sequence, report, stats.
Every subcommand takes ``--config FILE`` (the literal ``defaults`` uses the
built-in defaults) and ``--print-config`` to echo the fully resolved
configuration without running. The resolved configuration is also written
next to every output artifact (``<artifact>.config``) so results are
self-describing.

Exit codes: 0 ok, 2 usage, 3 unknown config key, 4 unreadable file,
5 config invariant violation, 6 runtime failure. Errors are one line on
stderr, ``error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import agent as agent_mod
from . import demos as demos_mod
from . import evaluate as eval_mod
from .config import (
    ConfigInvariantError,
    RunConfig,
    UnknownConfigKeyError,
    config_to_text,
    load_config,
    save_config,
)
from .dmp import (
    EnvInstance,
    NumericalDivergenceError,
    rollout,
    write_trajectory_csv,
    zero_policy,
)
from .nets import CheckpointError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG_KEY = 3
EXIT_IO = 4
EXIT_CONFIG_INVALID = 5
EXIT_RUNTIME = 6


class CliError(RuntimeError):
    pass


def _parse_vec(text: str, n: int, what: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != n:
        raise CliError(f"{what} needs {n} comma-separated numbers, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise CliError(f"{what} has non-numeric components: {text!r}") from None


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _sidecar(cfg: RunConfig, artifact_path) -> None:
    save_config(cfg, str(artifact_path) + ".config")


def _load_demo_set(args, cfg: RunConfig):
    trajs = []
    if args.inp:
        trajs.extend(demos_mod.load_demo_dir(args.inp))
    if args.synthetic:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1000]))
        for _ in range(args.synthetic):
            env = agent_mod.sample_env("train", rng, cfg.env)
            trajs.append(
                demos_mod.synth_demo(
                    env,
                    rng,
                    clearance=cfg.demo.clearance,
                    v_avg=cfg.demo.v_avg,
                    sample_dt=cfg.demo.sample_dt,
                )
            )
    if not trajs:
        raise CliError("no demonstrations: give --in and/or --synthetic N")
    return trajs


def _cmd_demo_prep(args, cfg: RunConfig) -> int:
    trajs = _load_demo_set(args, cfg)
    transitions, dropped, errors = demos_mod.prepare_transitions(
        trajs, cfg.dmp, cfg.cost, cfg.demo
    )
    if not transitions:
        raise CliError("every demonstration failed the tracking gate")
    demos_mod.write_buffer(args.out, transitions)
    _sidecar(cfg, args.out)
    worst = max(errors) if errors else float("nan")
    print(
        f"demo-prep: kept={len(trajs) - dropped} dropped={dropped} "
        f"transitions={len(transitions)} max_track_err={worst:.4f} out={args.out}"
    )
    return EXIT_OK


def _cmd_train(args, cfg: RunConfig) -> int:
    demo_data = demos_mod.read_buffer(args.demos)
    log_path = args.log or (str(args.out) + ".log.csv")
    progress = None
    if args.verbose:
        def progress(log):
            print(
                f"episode {log.episode}: larpe={log.larpe:.3f} steps={log.steps} "
                f"collided={log.collisions}",
                flush=True,
            )
    trainer = agent_mod.train(
        cfg, demo_data, cfg.seed, ckpt_path=args.out, log_path=log_path, progress=progress
    )
    _sidecar(cfg, args.out)
    last = trainer.episodes[-1]
    print(
        f"train: episodes={len(trainer.episodes)} steps={trainer.total_steps} "
        f"updates={trainer.updates} final_larpe={last.larpe:.4f} out={args.out}"
    )
    return EXIT_OK


def _cmd_test(args, cfg: RunConfig) -> int:
    ckpts = sorted(Path(args.ckpt_dir).glob("*.ckpt"))
    if not ckpts:
        raise FileNotFoundError(f"no *.ckpt files under {args.ckpt_dir}")
    rows, per_run = eval_mod.test_policies(
        [str(p) for p in ckpts], args.runs, cfg.seed, cfg
    )
    eval_mod.write_scores_csv(args.out, per_run)
    _sidecar(cfg, args.out)
    for row in rows:
        print(
            f"test: {row.policy}: mean_larpe={row.mean_larpe:.4f} "
            f"collision_rate={100.0 * row.collision_rate:.2f}% runs={row.runs}"
        )
    print(f"test: wrote {len(per_run)} rows to {args.out}")
    return EXIT_OK


def _cmd_rollout(args, cfg: RunConfig) -> int:
    if args.goal is not None:
        goal = _parse_vec(args.goal, 3, "--goal")
        if args.obstacle is not None:
            parts = _parse_vec(args.obstacle, 4, "--obstacle x,y,z,r")
            obst_top, obst_radius = parts[:3], float(parts[3])
        else:
            obst_top = 0.5 * (cfg.env.x_init + goal)
            obst_radius = cfg.env.obst_radius
        env = EnvInstance(cfg.env.x_init.copy(), goal, obst_top, obst_radius)
        env.validate()
    else:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2000]))
        env = agent_mod.sample_env(args.mode, rng, cfg.env)
    if args.ckpt:
        policy, _ = eval_mod.load_policy(args.ckpt)
    else:
        policy = zero_policy
    noise_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2001]))
    transitions, record = rollout(
        policy, env, cfg.dmp, cfg.cost, noise_sigma=args.noise, rng=noise_rng
    )
    write_trajectory_csv(
        args.out, transitions, env, cfg.dmp, cfg.cost, verbose_cost=args.verbose_cost
    )
    _sidecar(cfg, args.out)
    print(
        f"rollout: steps={record.steps} arpe={record.arpe:.4f} larpe={record.larpe:.4f} "
        f"collided={int(record.collided)} final_err={record.final_error:.4f} out={args.out}"
    )
    return EXIT_OK


def _read_via_file(path):
    """Via file: '# obstacle=x,y,z,r' header, then one x,y,z row per line;
    the first row is the start position, the rest are ordered via points."""
    obstacle = None
    points = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("obstacle="):
                    vals = [float(v) for v in body[len("obstacle=") :].split(",")]
                    if len(vals) != 4:
                        raise CliError(f"{path}: obstacle header needs x,y,z,r")
                    obstacle = vals
                continue
            points.append([float(v) for v in line.split(",")])
    if obstacle is None:
        raise CliError(f"{path}: missing '# obstacle=x,y,z,r' header")
    if len(points) < 2:
        raise CliError(f"{path}: need a start row plus at least one via point")
    return np.array(obstacle[:3]), obstacle[3], np.array(points[0]), np.array(points[1:])


def _cmd_sequence(args, cfg: RunConfig) -> int:
    obst_top, obst_radius, start, vias = _read_via_file(args.via)
    policy, _ = eval_mod.load_policy(args.ckpt)
    transitions, segments = eval_mod.task_sequence(
        policy, start, vias, obst_top, obst_radius, cfg
    )
    if args.out:
        env = EnvInstance(start, vias[-1], obst_top, obst_radius)
        write_trajectory_csv(args.out, transitions, env, cfg.dmp, cfg.cost)
        _sidecar(cfg, args.out)
    for seg in segments:
        rec = seg.record
        print(
            f"sequence: segment {seg.index}: reached={int(seg.reached)} "
            f"final_err={rec.final_error:.4f} larpe={rec.larpe:.4f} steps={rec.steps}"
        )
    reached = sum(seg.reached for seg in segments)
    print(f"sequence: {reached}/{len(segments)} segments reached their goals")
    return EXIT_OK


def _cmd_report(args, cfg: RunConfig) -> int:
    per_run = eval_mod.read_scores_csv(args.inp)
    sys.stdout.write(eval_mod.render_report(per_run, fmt=args.format))
    return EXIT_OK


def _cmd_stats(args, cfg: RunConfig) -> int:
    trajs = _load_demo_set(args, cfg)
    before, after = demos_mod.dataset_stats(trajs, v_target=cfg.demo.v_avg)
    rows = [("metric", "mean", "std", "max-min", "mean*", "std*", "max-min*")]
    for label, b, a in (
        ("L", before.length, after.length),
        ("V_max", before.max_speed, after.max_speed),
        ("V_avg", before.avg_speed, after.avg_speed),
    ):
        rows.append(
            (
                label,
                f"{b.mean:.4f}", f"{b.std:.4f}", f"{b.span:.4f}",
                f"{a.mean:.4f}", f"{a.std:.4f}", f"{a.span:.4f}",
            )
        )
    if args.format == "csv":
        print("\n".join(",".join(r) for r in rows))
    else:
        header, *body = rows
        print("| " + " | ".join(header) + " |")
        print("|" + "---|" * len(header))
        for r in body:
            print("| " + " | ".join(r) + " |")
    print(f"(* after normalization to {cfg.demo.v_avg} m/s; {len(trajs)} trajectories)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", default="defaults", help="config file, or 'defaults'"
    )
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument(
        "--print-config", action="store_true",
        help="echo the resolved configuration and exit",
    )

    parser = argparse.ArgumentParser(
        prog="dmprl",
        description="Movement-primitive motion planning: demos, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-prep", parents=[common], help="demos -> replay buffer file")
    p.add_argument("--in", dest="inp", default=None, help="directory of demo CSV files")
    p.add_argument("--synthetic", type=int, default=0, help="generate N synthetic demos")
    p.add_argument("--out", required=True, help="output buffer file (JSON lines)")
    p.set_defaults(func=_cmd_demo_prep)

    p = sub.add_parser("train", parents=[common], help="train a policy")
    p.add_argument("--demos", required=True, help="demo buffer file from demo-prep")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--log", default=None, help="training log CSV (default: <out>.log.csv)")
    p.add_argument("--verbose", action="store_true", help="print per-episode lines")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("test", parents=[common], help="score checkpoints on shared scenarios")
    p.add_argument("--ckpt-dir", required=True, help="directory of *.ckpt files")
    p.add_argument("--runs", type=int, default=400, help="test rollouts per policy")
    p.add_argument("--out", required=True, help="per-run scores CSV")
    p.set_defaults(func=_cmd_test)

    p = sub.add_parser("rollout", parents=[common], help="run one episode, dump the trajectory")
    p.add_argument("--ckpt", default=None, help="policy checkpoint (default: unforced)")
    p.add_argument("--goal", default=None, help="goal x,y,z (default: sampled)")
    p.add_argument("--obstacle", default=None, help="obstacle top x,y,z,r")
    p.add_argument("--mode", choices=("train", "test"), default="train",
                   help="sampling box when --goal is not given")
    p.add_argument("--noise", type=float, default=0.0, help="exploration noise std")
    p.add_argument("--verbose-cost", action="store_true", help="append J1..J4 columns")
    p.add_argument("--out", required=True, help="trajectory CSV path")
    p.set_defaults(func=_cmd_rollout)

    p = sub.add_parser("sequence", parents=[common], help="chained via-point task run")
    p.add_argument("--ckpt", required=True, help="policy checkpoint")
    p.add_argument("--via", required=True, help="via-point file (see README)")
    p.add_argument("--out", default=None, help="combined trajectory CSV")
    p.set_defaults(func=_cmd_sequence)

    p = sub.add_parser("report", parents=[common], help="tables from a scores CSV")
    p.add_argument("--in", dest="inp", required=True, help="scores CSV from 'test'")
    p.add_argument("--format", choices=("md", "csv"), default="md")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("stats", parents=[common], help="dataset kinematics table")
    p.add_argument("--in", dest="inp", default=None, help="directory of demo CSV files")
    p.add_argument("--synthetic", type=int, default=0, help="generate N synthetic demos")
    p.add_argument("--format", choices=("md", "csv"), default="md")
    p.set_defaults(func=_cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.print_config:
            sys.stdout.write(config_to_text(cfg))
            return EXIT_OK
        return args.func(args, cfg)
    except UnknownConfigKeyError as exc:
        print(f"error: config-key: {exc}", file=sys.stderr)
        return EXIT_CONFIG_KEY
    except ConfigInvariantError as exc:
        print(f"error: config-invariant: {exc}", file=sys.stderr)
        return EXIT_CONFIG_INVALID
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO
    except (
        CliError,
        CheckpointError,
        NumericalDivergenceError,
        agent_mod.TrainingDivergedError,
        demos_mod.DemoTrackingError,
        demos_mod.SynthDemoError,
        ValueError,
    ) as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
