"""Frozen-policy evaluation: shared-environment scoring, score/collision
tables, and the chained via-point task runner."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import sample_env
from .config import RunConfig
from .dmp import EnvInstance, Transition, rollout
from .nets import load_checkpoint
from .scoring import EvalRecord

SCORE_COLUMNS = "policy,run,arpe,larpe,collided,final_err,steps"


def load_policy(ckpt_path):
    """Load a checkpoint's actor as a plain observation -> action callable."""
    nets, _, header = load_checkpoint(ckpt_path)
    if "actor" not in nets:
        raise ValueError(f"{ckpt_path}: checkpoint holds no actor net")
    actor = nets["actor"]
    return actor.forward, header


@dataclass
class PolicyScore:
    policy: str
    mean_larpe: float
    collision_rate: float
    mean_final_err: float
    runs: int


def test_policies(
    checkpoints,
    runs: int,
    seed: int,
    cfg: RunConfig,
    mode: str = "test",
) -> tuple[list[PolicyScore], list[dict]]:
    """Score each policy over the same deterministic environment sequence.

    ``checkpoints`` is a list of (name, policy callable) pairs or checkpoint
    paths. Rollouts are noise free. Returns per-policy rows and the raw
    per-run records (for box plots and the scores CSV).
    """
    policies = []
    for item in checkpoints:
        if isinstance(item, tuple):
            policies.append(item)
        else:
            policy, _ = load_policy(item)
            policies.append((Path(item).stem, policy))
    env_rng = np.random.default_rng(np.random.SeedSequence(seed))
    envs = [sample_env(mode, env_rng, cfg.env) for _ in range(runs)]
    rows: list[PolicyScore] = []
    per_run: list[dict] = []
    for name, policy in policies:
        records: list[EvalRecord] = []
        for run_idx, env in enumerate(envs):
            _, rec = rollout(policy, env, cfg.dmp, cfg.cost)
            records.append(rec)
            per_run.append(
                {
                    "policy": name,
                    "run": run_idx,
                    "arpe": rec.arpe,
                    "larpe": rec.larpe,
                    "collided": int(rec.collided),
                    "final_err": rec.final_error,
                    "steps": rec.steps,
                }
            )
        rows.append(
            PolicyScore(
                policy=name,
                mean_larpe=float(np.mean([r.larpe for r in records])),
                collision_rate=float(np.mean([r.collided for r in records])),
                mean_final_err=float(np.mean([r.final_error for r in records])),
                runs=runs,
            )
        )
    return rows, per_run


def write_scores_csv(path, per_run: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SCORE_COLUMNS.split(","))
        writer.writeheader()
        for row in per_run:
            writer.writerow(row)


def read_scores_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no score rows")
    return rows


def summarize_scores(per_run: list[dict]) -> dict:
    """Per-policy means plus across-policy spread.

    ``larpe_var``/``rate_var`` divide by the policy count without a square
    root; the matching ``*_std`` entries are their square roots.
    """
    by_policy: dict[str, list[dict]] = {}
    for row in per_run:
        by_policy.setdefault(str(row["policy"]), []).append(row)
    policies = sorted(by_policy)
    mean_larpe = {}
    rate = {}
    for name in policies:
        rows = by_policy[name]
        mean_larpe[name] = float(np.mean([float(r["larpe"]) for r in rows]))
        rate[name] = float(np.mean([int(r["collided"]) for r in rows]))
    larpes = np.array([mean_larpe[name] for name in policies])
    rates = np.array([rate[name] for name in policies])
    return {
        "policies": policies,
        "mean_larpe": mean_larpe,
        "collision_rate": rate,
        "larpe_mu": float(larpes.mean()),
        "larpe_var": float(((larpes - larpes.mean()) ** 2).mean()),
        "larpe_std": float(np.sqrt(((larpes - larpes.mean()) ** 2).mean())),
        "rate_mu": float(rates.mean()),
        "rate_var": float(((rates - rates.mean()) ** 2).mean()),
        "rate_std": float(np.sqrt(((rates - rates.mean()) ** 2).mean())),
    }


def render_report(per_run: list[dict], fmt: str = "md") -> str:
    """Score and collision tables (per policy, aggregates at the bottom)."""
    summary = summarize_scores(per_run)
    rows = [("policy", "mean_larpe", "collision_rate")]
    for name in summary["policies"]:
        rows.append(
            (
                name,
                f"{summary['mean_larpe'][name]:.4f}",
                f"{100.0 * summary['collision_rate'][name]:.2f}%",
            )
        )
    rows.append(("mu", f"{summary['larpe_mu']:.4f}", f"{100.0 * summary['rate_mu']:.2f}%"))
    rows.append(("var", f"{summary['larpe_var']:.4f}", f"{summary['rate_var']:.4f}"))
    rows.append(("std", f"{summary['larpe_std']:.4f}", f"{summary['rate_std']:.4f}"))
    if fmt == "csv":
        return "\n".join(",".join(row) for row in rows) + "\n"
    if fmt != "md":
        raise ValueError(f"unknown report format {fmt!r}")
    header, *body = rows
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines.extend("| " + " | ".join(row) + " |" for row in body)
    return "\n".join(lines) + "\n"


@dataclass
class SegmentResult:
    index: int
    goal: np.ndarray
    record: EvalRecord
    reached: bool


def task_sequence(
    policy,
    start: np.ndarray,
    via_points,
    obst_top: np.ndarray,
    obst_radius: float,
    cfg: RunConfig,
) -> tuple[list[Transition], list[SegmentResult]]:
    """Chain rollouts through ordered via points (pick/place style runs).

    Each segment starts exactly where the previous one ended (velocity and
    canonical phase reset, as for a fresh plan), with the same static
    obstacle throughout. A segment that times out before reaching its goal
    ball is reported as unreached and the chain continues from wherever it
    stopped. Grasp/release events between segments are no-ops here.
    """
    via_points = [np.asarray(p, dtype=float) for p in via_points]
    if not via_points:
        raise ValueError("need at least one via point")
    current = np.asarray(start, dtype=float).copy()
    all_transitions: list[Transition] = []
    segments: list[SegmentResult] = []
    for i, goal in enumerate(via_points):
        env = EnvInstance(
            x_init=current,
            x_goal=goal,
            obst_top=np.asarray(obst_top, dtype=float),
            obst_radius=obst_radius,
        )
        env.validate()
        transitions, record = rollout(policy, env, cfg.dmp, cfg.cost)
        all_transitions.extend(transitions)
        segments.append(
            SegmentResult(
                index=i,
                goal=goal,
                record=record,
                reached=record.final_error <= cfg.cost.eps_t,
            )
        )
        current = transitions[-1].s2[0:3].copy()
    return all_transitions, segments
