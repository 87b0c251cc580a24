"""Demonstration pipeline: raw trajectories to replay-buffer transitions.

A raw trajectory (recorded or synthetic) is speed-normalized, resampled onto
the control grid, and then labeled with actions by running the planning
dynamics with a PD tracking law; the resulting transitions satisfy the
environment's transition equation exactly, so demonstration data and
interaction data live in the same space.

File formats:
  demo CSV   - comment header ``# goal=x,y,z`` and ``# obstacle=x,y,z,r``,
               then ``t,x,y,z`` rows (one trajectory per file);
  buffer     - JSON lines, one transition per line with fields
               ``s`` (10), ``a`` (3), ``r``, ``s2`` (10), ``d`` (0/1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import CostConfig, DemoConfig, DmpConfig
from .costs import collision_check
from .dmp import (
    EnvInstance,
    Transition,
    assemble_observation,
    initial_state,
    step_with_reward,
)


class DemoTrackingError(RuntimeError):
    """The PD-tracked rollout strayed too far from the demonstration."""


class SynthDemoError(RuntimeError):
    """No clearance direction produced a valid synthetic path."""


@dataclass
class RawTrajectory:
    """Uniformly sampled position trace plus its scenario annotations."""

    t: np.ndarray
    pos: np.ndarray
    goal: np.ndarray
    obst_top: np.ndarray
    obst_radius: float = 0.035

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=float)
        self.pos = np.asarray(self.pos, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        self.obst_top = np.asarray(self.obst_top, dtype=float)

    def validate(self) -> None:
        if self.t.ndim != 1 or len(self.t) < 2:
            raise ValueError("need at least two samples")
        if self.pos.shape != (len(self.t), 3):
            raise ValueError("positions must be (n, 3) matching the timestamps")
        gaps = np.diff(self.t)
        if np.any(gaps <= 0.0):
            raise ValueError("timestamps must be strictly increasing")
        if np.max(gaps) - np.min(gaps) > 1e-9 * max(np.max(gaps), 1e-300):
            raise ValueError("timestamps must be uniformly spaced")

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def path_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.pos, axis=0), axis=1)))

    def env(self) -> EnvInstance:
        return EnvInstance(
            x_init=self.pos[0].copy(),
            x_goal=self.goal.copy(),
            obst_top=self.obst_top.copy(),
            obst_radius=self.obst_radius,
        )


@dataclass(frozen=True)
class StatTriple:
    mean: float
    std: float
    span: float  # max - min


@dataclass(frozen=True)
class DemoStats:
    """Dataset-level kinematics: total length, peak speed, average speed."""

    length: StatTriple
    max_speed: StatTriple
    avg_speed: StatTriple


def normalize_speed(traj: RawTrajectory, v_target: float) -> RawTrajectory:
    """Rescale timestamps so the average speed equals ``v_target``.

    Positions (and therefore the total path length) are untouched; the new
    duration is length/v_target.
    """
    length = traj.path_length()
    if length <= 0.0:
        raise ValueError("cannot normalize a zero-length trajectory")
    duration = traj.duration
    scale = length / (v_target * duration)
    return RawTrajectory(
        t=(traj.t - traj.t[0]) * scale,
        pos=traj.pos.copy(),
        goal=traj.goal.copy(),
        obst_top=traj.obst_top.copy(),
        obst_radius=traj.obst_radius,
    )


def resample(traj: RawTrajectory, dt: float) -> RawTrajectory:
    """Linear interpolation onto the uniform grid {0, dt, 2dt, ...}.

    The grid always covers the full duration; when it overshoots, the final
    sample is held (constant padding).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    t0 = traj.t - traj.t[0]
    steps = int(math.ceil(t0[-1] / dt - 1e-9))
    grid = np.arange(steps + 1) * dt
    pos = np.column_stack([np.interp(grid, t0, traj.pos[:, i]) for i in range(3)])
    return RawTrajectory(
        t=grid,
        pos=pos,
        goal=traj.goal.copy(),
        obst_top=traj.obst_top.copy(),
        obst_radius=traj.obst_radius,
    )


def finite_diff_velocity(traj: RawTrajectory) -> np.ndarray:
    """Backward differences; the first sample's velocity is zero."""
    v = np.zeros_like(traj.pos)
    v[1:] = np.diff(traj.pos, axis=0) / np.diff(traj.t)[:, None]
    return v


def pid_label(
    traj: RawTrajectory,
    cfg: DmpConfig,
    cost_cfg: CostConfig,
    kp: np.ndarray | None = None,
    kd: np.ndarray | None = None,
    track_tol: float = 0.5,
) -> tuple[list[Transition], float]:
    """Label a resampled demo with actions via PD tracking.

    The dynamics run from the demo's first sample (zero initial velocity, the
    demo's goal) with per-step actuation ``kp (xH - x) + kd (vH - v)``; the
    raw actuation is saturated into the action bounds and the saturated value
    is stored, so every transition replays exactly through the environment
    step. The demo's own acceleration is never differenced.

    Returns (transitions, max tracking error); raises DemoTrackingError when
    the error exceeds ``track_tol``.
    """
    traj.validate()
    gaps = np.diff(traj.t)
    if abs(gaps[0] - cfg.dt) > 1e-9 * cfg.dt:
        raise ValueError("trajectory must be resampled to the control grid first")
    kp = np.eye(3) * 1500.0 if kp is None else np.asarray(kp, dtype=float)
    kd = np.eye(3) * 40.0 if kd is None else np.asarray(kd, dtype=float)
    env = traj.env()
    env.validate()
    v_demo = finite_diff_velocity(traj)
    state = initial_state(env, cfg)
    obs = assemble_observation(state, env)
    transitions: list[Transition] = []
    max_err = 0.0
    for k in range(len(traj.t) - 1):
        actuation = kp @ (traj.pos[k] - state.x) + kd @ (v_demo[k] - state.v)
        nxt, a, reward, done = step_with_reward(state, env, actuation, cfg, cost_cfg)
        obs2 = assemble_observation(nxt, env)
        transitions.append(Transition(s=obs, a=a, r=reward, s2=obs2, d=done))
        state, obs = nxt, obs2
        max_err = max(max_err, float(np.linalg.norm(traj.pos[k + 1] - state.x)))
        if done:
            break
    if max_err > track_tol:
        raise DemoTrackingError(
            f"max tracking error {max_err:.4f} m exceeds tolerance {track_tol} m"
        )
    return transitions, max_err


def _min_jerk_segment(p0: np.ndarray, p1: np.ndarray, n_steps: int) -> np.ndarray:
    """Positions along p0 -> p1 under the classic smooth time profile."""
    u = np.linspace(0.0, 1.0, n_steps + 1)
    s = 10.0 * u**3 - 15.0 * u**4 + 6.0 * u**5
    return p0[None, :] + (p1 - p0)[None, :] * s[:, None]


def _via_path(env: EnvInstance, style: str, side: float, margin: float) -> np.ndarray | None:
    """Mid via-point for the requested avoidance style, or None if moot."""
    p0, p1 = env.x_init, env.x_goal
    mid = 0.5 * (p0 + p1)
    axis = env.obst_top[:2]
    seg = p1[:2] - p0[:2]
    seg_sq = float(seg @ seg)
    if seg_sq > 0.0:
        frac = float(np.clip((axis - p0[:2]) @ seg / seg_sq, 0.0, 1.0))
    else:
        frac = 0.0
    closest = p0[:2] + frac * seg
    offset = closest - axis
    rho = float(np.linalg.norm(offset))
    if rho >= margin:
        return mid  # straight footprint already clears the cylinder
    via = mid.copy()
    if style == "around":
        if rho > 1e-12:
            lateral = offset / rho
        else:
            lateral = np.array([-seg[1], seg[0]])
            norm = np.linalg.norm(lateral)
            lateral = lateral / norm if norm > 0 else np.array([1.0, 0.0])
        via[:2] = axis + side * lateral * margin
    else:  # over
        via[:2] = closest
        via[2] = env.obst_top[2] + margin
    return via


def synth_demo(
    env: EnvInstance,
    rng=None,
    clearance: float = 0.08,
    v_avg: float = 0.2,
    sample_dt: float = 0.01,
) -> RawTrajectory:
    """Generate a smooth obstacle-clearing demonstration for a scenario.

    A three-point via path (start, displaced midpoint, goal) is traversed
    with a minimum-jerk profile per segment and normalized to the target
    average speed. The via point is pushed laterally around or vertically
    over the cylinder by radius + clearance, the style picked at random; if
    the produced samples collide or leave the 1 m workspace box the other
    style, the other lateral side, and a wider margin are tried in turn.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    env.validate()
    for point, name in ((env.x_init, "start"), (env.x_goal, "goal")):
        lat = math.hypot(point[0] - env.obst_top[0], point[1] - env.obst_top[1])
        if lat <= env.obst_radius and point[2] < env.obst_top[2]:
            raise ValueError(f"{name} position overlaps the obstacle footprint")
    margin = env.obst_radius + clearance
    style = "around" if rng.random() < 0.5 else "over"
    other = "over" if style == "around" else "around"
    mid = 0.5 * (env.x_init + env.x_goal)
    attempts = []
    for m in (margin, 1.5 * margin):
        for sty in (style, other):
            for side in (1.0, -1.0) if sty == "around" else (1.0,):
                attempts.append((sty, side, m))
    for sty, side, m in attempts:
        via = _via_path(env, sty, side, m)
        if via is None:
            continue
        pieces = []
        for a, b in ((env.x_init, via), (via, env.x_goal)):
            seg_len = float(np.linalg.norm(b - a))
            n = max(2, int(round(seg_len / v_avg / sample_dt)))
            pieces.append(_min_jerk_segment(a, b, n))
        pos = np.vstack([pieces[0], pieces[1][1:]])
        traj = RawTrajectory(
            t=np.arange(len(pos)) * sample_dt,
            pos=pos,
            goal=env.x_goal.copy(),
            obst_top=env.obst_top.copy(),
            obst_radius=env.obst_radius,
        )
        traj = normalize_speed(traj, v_avg)
        inside_box = bool(np.all(np.abs(pos - mid) <= 0.5)) and bool(np.all(pos[:, 2] > 0.0))
        collides = any(collision_check(p, env) for p in pos)
        if inside_box and not collides:
            return traj
    raise SynthDemoError("no clearance direction keeps the path inside the workspace box")


def _triple(values) -> StatTriple:
    arr = np.asarray(values, dtype=float)
    return StatTriple(
        mean=float(arr.mean()),
        std=float(arr.std()),
        span=float(arr.max() - arr.min()),
    )


def _kinematics(traj: RawTrajectory) -> tuple[float, float, float]:
    length = traj.path_length()
    speeds = np.linalg.norm(finite_diff_velocity(traj), axis=1)
    return length, float(speeds.max()), length / traj.duration


def dataset_stats(dataset, v_target: float = 0.2) -> tuple[DemoStats, DemoStats]:
    """Kinematic diversity before and after speed normalization."""
    if not dataset:
        raise ValueError("dataset is empty")
    raw = [_kinematics(traj) for traj in dataset]
    norm = [_kinematics(normalize_speed(traj, v_target)) for traj in dataset]

    def pack(rows) -> DemoStats:
        lengths, peaks, avgs = zip(*rows)
        return DemoStats(
            length=_triple(lengths), max_speed=_triple(peaks), avg_speed=_triple(avgs)
        )

    return pack(raw), pack(norm)


# -- file I/O ----------------------------------------------------------------


def write_demo_csv(path, traj: RawTrajectory) -> None:
    lines = [
        "# goal=" + ",".join(repr(float(v)) for v in traj.goal),
        "# obstacle="
        + ",".join(repr(float(v)) for v in traj.obst_top)
        + f",{traj.obst_radius!r}",
        "t,x,y,z",
    ]
    for t, p in zip(traj.t, traj.pos):
        lines.append(f"{t!r},{p[0]!r},{p[1]!r},{p[2]!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_demo_csv(path) -> RawTrajectory:
    goal = None
    obstacle = None
    ts: list[float] = []
    pos: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("goal="):
                    goal = [float(v) for v in body[len("goal=") :].split(",")]
                elif body.startswith("obstacle="):
                    obstacle = [float(v) for v in body[len("obstacle=") :].split(",")]
                continue
            if line.startswith("t,"):
                continue
            t, x, y, z = (float(v) for v in line.split(","))
            ts.append(t)
            pos.append([x, y, z])
    if goal is None or obstacle is None or len(obstacle) != 4:
        raise ValueError(f"{path}: missing goal/obstacle header lines")
    traj = RawTrajectory(
        t=np.array(ts),
        pos=np.array(pos),
        goal=np.array(goal),
        obst_top=np.array(obstacle[:3]),
        obst_radius=obstacle[3],
    )
    traj.validate()
    return traj


def load_demo_dir(path) -> list[RawTrajectory]:
    files = sorted(Path(path).glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no demo CSV files under {path}")
    return [read_demo_csv(f) for f in files]


def write_buffer(path, transitions) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tr in transitions:
            fh.write(
                json.dumps(
                    {
                        "s": [float(v) for v in tr.s],
                        "a": [float(v) for v in tr.a],
                        "r": float(tr.r),
                        "s2": [float(v) for v in tr.s2],
                        "d": int(tr.d),
                    }
                )
                + "\n"
            )


def read_buffer(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Load a buffer file into (S, A, R, S2, D) arrays."""
    s, a, r, s2, d = [], [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            s.append(row["s"])
            a.append(row["a"])
            r.append(row["r"])
            s2.append(row["s2"])
            d.append(row["d"])
    if not s:
        raise ValueError(f"{path}: buffer file holds no transitions")
    return (
        np.asarray(s, dtype=float),
        np.asarray(a, dtype=float),
        np.asarray(r, dtype=float),
        np.asarray(s2, dtype=float),
        np.asarray(d, dtype=float),
    )


def prepare_transitions(
    trajs,
    cfg: DmpConfig,
    cost_cfg: CostConfig,
    demo_cfg: DemoConfig,
) -> tuple[list[Transition], int, list[float]]:
    """Full pipeline over a demo list: normalize, resample, PD-label.

    Trajectories whose tracking error exceeds the gate are dropped. Returns
    (transitions, dropped count, per-demo max tracking errors).
    """
    transitions: list[Transition] = []
    dropped = 0
    errors: list[float] = []
    for traj in trajs:
        normalized = normalize_speed(traj, demo_cfg.v_avg)
        gridded = resample(normalized, cfg.dt)
        try:
            trs, err = pid_label(
                gridded, cfg, cost_cfg, kp=demo_cfg.kp, kd=demo_cfg.kd,
                track_tol=demo_cfg.track_tol,
            )
        except DemoTrackingError:
            dropped += 1
            continue
        transitions.extend(trs)
        errors.append(err)
    return transitions, dropped, errors
