"""Point-mass movement-primitive dynamics and episode rollouts.

The planning system is a coupled second-order model in Cartesian space,

    tau * x'' = k_alpha (k_beta (xg - x) - x') + zeta * |xg - xi| * f,
    zeta(t+dt) = zeta(t) - (dt/tau) * omega * zeta(t),

integrated with a zero-order hold: the position advances with the old
velocity, the velocity with the current acceleration. The forcing gain is
the scalar start-goal distance, so the three axes are coupled through a
single policy output; a classic one-dimensional primitive with the
element-wise gain ``(xg - x0) * f`` is kept as a regression reference.

Observations are 10-vectors ``[x, v, x - x_obstacle_top, zeta]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CostConfig, DmpConfig
from .costs import collision_check, running_cost, terminal_cost, termination_flag
from .scoring import EvalRecord, l_arpe

OBS_DIM = 10
ACTION_DIM = 3

TRAJECTORY_COLUMNS = (
    "t,x,y,z,vx,vy,vz,zeta,ax_cmd,ay_cmd,az_cmd,reward,done"
)
TRAJECTORY_COST_COLUMNS = "J1,J2,J3,J4"


class NumericalDivergenceError(RuntimeError):
    """A rollout produced a non-finite state."""


@dataclass
class EnvInstance:
    """One planning scenario: start, goal, and one static vertical cylinder.

    ``obst_top`` is the Cartesian coordinate of the cylinder's top-surface
    center; the cylinder stands on the ground plane z = 0.
    """

    x_init: np.ndarray
    x_goal: np.ndarray
    obst_top: np.ndarray
    obst_radius: float = 0.035

    def __post_init__(self) -> None:
        self.x_init = np.asarray(self.x_init, dtype=float)
        self.x_goal = np.asarray(self.x_goal, dtype=float)
        self.obst_top = np.asarray(self.obst_top, dtype=float)

    def validate(self) -> None:
        for name in ("x_init", "x_goal", "obst_top"):
            if getattr(self, name).shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")
        if self.obst_top[2] <= 0.0:
            raise ValueError("obstacle top must be above the ground plane")
        if np.linalg.norm(self.x_goal - self.x_init) == 0.0:
            raise ValueError("goal must differ from the initial position")
        if self.obst_radius <= 0.0:
            raise ValueError("obstacle radius must be positive")


@dataclass
class DmpState:
    """Dynamic state: position, velocity, canonical phase and elapsed time."""

    x: np.ndarray
    v: np.ndarray
    zeta: float
    t: float


@dataclass
class Transition:
    """One experience tuple (s, a, r, s', d)."""

    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray
    d: bool


def initial_state(env: EnvInstance, cfg: DmpConfig) -> DmpState:
    """Rest state at the scenario's start position."""
    return DmpState(x=env.x_init.copy(), v=np.zeros(3), zeta=cfg.zeta0, t=0.0)


def assemble_observation(state: DmpState, env: EnvInstance) -> np.ndarray:
    """10-vector [x(3), v(3), x - obstacle_top(3), zeta]."""
    return np.concatenate(
        [state.x, state.v, state.x - env.obst_top, [state.zeta]]
    )


def state_from_observation(obs: np.ndarray, t: float) -> DmpState:
    """Inverse of assemble_observation (the obstacle block is redundant)."""
    obs = np.asarray(obs, dtype=float)
    return DmpState(x=obs[0:3].copy(), v=obs[3:6].copy(), zeta=float(obs[9]), t=t)


def canonical_step(zeta: float, cfg: DmpConfig) -> float:
    """One zero-order-hold decay step: zeta * (1 - dt*omega/tau)."""
    return zeta * (1.0 - cfg.dt * cfg.omega / cfg.tau)


def clamp_action(action: np.ndarray, cfg: DmpConfig) -> np.ndarray:
    """Saturate componentwise into [f_min, f_max]; rejects non-finite input."""
    a = np.asarray(action, dtype=float)
    if a.shape != (ACTION_DIM,):
        raise ValueError(f"action must be a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("action has non-finite components")
    return np.clip(a, cfg.f_min, cfg.f_max)


def dmp_accel(
    state: DmpState, env: EnvInstance, action: np.ndarray, cfg: DmpConfig
) -> np.ndarray:
    """Forced acceleration of the coupled model.

    ``(k_alpha (k_beta (xg - x) - v) + zeta * |xg - xi| * a) / tau`` with the
    action saturated first. The gain is the scalar Euclidean start-goal
    distance, not a per-axis displacement.
    """
    a = clamp_action(action, cfg)
    gain = state.zeta * float(np.linalg.norm(env.x_goal - env.x_init))
    spring = cfg.k_alpha @ (cfg.k_beta @ (env.x_goal - state.x) - state.v)
    return (spring + gain * a) / cfg.tau


def dmp_step(
    state: DmpState, env: EnvInstance, action: np.ndarray, cfg: DmpConfig
) -> DmpState:
    """One zero-order-hold integration step.

    The position update uses the old velocity; the velocity uses the
    acceleration evaluated at the old state.
    """
    accel = dmp_accel(state, env, action, cfg)
    return DmpState(
        x=state.x + cfg.dt * state.v,
        v=state.v + cfg.dt * accel,
        zeta=canonical_step(state.zeta, cfg),
        t=state.t + cfg.dt,
    )


def classic_dmp_step_1d(
    x: float,
    v: float,
    zeta: float,
    x0: float,
    xg: float,
    f_value: float,
    alpha: float,
    beta: float,
    tau: float,
    omega: float,
    dt: float,
) -> tuple[float, float, float]:
    """One Euler step of the classic scalar primitive.

    Identical integration scheme, but the forcing gain is the element-wise
    displacement ``(xg - x0) * f`` instead of the distance norm.
    """
    accel = (alpha * (beta * (xg - x) - v) + zeta * (xg - x0) * f_value) / tau
    return x + dt * v, v + dt * accel, zeta * (1.0 - dt * omega / tau)


def step_with_reward(
    state: DmpState,
    env: EnvInstance,
    action: np.ndarray,
    cfg: DmpConfig,
    cost_cfg: CostConfig,
    force_done: bool = False,
) -> tuple[DmpState, np.ndarray, float, bool]:
    """Advance one step and attach the reward and termination flag.

    The flag is evaluated on the new state. A terminating transition is
    charged the terminal goal-error cost only; every other transition is
    charged the running cost of the pre-step state with the realized
    (post-saturation) acceleration. Returns (next_state, stored_action,
    reward, done).
    """
    a = clamp_action(action, cfg)
    accel = dmp_accel(state, env, a, cfg)
    nxt = dmp_step(state, env, a, cfg)
    done = force_done or termination_flag(nxt.t, nxt.x, env, cfg, cost_cfg)
    if done:
        reward = -terminal_cost(nxt.x, env, cost_cfg)
    else:
        reward = -running_cost(state, accel, env, cost_cfg)[0]
    return nxt, a, reward, done


def rollout(
    policy,
    env: EnvInstance,
    cfg: DmpConfig,
    cost_cfg: CostConfig,
    noise_sigma: float = 0.0,
    rng=None,
) -> tuple[list[Transition], EvalRecord]:
    """Run one episode under ``policy`` (a 10-vector -> 3-vector callable).

    Gaussian exploration noise (std ``noise_sigma`` per component) is added
    to the policy output before saturation; the stored action is the
    saturated one. The episode ends when the termination flag fires or after
    ``horizon/dt`` steps, whichever comes first. Raises
    NumericalDivergenceError if the state leaves the finite range.
    """
    if noise_sigma > 0.0:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    state = initial_state(env, cfg)
    max_steps = cfg.max_steps()
    transitions: list[Transition] = []
    total = 0.0
    collided = collision_check(state.x, env)
    obs = assemble_observation(state, env)
    for k in range(max_steps):
        action = np.asarray(policy(obs), dtype=float)
        if noise_sigma > 0.0:
            action = action + rng.normal(0.0, noise_sigma, size=ACTION_DIM)
        nxt, a, reward, done = step_with_reward(
            state, env, action, cfg, cost_cfg, force_done=(k + 1 == max_steps)
        )
        if not (np.all(np.isfinite(nxt.x)) and np.all(np.isfinite(nxt.v))):
            raise NumericalDivergenceError(
                f"non-finite state at step {k + 1} (t={nxt.t:.3f})"
            )
        obs2 = assemble_observation(nxt, env)
        transitions.append(Transition(s=obs, a=a, r=reward, s2=obs2, d=done))
        total += reward
        collided = collided or collision_check(nxt.x, env)
        state, obs = nxt, obs2
        if done:
            break
    record = EvalRecord(
        arpe=total,
        larpe=l_arpe(total),
        collided=collided,
        final_error=float(np.linalg.norm(state.x - env.x_goal)),
        steps=len(transitions),
    )
    return transitions, record


def zero_policy(_obs: np.ndarray) -> np.ndarray:
    """Unforced reference policy."""
    return np.zeros(ACTION_DIM)


def _fmt(value: float) -> str:
    return format(float(value), ".9g")


def write_trajectory_csv(
    path,
    transitions,
    env: EnvInstance,
    cfg: DmpConfig,
    cost_cfg: CostConfig | None = None,
    verbose_cost: bool = False,
) -> None:
    """Dump one transition per row, 9 significant digits.

    ``verbose_cost`` appends the four weighted running-cost components
    evaluated at the pre-step state (diagnostics; on the terminal row they
    are not the charged reward).
    """
    if verbose_cost and cost_cfg is None:
        raise ValueError("verbose_cost requires a cost config")
    header = TRAJECTORY_COLUMNS + ("," + TRAJECTORY_COST_COLUMNS if verbose_cost else "")
    lines = [header]
    for k, tr in enumerate(transitions):
        state = state_from_observation(tr.s, k * cfg.dt)
        row = [
            _fmt(k * cfg.dt),
            *(_fmt(v) for v in state.x),
            *(_fmt(v) for v in state.v),
            _fmt(state.zeta),
            *(_fmt(v) for v in tr.a),
            _fmt(tr.r),
            str(int(tr.d)),
        ]
        if verbose_cost:
            accel = dmp_accel(state, env, tr.a, cfg)
            row.extend(_fmt(c) for c in running_cost(state, accel, env, cost_cfg)[1])
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
