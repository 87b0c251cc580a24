"""Step-cost primitives for the cylinder-obstacle reaching world.

The per-step cost combines four non-negative terms (acceleration magnitude,
goal distance, a ground barrier and a height-gated obstacle barrier); a fifth
term charges the final goal error once, on whichever transition ends the
episode. Rewards are the negated costs, so returns are always non-positive.
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np

from .config import CostConfig, DmpConfig

if TYPE_CHECKING:
    from .dmp import DmpState, EnvInstance


def potential_field(x: float, eps0: float, eps1: float, cap: float = 1e6) -> float:
    """Inverse-square barrier pushing x away from eps0.

    Returns ``(x - eps0)**-2 - (eps1 - eps0)**-2`` on (eps0, eps1), exactly 0
    for x >= eps1 (continuous at the outer bound), and the finite ``cap`` for
    x <= eps0 where the raw expression would be undefined or explode.
    """
    if x >= eps1:
        return 0.0
    if x <= eps0:
        return cap
    d = x - eps0
    w = eps1 - eps0
    return 1.0 / (d * d) - 1.0 / (w * w)


def dead_zone(x: float, eps: float) -> float:
    """Zero on [0, eps], then the excess x - eps."""
    return 0.0 if x <= eps else x - eps


def running_cost(
    state: "DmpState", accel: np.ndarray, env: "EnvInstance", cfg: CostConfig
) -> tuple[float, np.ndarray]:
    """Weighted step cost and its four weighted components.

    Components: ``alpha1*|a|^2`` (smoothness), ``alpha2*|x - xg|^2`` (goal
    pull), ``alpha3*eta(z)`` (ground barrier) and ``alpha4*eta(lat - r)``
    (obstacle barrier, active only while the position is strictly between the
    ground and the cylinder top). The acceleration is the realized one, after
    action saturation.
    """
    accel = np.asarray(accel, dtype=float)
    j1 = cfg.alpha1 * float(accel @ accel)
    goal_err = state.x - env.x_goal
    j2 = cfg.alpha2 * float(goal_err @ goal_err)
    j3 = cfg.alpha3 * potential_field(float(state.x[2]), cfg.eps0_d, cfg.eps1_d, cfg.eta_cap)
    j4 = 0.0
    if 0.0 < state.x[2] < env.obst_top[2]:
        lat = math.hypot(state.x[0] - env.obst_top[0], state.x[1] - env.obst_top[1])
        j4 = cfg.alpha4 * potential_field(
            lat - env.obst_radius, cfg.eps0_b, cfg.eps1_b, cfg.eta_cap
        )
    total = j1 + j2 + j3 + j4
    return total, np.array([j1, j2, j3, j4])


def terminal_cost(x: np.ndarray, env: "EnvInstance", cfg: CostConfig) -> float:
    """Final goal-error charge ``alpha5 * dead_zone(|x - xg|, eps_t)``."""
    err = float(np.linalg.norm(np.asarray(x, dtype=float) - env.x_goal))
    return cfg.alpha5 * dead_zone(err, cfg.eps_t)


def termination_flag(
    t: float, x: np.ndarray, env: "EnvInstance", dmp_cfg: DmpConfig, cost_cfg: CostConfig
) -> bool:
    """True once the clock reaches the horizon or the goal ball is entered."""
    if t >= dmp_cfg.horizon:
        return True
    return float(np.linalg.norm(np.asarray(x, dtype=float) - env.x_goal)) <= cost_cfg.eps_t


def collision_check(x: np.ndarray, env: "EnvInstance") -> bool:
    """Inside the cylinder volume (strictly below its top) or below ground."""
    x = np.asarray(x, dtype=float)
    if x[2] < 0.0:
        return True
    if not 0.0 < x[2] < env.obst_top[2]:
        return False
    lat = math.hypot(x[0] - env.obst_top[0], x[1] - env.obst_top[1])
    return lat <= env.obst_radius
