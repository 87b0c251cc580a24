"""Movement-primitive motion planning with demonstration-boosted off-policy RL.

A point-mass second-order planning system with a single cylinder obstacle,
a demonstration-to-replay-buffer pipeline, a dual-buffer actor-critic trainer
with a value-gap behavior-cloning actor loss, and an evaluation harness.
"""

from .config import (
    AgentConfig,
    ConfigError,
    ConfigInvariantError,
    CostConfig,
    DemoConfig,
    DmpConfig,
    EnvBoxes,
    RunConfig,
    UnknownConfigKeyError,
    config_from_text,
    config_to_text,
    load_config,
    save_config,
)
from .costs import (
    collision_check,
    dead_zone,
    potential_field,
    running_cost,
    terminal_cost,
    termination_flag,
)
from .dmp import (
    DmpState,
    EnvInstance,
    NumericalDivergenceError,
    Transition,
    assemble_observation,
    canonical_step,
    classic_dmp_step_1d,
    dmp_accel,
    dmp_step,
    initial_state,
    rollout,
    write_trajectory_csv,
    zero_policy,
)
from .scoring import EvalRecord, aggregate_seeds, l_arpe, smooth_curve

__version__ = "0.1.0"
