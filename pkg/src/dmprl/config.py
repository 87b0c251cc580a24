"""Configuration dataclasses and the flat key=value config file format.

Every tunable constant of the library lives in one of the dataclasses below
and has a calibrated default. A run configuration can be round-tripped
through a plain text file of ``key=value`` lines (``#`` starts a comment,
vectors are comma separated, the gain matrices are written as their
isotropic diagonal scale). Unknown keys are a hard error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigError(Exception):
    """Base class for configuration problems."""


class UnknownConfigKeyError(ConfigError):
    """The config text contains a key that matches no known field."""


class ConfigInvariantError(ConfigError):
    """A config value set violates a structural invariant."""


def _eye3(scale: float) -> np.ndarray:
    return np.eye(3) * scale


def _vec3(*xyz: float) -> np.ndarray:
    return np.array(xyz, dtype=float)


@dataclass
class DmpConfig:
    """Physical and temporal constants of the planning dynamics.

    The unforced second-order system ``tau*x'' = k_alpha(k_beta(xg - x) - x')``
    must be stable and the canonical decay factor ``1 - dt*omega/tau`` must
    stay positive so the phase variable never changes sign.
    """

    k_alpha: np.ndarray = field(default_factory=lambda: _eye3(10.0))
    k_beta: np.ndarray = field(default_factory=lambda: _eye3(1.2))
    tau: float = 0.25
    omega: float = 6.0
    zeta0: float = 1.0
    f_min: float = -5.0
    f_max: float = 5.0
    dt: float = 0.02
    horizon: float = 5.0

    def validate(self) -> None:
        if self.tau <= 0.0:
            raise ConfigInvariantError("tau must be positive")
        if self.dt <= 0.0:
            raise ConfigInvariantError("dt must be positive")
        if self.dt * self.omega / self.tau >= 1.0:
            raise ConfigInvariantError(
                "dt*omega/tau must be below 1 so the canonical variable stays positive"
            )
        if not self.f_min < self.f_max:
            raise ConfigInvariantError("f_min must be strictly below f_max")
        if self.zeta0 <= 0.0:
            raise ConfigInvariantError("zeta0 must be positive")
        if self.horizon <= 0.0:
            raise ConfigInvariantError("horizon must be positive")
        if np.asarray(self.k_alpha).shape != (3, 3) or np.asarray(self.k_beta).shape != (3, 3):
            raise ConfigInvariantError("gain matrices must be 3x3")

    def max_steps(self) -> int:
        """Number of integration steps covering one full-horizon episode."""
        return int(round(self.horizon / self.dt))


@dataclass
class CostConfig:
    """Weights and radii of the composite step cost.

    The barrier bounds must satisfy 0 < eps0 < eps1 for both the obstacle
    and the ground field; the barrier returns ``eta_cap`` instead of blowing
    up once its argument falls to eps0 or below, keeping returns finite.
    """

    alpha1: float = 0.001
    alpha2: float = 10.0
    alpha3: float = 0.001
    alpha4: float = 0.001
    alpha5: float = 1e5
    eps0_b: float = 0.045
    eps1_b: float = 0.05
    eps0_d: float = 0.01
    eps1_d: float = 0.05
    eps_t: float = 0.01
    eta_cap: float = 1e6

    def validate(self) -> None:
        for name in ("alpha1", "alpha2", "alpha3", "alpha4", "alpha5"):
            if getattr(self, name) < 0.0:
                raise ConfigInvariantError(f"{name} must be non-negative")
        if not 0.0 < self.eps0_b < self.eps1_b:
            raise ConfigInvariantError("obstacle field bounds need 0 < eps0_b < eps1_b")
        if not 0.0 < self.eps0_d < self.eps1_d:
            raise ConfigInvariantError("ground field bounds need 0 < eps0_d < eps1_d")
        if self.eps_t <= 0.0:
            raise ConfigInvariantError("eps_t must be positive")
        if self.eta_cap <= 0.0:
            raise ConfigInvariantError("eta_cap must be positive")


@dataclass
class AgentConfig:
    """Hyper-parameters of the dual-buffer off-policy trainer."""

    gamma: float = 0.99
    sigma: float = 0.1
    episodes: int = 500
    polyak: float = 0.995
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    critic_demo_batch: int = 450
    critic_inter_batch: int = 50
    actor_demo_batch: int = 100
    actor_inter_batch: int = 100
    lambda_bc: float = 2.0
    update_every: int = 1
    warmup_steps: int = 1000
    bc_mode: str = "implicit"
    buffer_capacity: int = 1_000_000

    def validate(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ConfigInvariantError("gamma must lie in (0, 1)")
        if not 0.0 < self.polyak < 1.0:
            raise ConfigInvariantError("polyak must lie in (0, 1)")
        if self.sigma < 0.0:
            raise ConfigInvariantError("sigma must be non-negative")
        if self.lambda_bc < 0.0:
            raise ConfigInvariantError("lambda_bc must be non-negative")
        if self.episodes < 1 or self.update_every < 1:
            raise ConfigInvariantError("episodes and update_every must be at least 1")
        if self.warmup_steps < 0:
            raise ConfigInvariantError("warmup_steps must be non-negative")
        if self.bc_mode not in ("implicit", "explicit", "none"):
            raise ConfigInvariantError("bc_mode must be implicit, explicit or none")
        for name in (
            "critic_demo_batch",
            "critic_inter_batch",
            "actor_demo_batch",
            "actor_inter_batch",
        ):
            size = getattr(self, name)
            if size < 1:
                raise ConfigInvariantError(f"{name} must be at least 1")
            if size > self.buffer_capacity:
                raise ConfigInvariantError(f"{name} exceeds buffer_capacity")
        if self.lr_actor <= 0.0 or self.lr_critic <= 0.0:
            raise ConfigInvariantError("learning rates must be positive")

    @property
    def refining_factor(self) -> float:
        """Demo-to-interaction ratio of the critic batch (9 under defaults)."""
        return self.critic_demo_batch / self.critic_inter_batch


@dataclass
class EnvBoxes:
    """Sampling regions for goals and obstacles.

    Goals are drawn uniformly from an axis-aligned box (a tight one for
    training, a much wider one for testing). The obstacle top-center is drawn
    from a box centered on the midpoint between the start and the sampled
    goal. Goals closer to the start than ``min_goal_dist`` are re-drawn.
    """

    x_init: np.ndarray = field(default_factory=lambda: _vec3(0.0, 0.0, 0.05))
    goal_center: np.ndarray = field(default_factory=lambda: _vec3(0.30, 0.35, 0.08))
    goal_half: np.ndarray = field(default_factory=lambda: _vec3(0.05, 0.05, 0.01))
    test_goal_center: np.ndarray = field(default_factory=lambda: _vec3(0.32, 0.34, 0.09))
    test_goal_half: np.ndarray = field(default_factory=lambda: _vec3(0.30, 0.25, 0.05))
    obst_half: np.ndarray = field(default_factory=lambda: _vec3(0.05, 0.05, 0.02))
    obst_radius: float = 0.035
    min_goal_dist: float = 0.15

    def validate(self) -> None:
        for name in ("goal_half", "test_goal_half", "obst_half"):
            if np.any(np.asarray(getattr(self, name)) < 0.0):
                raise ConfigInvariantError(f"{name} components must be non-negative")
        if self.obst_radius <= 0.0:
            raise ConfigInvariantError("obst_radius must be positive")
        if self.min_goal_dist < 0.0:
            raise ConfigInvariantError("min_goal_dist must be non-negative")


@dataclass
class DemoConfig:
    """Demonstration pipeline constants: PD labeling gains, recording rate,
    target average speed, obstacle clearance for synthetic paths, and the
    tracking-error gate that drops badly fitted demonstrations."""

    kp: np.ndarray = field(default_factory=lambda: _eye3(1500.0))
    kd: np.ndarray = field(default_factory=lambda: _eye3(40.0))
    v_avg: float = 0.2
    clearance: float = 0.08
    track_tol: float = 0.5
    sample_dt: float = 0.01

    def validate(self) -> None:
        for name in ("kp", "kd"):
            m = np.asarray(getattr(self, name))
            if m.shape != (3, 3):
                raise ConfigInvariantError(f"{name} must be 3x3")
            if np.min(np.linalg.eigvalsh((m + m.T) / 2.0)) <= 0.0:
                raise ConfigInvariantError(f"{name} must be positive definite")
        if self.v_avg <= 0.0:
            raise ConfigInvariantError("v_avg must be positive")
        if self.clearance < 0.0:
            raise ConfigInvariantError("clearance must be non-negative")
        if self.track_tol <= 0.0:
            raise ConfigInvariantError("track_tol must be positive")
        if self.sample_dt <= 0.0:
            raise ConfigInvariantError("sample_dt must be positive")


@dataclass
class RunConfig:
    """Merged view of all configuration groups plus run-level fields."""

    dmp: DmpConfig = field(default_factory=DmpConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    env: EnvBoxes = field(default_factory=EnvBoxes)
    demo: DemoConfig = field(default_factory=DemoConfig)
    seed: int = 0
    demos_path: str = ""
    checkpoint_path: str = ""
    log_path: str = ""

    def validate(self) -> None:
        self.dmp.validate()
        self.cost.validate()
        self.agent.validate()
        self.env.validate()
        self.demo.validate()


# key -> (group attribute, field name, value kind)
_KIND_FLOAT = "float"
_KIND_INT = "int"
_KIND_STR = "str"
_KIND_VEC3 = "vec3"
_KIND_DIAG3 = "diag3"

_KEY_SPEC: dict[str, tuple[str, str, str]] = {
    # dmp
    "k_alpha": ("dmp", "k_alpha", _KIND_DIAG3),
    "k_beta": ("dmp", "k_beta", _KIND_DIAG3),
    "tau": ("dmp", "tau", _KIND_FLOAT),
    "omega": ("dmp", "omega", _KIND_FLOAT),
    "zeta0": ("dmp", "zeta0", _KIND_FLOAT),
    "f_min": ("dmp", "f_min", _KIND_FLOAT),
    "f_max": ("dmp", "f_max", _KIND_FLOAT),
    "dt": ("dmp", "dt", _KIND_FLOAT),
    "horizon": ("dmp", "horizon", _KIND_FLOAT),
    # cost
    "alpha1": ("cost", "alpha1", _KIND_FLOAT),
    "alpha2": ("cost", "alpha2", _KIND_FLOAT),
    "alpha3": ("cost", "alpha3", _KIND_FLOAT),
    "alpha4": ("cost", "alpha4", _KIND_FLOAT),
    "alpha5": ("cost", "alpha5", _KIND_FLOAT),
    "eps0_b": ("cost", "eps0_b", _KIND_FLOAT),
    "eps1_b": ("cost", "eps1_b", _KIND_FLOAT),
    "eps0_d": ("cost", "eps0_d", _KIND_FLOAT),
    "eps1_d": ("cost", "eps1_d", _KIND_FLOAT),
    "eps_t": ("cost", "eps_t", _KIND_FLOAT),
    "eta_cap": ("cost", "eta_cap", _KIND_FLOAT),
    # agent
    "gamma": ("agent", "gamma", _KIND_FLOAT),
    "sigma": ("agent", "sigma", _KIND_FLOAT),
    "episodes": ("agent", "episodes", _KIND_INT),
    "polyak": ("agent", "polyak", _KIND_FLOAT),
    "lr_actor": ("agent", "lr_actor", _KIND_FLOAT),
    "lr_critic": ("agent", "lr_critic", _KIND_FLOAT),
    "critic_demo_batch": ("agent", "critic_demo_batch", _KIND_INT),
    "critic_inter_batch": ("agent", "critic_inter_batch", _KIND_INT),
    "actor_demo_batch": ("agent", "actor_demo_batch", _KIND_INT),
    "actor_inter_batch": ("agent", "actor_inter_batch", _KIND_INT),
    "lambda_bc": ("agent", "lambda_bc", _KIND_FLOAT),
    "update_every": ("agent", "update_every", _KIND_INT),
    "warmup_steps": ("agent", "warmup_steps", _KIND_INT),
    "bc_mode": ("agent", "bc_mode", _KIND_STR),
    "buffer_capacity": ("agent", "buffer_capacity", _KIND_INT),
    # env
    "x_init": ("env", "x_init", _KIND_VEC3),
    "goal_center": ("env", "goal_center", _KIND_VEC3),
    "goal_half": ("env", "goal_half", _KIND_VEC3),
    "test_goal_center": ("env", "test_goal_center", _KIND_VEC3),
    "test_goal_half": ("env", "test_goal_half", _KIND_VEC3),
    "obst_half": ("env", "obst_half", _KIND_VEC3),
    "obst_radius": ("env", "obst_radius", _KIND_FLOAT),
    "min_goal_dist": ("env", "min_goal_dist", _KIND_FLOAT),
    # demo
    "kp": ("demo", "kp", _KIND_DIAG3),
    "kd": ("demo", "kd", _KIND_DIAG3),
    "v_avg": ("demo", "v_avg", _KIND_FLOAT),
    "clearance": ("demo", "clearance", _KIND_FLOAT),
    "track_tol": ("demo", "track_tol", _KIND_FLOAT),
    "sample_dt": ("demo", "sample_dt", _KIND_FLOAT),
    # run
    "seed": ("", "seed", _KIND_INT),
    "demos_path": ("", "demos_path", _KIND_STR),
    "checkpoint_path": ("", "checkpoint_path", _KIND_STR),
    "log_path": ("", "log_path", _KIND_STR),
}

_SECTION_ORDER = ("dmp", "cost", "agent", "env", "demo", "run")


def _parse_value(key: str, raw: str, kind: str):
    try:
        if kind == _KIND_FLOAT:
            return float(raw)
        if kind == _KIND_INT:
            return int(raw)
        if kind == _KIND_STR:
            return raw
        if kind == _KIND_VEC3:
            parts = [float(p) for p in raw.split(",")]
            if len(parts) != 3:
                raise ValueError("expected 3 components")
            return np.array(parts, dtype=float)
        if kind == _KIND_DIAG3:
            return _eye3(float(raw))
    except ValueError as exc:
        raise ConfigInvariantError(f"bad value for key '{key}': {raw!r} ({exc})") from None
    raise AssertionError(f"unhandled kind {kind}")


def _format_value(value, kind: str) -> str:
    if kind == _KIND_FLOAT:
        return repr(float(value))
    if kind == _KIND_INT:
        return str(int(value))
    if kind == _KIND_STR:
        return str(value)
    if kind == _KIND_VEC3:
        return ",".join(repr(float(v)) for v in np.asarray(value))
    if kind == _KIND_DIAG3:
        return repr(float(np.asarray(value)[0, 0]))
    raise AssertionError(f"unhandled kind {kind}")


def apply_config_text(cfg: RunConfig, text: str) -> RunConfig:
    """Apply key=value lines onto an existing config (in place)."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigInvariantError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _KEY_SPEC:
            raise UnknownConfigKeyError(f"unknown config key '{key}' (line {lineno})")
        group, attr, kind = _KEY_SPEC[key]
        target = getattr(cfg, group) if group else cfg
        setattr(target, attr, _parse_value(key, raw, kind))
    return cfg


def config_from_text(text: str) -> RunConfig:
    cfg = apply_config_text(RunConfig(), text)
    cfg.validate()
    return cfg


def load_config(path_or_defaults: str) -> RunConfig:
    """Load a config file; the literal name ``defaults`` yields the defaults."""
    if path_or_defaults == "defaults":
        cfg = RunConfig()
        cfg.validate()
        return cfg
    with open(path_or_defaults, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read())


def config_to_text(cfg: RunConfig) -> str:
    """Serialize to the canonical key=value layout (stable, diff friendly)."""
    lines: list[str] = []
    for section in _SECTION_ORDER:
        lines.append(f"# {section}")
        for key, (group, attr, kind) in _KEY_SPEC.items():
            in_section = (group or "run") == section
            if not in_section:
                continue
            target = getattr(cfg, group) if group else cfg
            lines.append(f"{key}={_format_value(getattr(target, attr), kind)}")
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
