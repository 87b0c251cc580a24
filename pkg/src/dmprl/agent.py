"""Dual-buffer off-policy trainer.

Demonstration transitions seed both a dedicated demo buffer and the
interaction ring buffer; the critic trains on a refined batch (demo plus
interaction draws concatenated) and the actor on an interaction batch plus
a behavior-cloning term over demo states. The BC term is either the
rectified value-gap penalty (implicit mode), a squared action deviation
(explicit mode), or absent (none mode, the vanilla baseline, whose buffer
is pre-filled with random-action rollouts instead of demos).

All randomness flows from one master seed; fixed-order child streams drive
network init, environment sampling, exploration noise, batch sampling, and
the baseline pre-fill, so ablations share environment sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .costs import collision_check
from .dmp import (
    ACTION_DIM,
    OBS_DIM,
    EnvInstance,
    assemble_observation,
    initial_state,
    rollout,
    step_with_reward,
)
from .nets import (
    Adam,
    Mlp,
    actor_net,
    add_grads,
    critic_net,
    flatten_grads,
    save_checkpoint,
    soft_update,
)
from .scoring import l_arpe

_ROW_DIM = OBS_DIM + ACTION_DIM + 1 + OBS_DIM + 1  # s, a, r, s2, d

# fixed child-stream order under the master seed
_STREAM_INIT, _STREAM_ENV, _STREAM_NOISE, _STREAM_BATCH, _STREAM_PREFILL = range(5)


class TrainingDivergedError(RuntimeError):
    """A loss became non-finite; the message carries a batch summary."""


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    d: np.ndarray

    def __len__(self) -> int:
        return len(self.r)


def concat_batches(first: Batch, second: Batch) -> Batch:
    return Batch(
        s=np.concatenate([first.s, second.s]),
        a=np.concatenate([first.a, second.a]),
        r=np.concatenate([first.r, second.r]),
        s2=np.concatenate([first.s2, second.s2]),
        d=np.concatenate([first.d, second.d]),
    )


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored as flat float rows."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = int(capacity)
        self._rows = np.empty((self.capacity, _ROW_DIM))
        self._size = 0
        self._cursor = 0

    def __len__(self) -> int:
        return self._size

    def push(self, s, a, r, s2, d) -> None:
        row = self._rows[self._cursor]
        row[0:10] = s
        row[10:13] = a
        row[13] = r
        row[14:24] = s2
        row[24] = float(d)
        self._cursor = (self._cursor + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def extend(self, s, a, r, s2, d) -> None:
        for i in range(len(r)):
            self.push(s[i], a[i], r[i], s2[i], d[i])

    def push_transitions(self, transitions) -> None:
        for tr in transitions:
            self.push(tr.s, tr.a, tr.r, tr.s2, tr.d)

    def rows(self) -> np.ndarray:
        """In-insertion-order view of the live contents (copies)."""
        if self._size < self.capacity:
            return self._rows[: self._size].copy()
        return np.vstack(
            [self._rows[self._cursor :], self._rows[: self._cursor]]
        )

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform draw of n distinct rows; refuses silent truncation."""
        if n > self._size:
            raise ValueError(
                f"requested batch of {n} but the buffer holds {self._size}"
            )
        idx = rng.choice(self._size, size=n, replace=False)
        rows = self._rows[idx]
        return Batch(
            s=rows[:, 0:10],
            a=rows[:, 10:13],
            r=rows[:, 13],
            s2=rows[:, 14:24],
            d=rows[:, 24],
        )


# -- losses -------------------------------------------------------------------


def critic_targets(batch: Batch, actor_target: Mlp, critic_target: Mlp, gamma: float) -> np.ndarray:
    """Bootstrap labels r + gamma*(1-d)*Q'(s', pi'(s')); terminal rows get r."""
    a2 = actor_target.forward(batch.s2)
    q2 = critic_target.forward(np.concatenate([batch.s2, a2], axis=1))[:, 0]
    return batch.r + gamma * (1.0 - batch.d) * q2


def critic_loss(batch: Batch, critic: Mlp, labels: np.ndarray):
    """Mean squared Bellman error; labels are treated as constants."""
    q, cache = critic.forward_cached(np.concatenate([batch.s, batch.a], axis=1))
    err = q[:, 0] - labels
    n = len(err)
    loss = float(err @ err) / n
    grads, _ = critic.backward(cache, (2.0 / n) * err[:, None])
    return loss, grads


def policy_objective(batch: Batch, actor: Mlp, critic: Mlp):
    """Deterministic policy-gradient objective -mean Q(s, pi(s)).

    The gradient reaches the actor through the critic's action input; critic
    parameters receive nothing.
    """
    actions, cache_a = actor.forward_cached(batch.s)
    q, cache_q = critic.forward_cached(np.concatenate([batch.s, actions], axis=1))
    n = len(batch)
    loss = -float(q[:, 0].sum()) / n
    _, gin = critic.backward(cache_q, np.full((n, 1), -1.0 / n))
    grads, _ = actor.backward(cache_a, gin[:, OBS_DIM:])
    return loss, grads


def ibc_loss(demo_batch: Batch, actor: Mlp, critic: Mlp):
    """Rectified value-gap cloning penalty, mean over the batch.

    Per sample: ReLU(Q(s, a_demo) - Q(s, pi(s))). Samples whose policy action
    already scores at least the demo action are gated out and contribute zero
    loss and exactly zero gradient (subgradient 0 at the tie). The gradient
    flows to the actor through the critic's action input only.
    """
    actions, cache_a = actor.forward_cached(demo_batch.s)
    q_pi, cache_q = critic.forward_cached(
        np.concatenate([demo_batch.s, actions], axis=1)
    )
    q_demo = critic.forward(np.concatenate([demo_batch.s, demo_batch.a], axis=1))
    gap = q_demo[:, 0] - q_pi[:, 0]
    n = len(demo_batch)
    active = gap > 0.0
    loss = float(gap[active].sum()) / n
    gq = np.zeros((n, 1))
    gq[active, 0] = -1.0 / n  # d loss / d Q(s, pi(s)) on active samples
    _, gin = critic.backward(cache_q, gq)
    grads, _ = actor.backward(cache_a, gin[:, OBS_DIM:])
    return loss, grads


def ebc_loss(demo_batch: Batch, actor: Mlp):
    """Squared action-deviation cloning penalty (ablation baseline)."""
    actions, cache = actor.forward_cached(demo_batch.s)
    dev = demo_batch.a - actions
    n = len(demo_batch)
    loss = float(np.sum(dev * dev)) / n
    grads, _ = actor.backward(cache, (-2.0 / n) * dev)
    return loss, grads


def actor_loss(
    inter_batch: Batch,
    demo_batch: Batch | None,
    actor: Mlp,
    critic: Mlp,
    lambda_bc: float,
    bc_mode: str,
):
    """Combined actor objective: policy term plus lambda_bc * cloning term."""
    loss, grads = policy_objective(inter_batch, actor, critic)
    if bc_mode == "none" or lambda_bc == 0.0 or demo_batch is None:
        return loss, grads
    if bc_mode == "implicit":
        bc, bc_grads = ibc_loss(demo_batch, actor, critic)
    elif bc_mode == "explicit":
        bc, bc_grads = ebc_loss(demo_batch, actor)
    else:
        raise ValueError(f"unknown bc_mode {bc_mode!r}")
    return loss + lambda_bc * bc, add_grads(grads, bc_grads, scale=lambda_bc)


def sample_batches(
    demo_buf: ReplayBuffer, inter_buf: ReplayBuffer, cfg, rng: np.random.Generator
) -> tuple[Batch, Batch, Batch, Batch]:
    """Four independent uniform draws, in fixed order.

    Returns (demo actor batch, demo critic batch, interaction actor batch,
    interaction critic batch); the refined critic batch is the concatenation
    of the middle two per the caller's choice.
    """
    bd_pi = demo_buf.sample(cfg.actor_demo_batch, rng)
    bd_q = demo_buf.sample(cfg.critic_demo_batch, rng)
    bi_pi = inter_buf.sample(cfg.actor_inter_batch, rng)
    bi_q = inter_buf.sample(cfg.critic_inter_batch, rng)
    return bd_pi, bd_q, bi_pi, bi_q


# -- environment randomization ------------------------------------------------


def sample_env(mode: str, rng: np.random.Generator, boxes) -> EnvInstance:
    """Draw a scenario: goal from the mode's box, obstacle near the midpoint.

    Goals closer to the start than the minimum-distance gate are re-drawn.
    The obstacle top-center is uniform in a box centered on the midpoint of
    the start and the sampled goal.
    """
    if mode == "train":
        center, half = boxes.goal_center, boxes.goal_half
    elif mode == "test":
        center, half = boxes.test_goal_center, boxes.test_goal_half
    else:
        raise ValueError(f"unknown mode {mode!r}")
    while True:
        goal = rng.uniform(center - half, center + half)
        if np.linalg.norm(goal - boxes.x_init) >= boxes.min_goal_dist:
            break
    mid = 0.5 * (boxes.x_init + goal)
    obst = rng.uniform(mid - boxes.obst_half, mid + boxes.obst_half)
    env = EnvInstance(
        x_init=boxes.x_init.copy(),
        x_goal=goal,
        obst_top=obst,
        obst_radius=boxes.obst_radius,
    )
    env.validate()
    return env


# -- training loop --------------------------------------------------------------


@dataclass
class EpisodeLog:
    episode: int
    arpe: float
    larpe: float
    steps: int
    collisions: int  # 1 if any sample of the episode collided
    final_err: float


LOG_COLUMNS = "episode,arpe,larpe,steps,collisions,final_err"


def write_training_log(path, episodes: list[EpisodeLog]) -> None:
    lines = [LOG_COLUMNS]
    for ep in episodes:
        lines.append(
            f"{ep.episode},{ep.arpe!r},{ep.larpe!r},{ep.steps},{ep.collisions},{ep.final_err!r}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _seed_streams(seed: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(5)
    return [np.random.default_rng(c) for c in children]


def _batch_summary(batch: Batch) -> str:
    return (
        f"n={len(batch)} r[{batch.r.min():.3g},{batch.r.max():.3g}] "
        f"|s|max={np.abs(batch.s).max():.3g} |a|max={np.abs(batch.a).max():.3g}"
    )


def _prefill_random(inter_buf: ReplayBuffer, count: int, cfg: RunConfig, rng) -> None:
    """Fill the interaction buffer with random-action rollouts (none mode)."""
    pushed = 0
    while pushed < count:
        env = sample_env("train", rng, cfg.env)
        transitions, _ = rollout(
            lambda _obs: rng.uniform(cfg.dmp.f_min, cfg.dmp.f_max, size=ACTION_DIM),
            env,
            cfg.dmp,
            cfg.cost,
        )
        for tr in transitions:
            inter_buf.push(tr.s, tr.a, tr.r, tr.s2, tr.d)
            pushed += 1
            if pushed >= count:
                break


class Trainer:
    """Owns the networks, buffers and random streams of one training run."""

    def __init__(self, cfg: RunConfig, demo_data, seed: int):
        """``demo_data`` is the (S, A, R, S2, D) array tuple of labeled demos.

        In none mode the demos only determine the pre-fill size; their
        content never enters the buffers.
        """
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        streams = _seed_streams(seed)
        self.init_rng = streams[_STREAM_INIT]
        self.env_rng = streams[_STREAM_ENV]
        self.noise_rng = streams[_STREAM_NOISE]
        self.batch_rng = streams[_STREAM_BATCH]
        self.prefill_rng = streams[_STREAM_PREFILL]

        self.actor = actor_net(cfg.dmp, rng=self.init_rng)
        self.critic = critic_net(rng=self.init_rng)
        self.actor_target = self.actor.clone()
        self.critic_target = self.critic.clone()
        self.opt_actor = Adam(self.actor, lr=cfg.agent.lr_actor)
        self.opt_critic = Adam(self.critic, lr=cfg.agent.lr_critic)

        n_demo = len(demo_data[2])
        agent = cfg.agent
        self.inter_buf = ReplayBuffer(agent.buffer_capacity)
        if agent.bc_mode == "none":
            self.demo_buf = None
            _prefill_random(self.inter_buf, n_demo, cfg, self.prefill_rng)
        else:
            if n_demo < max(agent.actor_demo_batch, agent.critic_demo_batch):
                raise ValueError(
                    f"{n_demo} demo transitions cannot fill the demo batches"
                )
            self.demo_buf = ReplayBuffer(n_demo)
            self.demo_buf.extend(*demo_data)
            self.inter_buf.extend(*demo_data)

        self.total_steps = 0
        self.updates = 0
        self.episodes: list[EpisodeLog] = []

    # -- update machinery ---------------------------------------------------

    def _can_update(self) -> bool:
        agent = self.cfg.agent
        if self.total_steps < agent.warmup_steps:
            return False
        if self.total_steps % agent.update_every != 0:
            return False
        if len(self.inter_buf) < max(agent.actor_inter_batch, agent.critic_inter_batch):
            return False
        if agent.bc_mode == "none":
            return len(self.inter_buf) >= agent.critic_demo_batch + agent.critic_inter_batch
        return True

    def update_round(self) -> tuple[float, float]:
        """One optimization round: critic, then actor, then both targets."""
        agent = self.cfg.agent
        if agent.bc_mode == "none":
            refined = self.inter_buf.sample(
                agent.critic_demo_batch + agent.critic_inter_batch, self.batch_rng
            )
            bi_pi = self.inter_buf.sample(agent.actor_inter_batch, self.batch_rng)
            bd_pi = None
        else:
            bd_pi, bd_q, bi_pi, bi_q = sample_batches(
                self.demo_buf, self.inter_buf, agent, self.batch_rng
            )
            refined = concat_batches(bd_q, bi_q)

        labels = critic_targets(refined, self.actor_target, self.critic_target, agent.gamma)
        closs, cgrads = critic_loss(refined, self.critic, labels)
        if not np.isfinite(closs):
            raise TrainingDivergedError(
                f"critic loss became {closs} at update {self.updates}; "
                f"batch: {_batch_summary(refined)}"
            )
        self.opt_critic.step(self.critic.param_list(), flatten_grads(cgrads))

        aloss, agrads = actor_loss(
            bi_pi, bd_pi, self.actor, self.critic, agent.lambda_bc, agent.bc_mode
        )
        if not np.isfinite(aloss):
            raise TrainingDivergedError(
                f"actor loss became {aloss} at update {self.updates}; "
                f"batch: {_batch_summary(bi_pi)}"
            )
        self.opt_actor.step(self.actor.param_list(), flatten_grads(agrads))

        soft_update(self.actor_target, self.actor, agent.polyak)
        soft_update(self.critic_target, self.critic, agent.polyak)
        self.updates += 1
        return closs, aloss

    # -- episodes -----------------------------------------------------------

    def run_episode(self, episode_index: int) -> EpisodeLog:
        cfg = self.cfg
        env = sample_env("train", self.env_rng, cfg.env)
        state = initial_state(env, cfg.dmp)
        obs = assemble_observation(state, env)
        max_steps = cfg.dmp.max_steps()
        total = 0.0
        collided = collision_check(state.x, env)
        steps = 0
        for k in range(max_steps):
            action = self.actor.forward(obs) + self.noise_rng.normal(
                0.0, cfg.agent.sigma, size=ACTION_DIM
            )
            nxt, a, reward, done = step_with_reward(
                state, env, action, cfg.dmp, cfg.cost, force_done=(k + 1 == max_steps)
            )
            obs2 = assemble_observation(nxt, env)
            self.inter_buf.push(obs, a, reward, obs2, done)
            self.total_steps += 1
            total += reward
            collided = collided or collision_check(nxt.x, env)
            steps += 1
            if self._can_update():
                self.update_round()
            state, obs = nxt, obs2
            if done:
                break
        log = EpisodeLog(
            episode=episode_index,
            arpe=total,
            larpe=l_arpe(total),
            steps=steps,
            collisions=int(collided),
            final_err=float(np.linalg.norm(state.x - env.x_goal)),
        )
        self.episodes.append(log)
        return log

    def run(self, progress=None) -> list[EpisodeLog]:
        for i in range(1, self.cfg.agent.episodes + 1):
            log = self.run_episode(i)
            if progress is not None:
                progress(log)
        return self.episodes

    # -- persistence ----------------------------------------------------------

    def save(self, ckpt_path, log_path=None) -> None:
        from .config import config_to_text  # local import to avoid cycle noise

        rng_states = {
            "env": self.env_rng.bit_generator.state,
            "noise": self.noise_rng.bit_generator.state,
            "batch": self.batch_rng.bit_generator.state,
            "prefill": self.prefill_rng.bit_generator.state,
        }
        save_checkpoint(
            ckpt_path,
            nets={
                "actor": self.actor,
                "critic": self.critic,
                "actor_target": self.actor_target,
                "critic_target": self.critic_target,
            },
            optimizers={"actor": self.opt_actor, "critic": self.opt_critic},
            rng_states=rng_states,
            extra={
                "seed": self.seed,
                "total_steps": self.total_steps,
                "updates": self.updates,
                "episodes": len(self.episodes),
                "config": config_to_text(self.cfg),
            },
        )
        if log_path is not None:
            write_training_log(log_path, self.episodes)


def train(
    cfg: RunConfig,
    demo_data,
    seed: int,
    ckpt_path=None,
    log_path=None,
    progress=None,
) -> Trainer:
    """Run a full training and optionally persist the artifacts."""
    trainer = Trainer(cfg, demo_data, seed)
    trainer.run(progress=progress)
    if ckpt_path is not None:
        trainer.save(ckpt_path, log_path)
    return trainer
