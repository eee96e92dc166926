"""Double DQN at the primitive-action level, written over a decision-process adapter so the
option-level learner in `metanav.meta` reuses the very same loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from ..nn import (
    AdamState,
    NetworkParams,
    NetworkSpec,
    adam_step,
    backward,
    clip_gradients,
    forward,
    init_network,
    q_network_spec,
)
from ..sim.maze import Event, to_observation
from .replay import Batch, ReplayBuffer, Transition
from .stats import EpisodeStats

BOOTSTRAP_STOP = (Event.COLLISION, Event.GOAL_REACHED)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    lr: float = 0.00025
    replay_capacity: int = 50_000
    burn_in: int = 2_000
    target_sync_every: int = 1_000
    batch_size: int = 32
    grad_clip: float = 1.0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 50_000
    max_env_steps: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.epsilon_end > self.epsilon_start:
            raise ConfigError("epsilon_end must not exceed epsilon_start")
        if self.burn_in > self.replay_capacity:
            raise ConfigError("burn_in must not exceed replay_capacity")
        if self.batch_size <= 0 or self.target_sync_every <= 0 or self.grad_clip <= 0:
            raise ConfigError("batch_size, target_sync_every and grad_clip must be positive")
        if self.max_env_steps < 0 or self.epsilon_decay_steps < 0:
            raise ConfigError("step counts must be non-negative")


def epsilon_at(config: TrainConfig, t: int) -> float:
    if t < 0:
        raise ValueError("t must be non-negative")
    if config.epsilon_decay_steps == 0 or t >= config.epsilon_decay_steps:
        return config.epsilon_end
    frac = t / config.epsilon_decay_steps
    return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)


# -- Q-function backends -------------------------------------------------------


class NetworkBackend:
    """Q-values from a NetworkParams; updates via backprop, norm clipping and Adam."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec

    def init(self, seed: int) -> NetworkParams:
        return init_network(self.spec, seed)

    def init_optimizer(self, params: NetworkParams, config: TrainConfig) -> AdamState:
        return AdamState.create(params, lr=config.lr)

    def q_values(self, params: NetworkParams, obs) -> np.ndarray:
        x = to_observation(obs) if obs.dtype == np.uint8 else obs
        return forward(params, x, record=False)[0]

    def update(self, params, opt, obs, actions, targets, grad_clip):
        x = to_observation(obs) if obs.dtype == np.uint8 else obs
        q, tape = forward(params, x)
        rows = np.arange(len(actions))
        diff = q[rows, actions] - targets.astype(q.dtype)
        loss = float(np.mean(np.square(diff, dtype=np.float64)))
        dq = np.zeros_like(q)
        dq[rows, actions] = (2.0 / len(actions)) * diff
        grads = clip_gradients(backward(tape, dq), grad_clip)
        params, opt = adam_step(params, grads, opt)
        return params, opt, loss

    def copy(self, params):
        return params  # NetworkParams are immutable


class TabularBackend:
    """Lookup table Q[state, action] trained by SGD on the same squared TD loss."""

    def __init__(self, n_states: int, n_actions: int, lr: float = 0.5):
        self.n_states, self.n_actions, self.lr = n_states, n_actions, lr

    def init(self, seed: int) -> np.ndarray:
        return np.zeros((self.n_states, self.n_actions))

    def init_optimizer(self, params, config):
        return None

    def q_values(self, table, obs) -> np.ndarray:
        return table[np.asarray(obs, dtype=np.int64)]

    def update(self, table, opt, obs, actions, targets, grad_clip):
        s = np.asarray(obs, dtype=np.int64)
        diff = table[s, actions] - targets
        loss = float(np.mean(diff ** 2))
        grad = np.zeros_like(table)
        np.add.at(grad, (s, actions), (2.0 / len(actions)) * diff)
        norm = float(np.sqrt(np.sum(grad ** 2)))
        if norm > grad_clip:
            grad *= grad_clip / norm
        return table - self.lr * grad, opt, loss

    def copy(self, table):
        return table.copy()


def backend_for(params):
    if isinstance(params, NetworkParams):
        return NetworkBackend(params.spec)
    raise TypeError("pass an explicit backend for non-network parameters")


# -- targets and updates ---------------------------------------------------------


def double_dqn_targets(rewards, terminals, steps, q_online_next, q_target_next, gamma) -> np.ndarray:
    """r + gamma^k * Q_target(s', argmax_a Q_online(s', a)), or r alone at terminals."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("empty batch")
    best = np.argmax(q_online_next, axis=1)
    boot = np.asarray(q_target_next, dtype=np.float64)[np.arange(len(best)), best]
    discount = np.power(gamma, np.asarray(steps, dtype=np.float64))
    return np.where(np.asarray(terminals, dtype=bool), rewards, rewards + discount * boot)


def td_targets(batch: Batch, online, target, gamma: float, backend=None) -> np.ndarray:
    backend = backend or backend_for(online)
    return double_dqn_targets(
        batch.rewards, batch.terminals, batch.steps,
        backend.q_values(online, batch.next_obs), backend.q_values(target, batch.next_obs), gamma,
    )


def train_step(online, target, opt, buffer: ReplayBuffer, config: TrainConfig, rng, backend=None):
    """One gradient step on a sampled batch; returns (online', opt', loss). Target untouched."""
    backend = backend or backend_for(online)
    batch = buffer.sample(config.batch_size, rng)
    y = td_targets(batch, online, target, config.gamma, backend)
    return backend.update(online, opt, batch.obs, batch.actions, y, config.grad_clip)


@dataclass(frozen=True)
class GreedyPolicy:
    params: NetworkParams

    def __call__(self, obs) -> int:
        return greedy_action(self.params, obs)


def greedy_action(params, obs, backend=None) -> int:
    """Argmax of Q; np.argmax returns the lowest index on exact ties."""
    backend = backend or backend_for(params)
    q = backend.q_values(params, np.asarray(obs)[None])
    return int(np.argmax(q[0]))


# -- training loop ---------------------------------------------------------------


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    ret: float
    mean_loss: float
    epsilon: float
    rewards: list[float] = field(default_factory=list, repr=False)


@dataclass
class TrainingLog:
    episodes: list[EpisodeRecord] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    sync_steps: list[int] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "steps", "return", "mean_loss", "epsilon_end_of_episode"])
            for e in self.episodes:
                w.writerow([e.episode, e.steps, repr(e.ret), repr(e.mean_loss), repr(e.epsilon)])

    @staticmethod
    def read_csv(path) -> list[dict]:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))


@dataclass(frozen=True)
class Outcome:
    """Result of one decision: a primitive step, or a whole option."""
    next_obs: np.ndarray
    reward: float  # discounted within-decision return
    steps: int
    event: Event
    rewards: tuple[float, ...]  # raw primitive rewards

    @property
    def done(self) -> bool:
        return self.event is not Event.NONE


class PrimitiveProcess:
    """Adapts an env so each decision is one primitive action."""

    def __init__(self, env):
        self.env = env
        self.n_actions = env.n_actions

    def reset(self, seed: int):
        return self.env.reset(seed)

    def step(self, action: int) -> Outcome:
        obs, r, _, event = self.env.step(action)
        return Outcome(obs, r, 1, event, (r,))


def _streams(seed: int):
    init_ss, env_ss, act_ss = np.random.SeedSequence(seed).spawn(3)
    return (int(init_ss.generate_state(1)[0]), np.random.default_rng(env_ss), np.random.default_rng(act_ss))


def run_dqn(process, config: TrainConfig, backend, obs_shape, obs_dtype=np.uint8,
            on_sync: Callable | None = None):
    """Shared epsilon-greedy double-DQN loop. Counts t in decisions of `process`.

    Returns (online params, optimizer state, TrainingLog).
    """
    init_seed, env_rng, rng = _streams(config.seed)
    online = backend.init(init_seed)
    target = backend.copy(online)
    opt = backend.init_optimizer(online, config)
    log = TrainingLog()
    if config.max_env_steps == 0:
        return online, opt, log
    buffer = ReplayBuffer(config.replay_capacity, obs_shape, obs_dtype)
    warm = max(config.burn_in, config.batch_size)

    obs = process.reset(int(env_rng.integers(2**31)))
    ep_rewards: list[float] = []
    ep_losses: list[float] = []
    ep_steps = 0
    for t in range(config.max_env_steps):
        eps = epsilon_at(config, t)
        if rng.random() < eps:
            action = int(rng.integers(process.n_actions))
        else:
            action = int(np.argmax(backend.q_values(online, obs[None])[0]))
        out = process.step(action)
        buffer.push(Transition(obs, action, out.reward, out.next_obs, out.event in BOOTSTRAP_STOP, out.steps))
        ep_rewards.extend(out.rewards)
        ep_steps += out.steps
        if len(buffer) >= warm:
            online, opt, loss = train_step(online, target, opt, buffer, config, rng, backend)
            ep_losses.append(loss)
            log.losses.append(loss)
        if (t + 1) % config.target_sync_every == 0:
            target = backend.copy(online)
            log.sync_steps.append(t + 1)
            if on_sync is not None:
                on_sync(t + 1, online, target)
        if out.done:
            log.episodes.append(EpisodeRecord(
                len(log.episodes), ep_steps, float(sum(ep_rewards)),
                float(np.mean(ep_losses)) if ep_losses else math.nan, eps, ep_rewards,
            ))
            ep_rewards, ep_losses, ep_steps = [], [], 0
            obs = process.reset(int(env_rng.integers(2**31)))
        else:
            obs = out.next_obs
    return online, opt, log


def low_level_spec(env) -> NetworkSpec:
    return q_network_spec(env.n_actions, dueling=True)


def train_low_level(env, config: TrainConfig, spec: NetworkSpec | None = None):
    """Train a dueling double DQN on primitive actions. Returns (params, adam_state, log)."""
    spec = spec or low_level_spec(env)
    return run_dqn(PrimitiveProcess(env), config, NetworkBackend(spec), env.obs_shape)


# -- evaluation ------------------------------------------------------------------


def evaluate(policy: Callable, env, n_episodes: int, seed: int) -> list[EpisodeStats]:
    """Greedy rollouts of a policy mapping a uint8 observation to a primitive action."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    stats = []
    for _ in range(n_episodes):
        obs = env.reset(int(rng.integers(2**31)))
        traj, rewards = [], []
        event = Event.NONE
        while event is Event.NONE:
            obs, r, _, event = env.step(policy(obs))
            rewards.append(r)
            traj.append((*env.position(), -1))
        stats.append(EpisodeStats(float(sum(rewards)), len(traj), event is Event.GOAL_REACHED,
                                  traj, event, rewards))
    return stats


def config_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig)]
