"""Semi-MDP meta-learner: a DQN whose actions run a frozen behaviour for up to N steps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..nn import NetworkParams, NetworkSpec, load_checkpoint, q_network_spec, save_checkpoint
from ..nn.checkpoint import decode_text, encode_text
from ..rl.dqn import (
    ConfigError,
    NetworkBackend,
    Outcome,
    TrainConfig,
    double_dqn_targets,
    greedy_action,
    run_dqn,
)
from ..rl.replay import Batch
from ..rl.stats import EpisodeStats
from ..sim.maze import Event
from .options import OptionPolicy, Scripted, load_option

DEFAULT_HORIZON = 10


@dataclass(frozen=True)
class MetaConfig(TrainConfig):
    option_horizon: int = DEFAULT_HORIZON
    options: tuple = ()

    def __post_init__(self):
        super().__post_init__()
        if self.option_horizon < 1:
            raise ConfigError("option_horizon must be >= 1")
        if len(self.options) < 2:
            raise ConfigError("a meta-policy needs at least two options")


@dataclass(frozen=True)
class MetaTransition:
    obs: np.ndarray
    option: int
    cum_reward: float  # sum_j gamma^j r_j over the executed steps
    next_obs: np.ndarray
    steps_used: int
    terminal: bool
    event: Event = Event.NONE
    rewards: tuple[float, ...] = ()


def execute_option(env, obs, option: OptionPolicy, index: int, horizon: int, gamma: float,
                   on_step: Callable | None = None) -> MetaTransition:
    """Run `option` from the env's current state for up to `horizon` steps.

    `obs` must be the env's current observation. Stops early on any terminal event.
    """
    if env.done:
        raise RuntimeError("execute_option needs a live episode")
    start = obs
    ret, disc = 0.0, 1.0
    rewards: list[float] = []
    event = Event.NONE
    for _ in range(horizon):
        obs, r, done, event = env.step(option(obs))
        rewards.append(r)
        ret += disc * r
        disc *= gamma
        if on_step is not None:
            on_step(env, index)
        if done:
            break
    return MetaTransition(start, index, ret, obs, len(rewards), event is not Event.NONE, event, tuple(rewards))


def meta_td_targets(batch: Batch, online, target, gamma: float, backend=None) -> np.ndarray:
    """R + gamma^k Q_target(s', argmax Q_online(s')) with k the steps the option actually used."""
    backend = backend or NetworkBackend(online.spec)
    return double_dqn_targets(
        batch.rewards, batch.terminals, batch.steps,
        backend.q_values(online, batch.next_obs), backend.q_values(target, batch.next_obs), gamma,
    )


class OptionProcess:
    """Decision process whose actions are option indices."""

    def __init__(self, env, options: Sequence[OptionPolicy], horizon: int, gamma: float):
        self.env = env
        self.options = list(options)
        self.n_actions = len(self.options)
        self.horizon = horizon
        self.gamma = gamma
        self.obs = None

    def reset(self, seed: int):
        self.obs = self.env.reset(seed)
        return self.obs

    def step(self, index: int) -> Outcome:
        tr = execute_option(self.env, self.obs, self.options[index], index, self.horizon, self.gamma)
        self.obs = tr.next_obs
        return Outcome(tr.next_obs, tr.cum_reward, tr.steps_used, tr.event, tr.rewards)


def meta_spec(env, n_options: int) -> NetworkSpec:
    return q_network_spec(n_options, dueling=False, input_shape=env.obs_shape)


def train_meta(env, config: MetaConfig, spec: NetworkSpec | None = None):
    """Train the option-selecting DQN with frozen options.

    `config.max_env_steps` counts option decisions, as does target syncing.
    Returns (params, adam_state, log).
    """
    spec = spec or meta_spec(env, len(config.options))
    process = OptionProcess(env, config.options, config.option_horizon, config.gamma)
    return run_dqn(process, config, NetworkBackend(spec), env.obs_shape)


# -- selectors and rollouts --------------------------------------------------------


@dataclass(frozen=True)
class MetaGreedy:
    params: NetworkParams

    def __call__(self, env, obs) -> int:
        return greedy_action(self.params, obs)


@dataclass(frozen=True)
class HandcraftedSelector:
    """Baseline that maps the ground-truth theme of the agent's cell to an option."""
    rule: dict

    def __call__(self, env, obs) -> int:
        theme = env.theme()
        if theme not in self.rule:
            raise ConfigError(f"no option assigned to theme {theme}")
        return self.rule[theme]


def handcrafted_selector(rule: dict, themes=(1, 2)) -> HandcraftedSelector:
    missing = [t for t in themes if t not in rule]
    if missing:
        raise ConfigError(f"rule does not cover theme(s) {missing}")
    return HandcraftedSelector(dict(rule))


def run_hierarchical(env, selector, options: Sequence[OptionPolicy], horizon: int,
                     n_episodes: int, seed: int, gamma: float = 0.99) -> list[EpisodeStats]:
    """Greedy hierarchical rollouts. `selector` is meta params or a callable (env, obs) -> index."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if isinstance(selector, NetworkParams):
        selector = MetaGreedy(selector)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_episodes):
        obs = env.reset(int(rng.integers(2**31)))
        traj: list = []
        rewards: list[float] = []
        decisions: list[int] = []
        event = Event.NONE

        def note(e, index):
            traj.append((*e.position(), index))

        while event is Event.NONE:
            decisions.append(len(traj))
            index = int(selector(env, obs))
            tr = execute_option(env, obs, options[index], index, horizon, gamma, note)
            obs, event = tr.next_obs, tr.event
            rewards.extend(tr.rewards)
        out.append(EpisodeStats(float(sum(rewards)), len(traj), event is Event.GOAL_REACHED,
                                traj, event, rewards, decisions))
    return out


# -- checkpoints -------------------------------------------------------------------


def save_meta_checkpoint(params, state, path, options: Sequence[OptionPolicy], horizon: int) -> None:
    idents = "\n".join(o.ident for o in options)
    extra = {"meta.options": encode_text(idents), "meta.N": np.array([horizon], dtype=np.float32)}
    save_checkpoint(params, state, path, extra)


def load_meta_checkpoint(path, resolve: bool = True):
    """Returns (params, adam_state, options, N). Options are loaded unless resolve is False."""
    params, state, extra = load_checkpoint(path, with_extra=True)
    if "meta.options" not in extra or "meta.N" not in extra:
        raise ConfigError(f"{path} is not a meta checkpoint")
    idents = decode_text(extra["meta.options"]).split("\n")
    options = [load_option(i) for i in idents] if resolve else idents
    return params, state, options, int(extra["meta.N"][0])


__all__ = [
    "DEFAULT_HORIZON", "HandcraftedSelector", "MetaConfig", "MetaGreedy", "MetaTransition",
    "OptionProcess", "Scripted", "execute_option", "handcrafted_selector", "load_meta_checkpoint",
    "meta_spec", "meta_td_targets", "run_hierarchical", "save_meta_checkpoint", "train_meta",
]
