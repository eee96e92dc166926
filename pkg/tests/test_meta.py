from __future__ import annotations

import math

import numpy as np
import pytest

from metanav.meta import (
    MetaConfig,
    MetaGreedy,
    Scripted,
    execute_option,
    handcrafted_selector,
    load_meta_checkpoint,
    meta_td_targets,
    run_hierarchical,
    save_meta_checkpoint,
    train_meta,
)
from metanav.meta.options import Learned, UnknownOptionError, load_option
from metanav.nn import NetworkParams, NetworkSpec, init_network, save_checkpoint
from metanav.nn.network import Dense, LinearHead
from metanav.rl import ConfigError, TrainConfig, double_dqn_targets, train_low_level
from metanav.rl.dqn import low_level_spec
from metanav.rl.replay import Batch
from metanav.sim import maze
from metanav.sim.env import MazeEnv, load_maze_env
from metanav.sim.maze import Event

from mapgen import random_map_text
from oracles import best_option_sequence

FWD, LEFT, RIGHT = Scripted("AlwaysForward"), Scripted("SpinLeft"), Scripted("SpinRight")


class Fixed:
    """Env stub replaying a fixed reward list; terminal on the last reward if `end` is given."""

    def __init__(self, rewards, end=None):
        self.rewards, self.end, self.i, self.done = list(rewards), end, 0, False

    def step(self, action):
        r = self.rewards[self.i]
        self.i += 1
        last = self.end is not None and self.i == len(self.rewards)
        self.done = last
        return np.array([self.i]), r, last, self.end if last else Event.NONE


def test_execute_option_examples():
    tr = execute_option(Fixed([1, 1, 1]), np.array([0]), FWD, 0, 3, 0.9)
    assert tr.cum_reward == pytest.approx(2.71, abs=1e-12) and tr.steps_used == 3 and not tr.terminal
    tr = execute_option(Fixed([5, -200], Event.COLLISION), np.array([0]), FWD, 0, 5, 0.99)
    assert tr.cum_reward == pytest.approx(-193.0, abs=1e-12)
    assert tr.steps_used == 2 and tr.terminal and tr.event is Event.COLLISION


def test_execute_option_horizon_one_is_a_primitive_step():
    env = load_maze_env("elem1.map")
    obs = env.reset(0)
    snap = env.snapshot()
    tr = execute_option(env, obs, LEFT, 1, 1, 0.99)
    env.restore(snap)
    obs2, r, _, _ = env.step(1)
    assert tr.steps_used == 1 and tr.cum_reward == r == 1.0
    assert tr.next_obs.tobytes() == obs2.tobytes()


def test_execute_option_needs_live_episode():
    env = MazeEnv(maze.load_map("#####\n#S.G#\n#####\n"))
    with pytest.raises(RuntimeError):
        execute_option(env, None, FWD, 0, 3, 0.9)


def _det_option(obs):
    """Deterministic but state-dependent action choice."""
    return int(obs.sum()) % 3


@pytest.mark.parametrize("seed", range(40))
def test_option_accounting_on_random_maps(seed):
    rng = np.random.default_rng(seed)
    env = MazeEnv(maze.load_map(random_map_text(rng)), max_steps=int(rng.integers(5, 40)))
    obs = env.reset(seed)
    gamma = float(rng.uniform(0.5, 1.0 - 1e-9))
    while not env.done:
        n = int(rng.integers(1, 12))
        snap = env.snapshot()
        tr = execute_option(env, obs, _det_option, 0, n, gamma)
        assert tr.steps_used == len(tr.rewards) <= n
        assert tr.steps_used == n or tr.terminal
        assert tr.cum_reward == pytest.approx(sum(gamma ** j * r for j, r in enumerate(tr.rewards)), rel=1e-12)
        assert set(tr.rewards) <= {5.0, 1.0, -200.0}
        assert -200.0 not in tr.rewards[:-1]
        env.restore(snap)
        again = execute_option(env, obs, _det_option, 0, n, gamma)
        assert (again.cum_reward, again.steps_used) == (tr.cum_reward, tr.steps_used)
        assert again.next_obs.tobytes() == tr.next_obs.tobytes()
        obs = tr.next_obs


def _table_net(rows):
    """A two-input linear net whose Q for one-hot input i is rows[i]."""
    spec = NetworkSpec((2,), (LinearHead(len(rows[0])),))
    return NetworkParams(spec, {"layer0.weight": np.array(rows, dtype=np.float32),
                                "layer0.bias": np.zeros(len(rows[0]), dtype=np.float32)})


def test_meta_td_target_examples():
    online = _table_net([[0, 4], [0, 0]])
    target = _table_net([[7, 1], [0, 0]])
    batch = Batch(np.arange(2), np.zeros((2, 2)), np.zeros(2, int), np.array([2.71, -193.0]),
                  np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([False, True]), np.array([3, 2]))
    y = meta_td_targets(batch, online, target, 0.9)
    assert y == pytest.approx([3.439, -193.0], abs=1e-6)


def test_meta_targets_with_one_step_match_primitive_targets():
    rng = np.random.default_rng(0)
    qo, qt, r = rng.normal(size=(8, 3)), rng.normal(size=(8, 3)), rng.normal(size=8)
    term = rng.random(8) < 0.3
    a = double_dqn_targets(r, term, np.ones(8), qo, qt, 0.97)
    b = r + np.where(term, 0.0, 0.97 * qt[np.arange(8), qo.argmax(1)])
    assert np.allclose(a, b, atol=1e-12)


def test_meta_config_needs_two_options_and_positive_horizon():
    with pytest.raises(ConfigError):
        MetaConfig(options=(FWD,))
    with pytest.raises(ConfigError):
        MetaConfig(options=(FWD, LEFT), option_horizon=0)
    assert MetaConfig(options=(FWD, LEFT)).option_horizon == 10


def test_timescale_consistency_with_primitive_options():
    env = load_maze_env("elem1.map", max_steps=80)
    base = dict(max_env_steps=400, burn_in=64, target_sync_every=100, seed=4)
    low = train_low_level(env, TrainConfig(**base))
    meta = train_meta(env, MetaConfig(**base, option_horizon=1, options=(FWD, LEFT, RIGHT)),
                      spec=low_level_spec(env))
    assert low[0].same_as(meta[0]) and low[1].same_as(meta[1])
    assert low[2].losses == meta[2].losses
    assert [e.ret for e in low[2].episodes] == [e.ret for e in meta[2].episodes]


STRAIGHT = "##############\n#S..........G#\n##############\n"


def _seed_facing(world, heading):
    return next(s for s in range(1000) if maze.reset(world, s)[0].heading == heading)


def test_meta_prefers_forward_on_a_straight_corridor():
    w = maze.load_map(STRAIGHT)
    env = MazeEnv(w, max_steps=200)
    options = (FWD, LEFT)
    cfg = MetaConfig(max_env_steps=3000, burn_in=200, target_sync_every=100, epsilon_decay_steps=1500,
                     lr=0.001, gamma=0.9, seed=0, options=options, option_horizon=10)
    params, _, log = train_meta(env, cfg)
    for heading in (0.0, math.pi):
        seed = _seed_facing(w, heading)
        _, best = best_option_sequence(lambda: MazeEnv(w, max_steps=200), seed, options, 10, 0.9, 5)
        obs = env.reset(seed)
        assert MetaGreedy(params)(env, obs) == best[0]
        assert best[0] == (0 if heading == 0.0 else 1)


def _constant_meta(spec_shape, q):
    spec = NetworkSpec(spec_shape, (Dense(1), LinearHead(len(q))))
    t = {k: np.zeros(v, dtype=np.float32) for k, v in spec.param_shapes().items()}
    t["layer1.bias"] = np.array(q, dtype=np.float32)
    return NetworkParams(spec, t)


def test_constant_meta_runs_option_zero_everywhere_with_boundary_law():
    env = load_maze_env("compound.map", max_steps=137)
    meta = _constant_meta(env.obs_shape, [1.0, 0.0])
    stats = run_hierarchical(env, meta, [LEFT, RIGHT], 10, 3, seed=5)
    for s in stats:
        assert s.options == [0] * s.steps and len(s.trajectory) == s.steps
        gaps = np.diff(s.decision_steps + [s.steps])
        assert s.decision_steps[0] == 0 and all(gaps[:-1] == 10) and 1 <= gaps[-1] <= 10
        assert s.ret == sum(s.rewards) == float(s.steps)
    again = run_hierarchical(env, meta, [LEFT, RIGHT], 10, 3, seed=5)
    assert [s.trajectory for s in again] == [s.trajectory for s in stats]


def test_undiscounted_episode_sum_is_reported_return():
    env = load_maze_env("elem1.map", max_steps=300)
    meta = init_network(_constant_meta(env.obs_shape, [0.0, 0.0]).spec, 3)
    for s in run_hierarchical(env, meta, [FWD, LEFT, RIGHT][:2], 7, 4, seed=1):
        assert s.ret == sum(s.rewards) and len(s.rewards) == s.steps
        assert s.success == (s.final_event is Event.GOAL_REACHED)


def test_handcrafted_selector_follows_floor_theme():
    env = load_maze_env("compound.map")
    sel = handcrafted_selector({1: 0, 2: 1})
    env.reset(0)
    assert env.theme() == 1 and sel(env, None) == 0
    w = env.world
    r, c = next((r, c) for r, c in w.free_cells() if w.theme[r, c] == 2)
    env.pose = maze.AgentPose(c + 0.5, r + 0.5, 0.0)
    assert sel(env, None) == 1
    with pytest.raises(ConfigError):
        handcrafted_selector({1: 0})


def test_option_loading(tmp_path):
    assert load_option("SpinLeft") == LEFT
    with pytest.raises(UnknownOptionError):
        load_option("Hover")
    with pytest.raises(UnknownOptionError):
        Scripted("Hover")
    env = load_maze_env("elem1.map")
    params = init_network(low_level_spec(env), 0)
    save_checkpoint(params, None, tmp_path / "pi.ckpt")
    opt = load_option(str(tmp_path / "pi.ckpt"))
    assert isinstance(opt, Learned) and opt.params.same_as(params)
    obs = env.reset(0)
    assert opt(obs) in (0, 1, 2)


def test_meta_checkpoint_round_trip(tmp_path):
    env = load_maze_env("elem1.map")
    params = init_network(low_level_spec(env), 1)
    save_checkpoint(params, None, tmp_path / "pi1.ckpt")
    pi1 = load_option(str(tmp_path / "pi1.ckpt"))
    meta = init_network(_constant_meta(env.obs_shape, [0, 0, 0]).spec, 2)
    save_meta_checkpoint(meta, None, tmp_path / "meta.ckpt", [pi1, FWD, LEFT], 7)
    got, state, options, n = load_meta_checkpoint(tmp_path / "meta.ckpt")
    assert got.same_as(meta) and state is None and n == 7
    assert options[1:] == [FWD, LEFT] and options[0].params.same_as(params)
    _, _, idents, _ = load_meta_checkpoint(tmp_path / "meta.ckpt", resolve=False)
    assert idents == [str(tmp_path / "pi1.ckpt"), "AlwaysForward", "SpinLeft"]
    save_checkpoint(params, None, tmp_path / "plain.ckpt")
    with pytest.raises(ConfigError):
        load_meta_checkpoint(tmp_path / "plain.ckpt")
