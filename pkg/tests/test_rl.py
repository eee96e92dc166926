from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metanav.nn import init_network, q_network_spec
from metanav.rl import (
    ConfigError,
    GreedyPolicy,
    NetworkBackend,
    Outcome,
    ReplayBuffer,
    TabularBackend,
    TrainConfig,
    TrainingLog,
    Transition,
    UnderfullBufferError,
    double_dqn_targets,
    epsilon_at,
    evaluate,
    greedy_action,
    run_dqn,
    td_targets,
    train_low_level,
    train_step,
)
from metanav.sim import maze
from metanav.sim.env import MazeEnv
from metanav.sim.maze import Event

from oracles import bfs_steps_to_goal, chain_value_iteration


def tr(i, reward=1.0, terminal=False):
    return Transition(np.array([i]), i % 3, reward, np.array([i + 1]), terminal)


# -- replay --


def test_fifo_eviction_and_counts():
    buf = ReplayBuffer(3, (1,), np.int64)
    buf.push(tr(1))
    assert len(buf) == 1
    for i in (2, 3, 4):
        buf.push(tr(i))
    assert [int(buf[k].obs[0]) for k in range(len(buf))] == [2, 3, 4]
    assert buf.insert_count == 4 and len(buf) == 3


@settings(max_examples=60)
@given(st.integers(1, 20), st.integers(0, 60))
def test_buffer_holds_latest_in_order(capacity, n):
    buf = ReplayBuffer(capacity, (1,), np.int64)
    for i in range(n):
        buf.push(tr(i))
    assert len(buf) == min(n, capacity)
    assert [int(buf[k].obs[0]) for k in range(len(buf))] == list(range(max(0, n - capacity), n))


def test_sample_errors_and_determinism():
    buf = ReplayBuffer(10, (1,), np.int64)
    buf.push(tr(0))
    with pytest.raises(UnderfullBufferError):
        buf.sample(4, np.random.default_rng(0))
    for i in range(1, 10):
        buf.push(tr(i))
    a = buf.sample(8, np.random.default_rng(5))
    b = buf.sample(8, np.random.default_rng(5))
    assert np.array_equal(a.indices, b.indices)


def test_sample_is_uniform():
    n = 1000
    buf = ReplayBuffer(n, (1,), np.int64)
    for i in range(n):
        buf.push(tr(i))
    rng = np.random.default_rng(0)
    counts = np.zeros(n)
    for _ in range(10_000):
        np.add.at(counts, buf.sample(32, rng).indices, 1)
    total = 10_000 * 32
    p = 1 / n
    sigma = math.sqrt(total * p * (1 - p))
    assert np.all(np.abs(counts - total * p) < 5 * sigma)


# -- config and schedule --


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(epsilon_start=0.1, epsilon_end=0.2)
    with pytest.raises(ConfigError):
        TrainConfig(burn_in=10, replay_capacity=5)


def test_epsilon_schedule():
    cfg = TrainConfig(epsilon_decay_steps=1000)
    assert epsilon_at(cfg, 0) == 1.0
    assert math.isclose(epsilon_at(cfg, 500), 0.525)
    assert epsilon_at(cfg, 2000) == 0.05


# -- targets --


def test_double_dqn_examples():
    assert double_dqn_targets([-200.0], [True], [1], [[0, 0]], [[9, 9]], 0.99)[0] == -200.0
    y = double_dqn_targets([5.0], [False], [1], np.array([[1.0, 3.0]]), np.array([[10.0, 2.0]]), 0.5)
    assert math.isclose(y[0], 6.0, abs_tol=1e-6)


@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.floats(-10, 10), st.floats(0.01, 0.99))
def test_same_networks_reduce_to_max(q, r, gamma):
    q = np.array([q])
    y = double_dqn_targets([r], [False], [1], q, q, gamma)
    assert math.isclose(y[0], r + gamma * q.max(), abs_tol=1e-9)


def test_td_targets_use_network_values():
    spec = q_network_spec(3, dueling=True)
    online, target = init_network(spec, 0), init_network(spec, 1)
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(8, (24, 32, 3))
    for i in range(8):
        img = rng.integers(0, 256, (24, 32, 3), dtype=np.uint8)
        buf.push(Transition(img, i % 3, 5.0, img[::-1].copy(), i == 3))
    batch = buf.sample(8, rng)
    y = td_targets(batch, online, target, 0.9)
    b = NetworkBackend(spec)
    qo, qt = b.q_values(online, batch.next_obs), b.q_values(target, batch.next_obs)
    for k in range(8):
        expect = 5.0 if batch.terminals[k] else 5.0 + 0.9 * qt[k, np.argmax(qo[k])]
        assert math.isclose(y[k], expect, rel_tol=1e-6, abs_tol=1e-6)


# -- train_step --


def _buffer(n=64, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(n, (24, 32, 3))
    for i in range(n):
        buf.push(Transition(rng.integers(0, 256, (24, 32, 3), dtype=np.uint8), int(rng.integers(3)),
                            float(rng.choice([5.0, 1.0, -200.0])),
                            rng.integers(0, 256, (24, 32, 3), dtype=np.uint8), bool(rng.random() < 0.2)))
    return buf


def test_train_step_deterministic_and_target_untouched():
    spec = q_network_spec(3, dueling=True)
    b = NetworkBackend(spec)
    online = init_network(spec, 0)
    target = init_network(spec, 0)
    cfg = TrainConfig()
    buf = _buffer()
    o1, _, l1 = train_step(online, target, b.init_optimizer(online, cfg), buf, cfg, np.random.default_rng(3))
    o2, _, l2 = train_step(online, target, b.init_optimizer(online, cfg), buf, cfg, np.random.default_rng(3))
    assert l1 == l2 and l1 >= 0 and o1.same_as(o2)
    assert target.same_as(init_network(spec, 0))
    assert not o1.same_as(online)


def test_zero_error_batch_leaves_params_unchanged():
    table = np.array([[1.0, 2.0]])
    b = TabularBackend(1, 2)
    new, _, loss = b.update(table, None, np.array([0, 0]), np.array([0, 1]), np.array([1.0, 2.0]), 1.0)
    assert loss == 0.0 and np.array_equal(new, table)
    spec = q_network_spec(2, dueling=False, input_shape=(24, 32, 3))
    p = init_network(spec, 0)
    nb = NetworkBackend(spec)
    obs = np.zeros((2, 24, 32, 3), dtype=np.uint8)
    q = nb.q_values(p, obs)
    acts = np.array([0, 1])
    new, _, loss = nb.update(p, nb.init_optimizer(p, TrainConfig()), obs, acts, q[np.arange(2), acts], 1.0)
    assert loss == 0.0 and new.same_as(p)


# -- greedy policy --


def test_greedy_ties_pick_lowest_index():
    spec = q_network_spec(3, dueling=True)
    p = init_network(spec, 0)
    zero = p.replace({k: np.zeros_like(v) for k, v in p.tensors.items()})
    assert greedy_action(zero, np.zeros((24, 32, 3), dtype=np.uint8)) == 0


# -- loops --


class Chain:
    """Five-state chain for the tabular oracle; observation is the state index."""
    n_actions = 2

    def __init__(self, n=5, horizon=20):
        self.n, self.horizon = n, horizon

    def reset(self, seed):
        self.s = int(np.random.default_rng(seed).integers(self.n))
        self.t = 0
        return np.array(self.s)

    def step(self, a):
        self.t += 1
        if a == 1 and self.s == self.n - 1:
            return Outcome(np.array(self.s), 10.0, 1, Event.GOAL_REACHED, (10.0,))
        r = 1.0 if (a == 0 and self.s == 0) else 0.0
        self.s = max(0, self.s - 1) if a == 0 else self.s + 1
        event = Event.TIME_LIMIT if self.t >= self.horizon else Event.NONE
        return Outcome(np.array(self.s), r, 1, event, (r,))


def test_tabular_loop_matches_value_iteration():
    cfg = TrainConfig(gamma=0.9, replay_capacity=2000, burn_in=100, target_sync_every=50, batch_size=32,
                      epsilon_decay_steps=1, epsilon_end=1.0, epsilon_start=1.0, max_env_steps=20_000,
                      grad_clip=100.0, seed=0)
    table, _, _ = run_dqn(Chain(), cfg, TabularBackend(5, 2, lr=0.5), (), np.int64)
    assert np.max(np.abs(table - chain_value_iteration())) < 1e-2


def test_target_syncs_copy_online_exactly():
    events = []
    cfg = TrainConfig(gamma=0.9, replay_capacity=500, burn_in=50, target_sync_every=40, batch_size=8,
                      max_env_steps=200, seed=1)
    run_dqn(Chain(), cfg, TabularBackend(5, 2), (), np.int64,
            on_sync=lambda t, online, target: events.append((t, np.array_equal(online, target))))
    assert [t for t, _ in events] == [40, 80, 120, 160, 200]
    assert all(same for _, same in events)


CORRIDOR2 = "####\n#SG#\n####\n"


def _east_facing_seed(world, start=0):
    """First evaluate() seed whose opening episode starts facing east."""
    return next(s for s in range(start, start + 500)
                if maze.reset(world, int(np.random.default_rng(s).integers(2**31)))[0].heading == 0)


def test_two_cell_corridor_learns_shortest_path():
    # Facing the goal, three forwards (8.75 at gamma 0.5) beat spinning (2.0) and every detour,
    # so the step-minimal route is also the return-optimal one. The other three headings all
    # face a wall at 0.5 and render identically, so only the east-facing start is checked.
    w = maze.load_map(CORRIDOR2)
    env = MazeEnv(w, max_steps=50)
    cfg = TrainConfig(gamma=0.5, max_env_steps=5000, burn_in=500, target_sync_every=100,
                      epsilon_decay_steps=2500, lr=0.0005, batch_size=64, seed=0)
    params, _, _ = train_low_level(env, cfg)
    seed = _east_facing_seed(w)
    s = evaluate(GreedyPolicy(params), env, 1, seed)[0]
    start = maze.reset(w, int(np.random.default_rng(seed).integers(2**31)))[0]
    assert s.success and s.steps == bfs_steps_to_goal(w, start) == 3


def test_empty_budget_returns_untrained_network():
    env = MazeEnv(maze.load_map(CORRIDOR2))
    cfg = TrainConfig(max_env_steps=0, seed=3)
    params, _, log = train_low_level(env, cfg)
    assert log.episodes == [] and log.losses == []
    assert params.same_as(NetworkBackend(params.spec).init(int(np.random.SeedSequence(3).spawn(3)[0].generate_state(1)[0])))


def test_training_is_deterministic_and_log_consistent(tmp_path):
    w = maze.load_map("#######\n#S...G#\n#######\n")
    cfg = TrainConfig(max_env_steps=400, burn_in=64, target_sync_every=100, seed=9)
    a = train_low_level(MazeEnv(w, 60), cfg)
    b = train_low_level(MazeEnv(w, 60), cfg)
    assert a[0].same_as(b[0]) and a[1].same_as(b[1])
    a[2].to_csv(tmp_path / "a.csv")
    b[2].to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    for e in a[2].episodes:
        assert e.ret == sum(e.rewards) and e.steps == len(e.rewards)
    rows = TrainingLog.read_csv(tmp_path / "a.csv")
    assert list(rows[0]) == ["episode", "steps", "return", "mean_loss", "epsilon_end_of_episode"]


def test_epsilon_one_actions_are_uniform():
    actions = []

    class Recorder(Chain):
        def step(self, a):
            actions.append(a)
            return super().step(a)

    cfg = TrainConfig(epsilon_start=1.0, epsilon_end=1.0, max_env_steps=10_000, burn_in=10_000,
                      replay_capacity=10_000, seed=0)
    run_dqn(Recorder(), cfg, TabularBackend(5, 2), (), np.int64)
    n = len(actions)
    sigma = math.sqrt(n * 0.25)
    assert abs(actions.count(0) - n / 2) < 5 * sigma


# -- evaluate --


def test_evaluate_scripted_policies():
    w = maze.load_map("########\n#S....G#\n########\n")
    env = MazeEnv(w, max_steps=100)
    # the eval seed below starts the agent facing east
    east = _east_facing_seed(w)
    stats = evaluate(lambda obs: 0, env, 1, east)[0]
    assert stats.success and stats.ret == 5.0 * stats.steps
    spin = evaluate(lambda obs: 1, env, 2, 0)
    assert all(s.final_event is Event.TIME_LIMIT and s.ret == 100.0 for s in spin)
    a = evaluate(lambda obs: 1, env, 10, 4)
    b = evaluate(lambda obs: 1, env, 10, 4)
    assert [s.ret for s in a] == [s.ret for s in b]
    with pytest.raises(ValueError):
        evaluate(lambda obs: 0, env, 0, 0)
