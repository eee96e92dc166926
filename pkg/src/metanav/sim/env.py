"""Stateful episode wrappers over the pure maze and terrain functions.

Both envs hand out uint8 images; `to_observation` turns them into network input.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import maze, terrain
from .maze import Event

DATA_DIR = Path(__file__).parent / "data"


@dataclass(frozen=True)
class Snapshot:
    state: object
    dyn: object
    t: int
    done: bool


class MazeEnv:
    n_actions = len(maze.Action)
    obs_shape = (maze.IMG_H, maze.IMG_W, 3)

    def __init__(self, world: maze.WorldSpec, max_steps: int = maze.DEFAULT_MAX_STEPS):
        self.world = world
        self.max_steps = max_steps
        self.pose: maze.AgentPose | None = None
        self.dyn: maze.DynamicState | None = None
        self.t = 0
        self.done = True

    def reset(self, seed: int) -> np.ndarray:
        self.pose, self.dyn = maze.reset(self.world, seed)
        self.t = 0
        self.done = False
        return self.observe()

    def observe(self) -> np.ndarray:
        return maze.render_u8(self.world, self.pose, self.dyn if self.world.tracks else None)

    def step(self, action: int):
        if self.done:
            raise RuntimeError("step() on a finished episode; call reset()")
        dyn = self.dyn if self.world.tracks else None
        res = maze.step(self.world, self.pose, action, self.t, dyn, self.max_steps)
        self.pose = res.next_pose
        reward, event = res.reward, res.event
        if self.world.tracks:
            self.dyn = maze.advance_dynamics(self.world, self.dyn)
            if event is not Event.COLLISION and maze.disc_hits_obstacle(self.world, self.dyn, self.pose.x, self.pose.y):
                # an obstacle ran into the agent
                reward, event = maze.REWARD_COLLISION, Event.COLLISION
        self.t += 1
        self.done = event is not Event.NONE
        return self.observe(), reward, self.done, event

    def position(self) -> tuple[float, float, float]:
        return (self.pose.x, self.pose.y, self.pose.heading)

    def theme(self) -> int:
        return self.world.theme_at(self.pose.x, self.pose.y)

    def snapshot(self) -> Snapshot:
        return Snapshot(self.pose, self.dyn, self.t, self.done)

    def restore(self, snap: Snapshot) -> None:
        self.pose, self.dyn, self.t, self.done = snap.state, snap.dyn, snap.t, snap.done


class TerrainEnv:
    n_actions = len(terrain.Gait)
    obs_shape = (maze.IMG_H, maze.IMG_W, 3)

    def __init__(self, track: terrain.TrackSpec, max_steps: int = maze.DEFAULT_MAX_STEPS):
        self.track = track
        self.max_steps = max_steps
        self.state = terrain.LeggedState()
        self.t = 0
        self.done = True

    def reset(self, seed: int) -> np.ndarray:
        self.state = terrain.LeggedState()
        self.t = 0
        self.done = False
        return self.observe()

    def observe(self) -> np.ndarray:
        return terrain.render_strip_u8(self.track, self.state)

    def step(self, action: int):
        if self.done:
            raise RuntimeError("step() on a finished episode; call reset()")
        res = terrain.step_gait(self.track, self.state, action, self.t, self.max_steps)
        self.state = res.next_pose
        self.t += 1
        self.done = res.terminal
        return self.observe(), res.reward, res.terminal, res.event

    def position(self) -> tuple[float, float, float]:
        return (float(self.state.position), 0.0, 0.0)

    def theme(self) -> int:
        """1 on flat ground, 2 when an obstacle starts within one FastLow stride."""
        pos = self.state.position
        return 2 if terrain.sweeps_obstacle(self.track, pos, pos + terrain.Gait.FAST_LOW.speed) else 1

    def snapshot(self) -> Snapshot:
        return Snapshot(self.state, None, self.t, self.done)

    def restore(self, snap: Snapshot) -> None:
        self.state, self.t, self.done = snap.state, snap.t, snap.done


def resolve_data_path(name) -> Path:
    """Return `name` if it exists on disk, else the bundled file of that name."""
    p = Path(name)
    if p.exists():
        return p
    bundled = DATA_DIR / p.name
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no such map/track file: {name}")


def load_maze_env(path, max_steps: int = maze.DEFAULT_MAX_STEPS) -> MazeEnv:
    text = resolve_data_path(path).read_text(encoding="utf-8")
    return MazeEnv(maze.load_map(text), max_steps)


def load_terrain_env(path, max_steps: int = maze.DEFAULT_MAX_STEPS) -> TerrainEnv:
    text = resolve_data_path(path).read_text(encoding="utf-8")
    return TerrainEnv(terrain.load_track(text), max_steps)
