"""Behaviours the meta-policy can choose between: frozen learned nets or scripted actions."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..nn import NetworkParams, load_checkpoint
from ..rl.dqn import greedy_action

# builtin name -> constant primitive action. Maze actions: 0 forward, 1 left, 2 right.
# Terrain actions: 0 FastLow, 1 SlowHigh.
SCRIPTED = {
    "AlwaysForward": 0,
    "SpinLeft": 1,
    "SpinRight": 2,
    "GaitFastLow": 0,
    "GaitSlowHigh": 1,
}


class UnknownOptionError(ValueError):
    pass


@dataclass(frozen=True)
class Scripted:
    name: str

    def __post_init__(self):
        if self.name not in SCRIPTED:
            raise UnknownOptionError(f"no builtin option named {self.name!r}")

    @property
    def ident(self) -> str:
        return self.name

    def __call__(self, obs) -> int:
        return SCRIPTED[self.name]


@dataclass(frozen=True, eq=False)
class Learned:
    """Greedy policy of a frozen low-level network."""
    params: NetworkParams
    source: str = ""

    @property
    def ident(self) -> str:
        return self.source or "learned"

    def __call__(self, obs) -> int:
        return greedy_action(self.params, obs)


OptionPolicy = Scripted | Learned


def load_option(ref: str) -> OptionPolicy:
    """A builtin name, or a path to a low-level checkpoint."""
    if ref in SCRIPTED:
        return Scripted(ref)
    path = Path(ref)
    if not path.exists():
        raise UnknownOptionError(f"{ref!r} is neither a builtin option nor an existing checkpoint")
    params, _ = load_checkpoint(path)
    return Learned(params, str(ref))


def option_action(option: OptionPolicy, obs: np.ndarray) -> int:
    return int(option(obs))
