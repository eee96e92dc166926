from __future__ import annotations

from dataclasses import dataclass, field

from ..sim.maze import Event


@dataclass
class EpisodeStats:
    ret: float
    steps: int
    success: bool
    # (x, y, heading, option) after every primitive step; option is -1 for flat policies
    trajectory: list[tuple[float, float, float, int]] = field(default_factory=list)
    final_event: Event = Event.NONE
    rewards: list[float] = field(default_factory=list, repr=False)
    decision_steps: list[int] = field(default_factory=list)

    @property
    def options(self) -> list[int]:
        return [row[3] for row in self.trajectory]
