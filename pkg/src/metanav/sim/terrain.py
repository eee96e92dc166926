"""1D track for the legged robot: flat ground, tall obstacles and two scripted gaits."""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum, IntEnum
from fractions import Fraction

import numpy as np

from .maze import IMG_H, IMG_W, REWARD_COLLISION, Event, StepResult, to_observation

_TOKEN_RE = re.compile(r"^([FO])(\d+(?:\.\d+)?)$")

LOOKAHEAD = 6
HORIZON_ROW = 8
GROUND_SCALE = 12.0  # ground row offset below the horizon at unit distance
BLOCK_SCALE = 9.0  # obstacle block height in pixels at unit distance
MIN_DIST = 0.25

SKY = (170, 200, 235)
GROUND = (120, 100, 70)
BLOCK = (40, 35, 30)
HORIZON = (60, 60, 60)


class Segment(Enum):
    FLAT = "F"
    OBSTACLE = "O"


class Gait(IntEnum):
    FAST_LOW = 0
    SLOW_HIGH = 1

    @property
    def speed(self) -> Fraction:
        return Fraction(1) if self is Gait.FAST_LOW else Fraction(2, 5)

    @property
    def can_climb(self) -> bool:
        return self is Gait.SLOW_HIGH


class TrackError(ValueError):
    pass


class BadTokenError(TrackError):
    pass


class NonPositiveLengthError(TrackError):
    pass


@dataclass(frozen=True)
class TrackSpec:
    segments: tuple[tuple[Segment, Fraction], ...]

    @property
    def total_length(self) -> Fraction:
        return sum((length for _, length in self.segments), Fraction(0))

    def obstacles(self) -> list[tuple[Fraction, Fraction]]:
        out, pos = [], Fraction(0)
        for kind, length in self.segments:
            if kind is Segment.OBSTACLE:
                out.append((pos, pos + length))
            pos += length
        return out


@dataclass(frozen=True)
class LeggedState:
    position: Fraction = Fraction(0)
    fallen: bool = False


def load_track(text: str) -> TrackSpec:
    segments = []
    for tok in text.split():
        m = _TOKEN_RE.match(tok)
        if not m:
            raise BadTokenError(f"bad track token {tok!r}")
        kind, length = m.group(1), Fraction(m.group(2))
        if length <= 0:
            raise NonPositiveLengthError(f"segment {tok!r} must have positive length")
        segments.append((Segment(kind), length))
    if not segments:
        raise TrackError("empty track")
    if segments[-1][0] is not Segment.FLAT:
        raise TrackError("track must end with a flat goal segment")
    return TrackSpec(tuple(segments))


def _fmt(x: Fraction) -> str:
    # lengths come from decimal literals, so the quotient terminates
    return format(Decimal(x.numerator) / Decimal(x.denominator), "f")


def serialize_track(track: TrackSpec) -> str:
    return " ".join(f"{kind.value}{_fmt(length)}" for kind, length in track.segments)


def sweeps_obstacle(track: TrackSpec, start: Fraction, end: Fraction) -> bool:
    return any(start < b and end > a for a, b in track.obstacles())


def step_gait(track: TrackSpec, state: LeggedState, gait, t: int = 0, max_steps: int = 1000):
    """Advance one step with the given gait; the StepResult's next_pose is the new LeggedState."""
    gait = Gait(int(gait))
    total = track.total_length
    end = min(state.position + gait.speed, total)
    if not gait.can_climb and sweeps_obstacle(track, state.position, state.position + gait.speed):
        new = LeggedState(state.position, True)
        return StepResult(new, REWARD_COLLISION, True, Event.COLLISION)
    new = LeggedState(end, False)
    reward = float(5 * (end - state.position))
    if end >= total:
        event = Event.GOAL_REACHED
    elif t + 1 >= max_steps:
        event = Event.TIME_LIMIT
    else:
        event = Event.NONE
    return StepResult(new, reward, event is not Event.NONE, event)


def _ground_row(d: float) -> int:
    return HORIZON_ROW + min(IMG_H - 1 - HORIZON_ROW, int(round(GROUND_SCALE / max(d, MIN_DIST))))


def block_height(d: float) -> int:
    return min(IMG_H, int(round(BLOCK_SCALE / max(d, MIN_DIST))))


def render_strip_u8(track: TrackSpec, state: LeggedState) -> np.ndarray:
    img = np.empty((IMG_H, IMG_W, 3), dtype=np.uint8)
    img[:HORIZON_ROW] = SKY
    img[HORIZON_ROW:] = GROUND
    img[HORIZON_ROW] = HORIZON
    pos = state.position
    visible = [(a, b) for a, b in track.obstacles() if b > pos and a < pos + LOOKAHEAD]
    # far to near so closer blocks overdraw
    for a, _ in sorted(visible, key=lambda ab: -ab[0]):
        d = float(max(a - pos, Fraction(0)))
        base = _ground_row(d)
        top = max(0, base - block_height(d) + 1)
        img[top:base + 1] = BLOCK
    return img


def render_strip(track: TrackSpec, state: LeggedState) -> np.ndarray:
    return to_observation(render_strip_u8(track, state))
