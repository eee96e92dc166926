"""Grid-maze world for the wheeled robot: map format, kinematics, rewards, raycast rendering.

Coordinates: cell (col, row) covers [col, col+1) x [row, row+1); a pose's x runs along
columns and y along rows. Heading 0 points along +x and turning left adds to it.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum, IntEnum
from functools import cached_property

import numpy as np

AGENT_RADIUS = 0.3
FORWARD_STEP = 0.2
TURN_STEP = math.radians(18.0)
TAU = 2.0 * math.pi
FOV = math.radians(60.0)
IMG_W, IMG_H = 32, 24
# wall height in pixels at unit perpendicular distance
WALL_SCALE = 12.0
DEFAULT_MAX_STEPS = 1000

REWARD_FORWARD = 5.0
REWARD_TURN = 1.0
REWARD_COLLISION = -200.0

_EPS = 1e-9


class Kind(IntEnum):
    WALL1 = 0
    WALL2 = 1
    FLOOR1 = 2
    FLOOR2 = 3
    START = 4
    GOAL = 5


GLYPHS = {"#": Kind.WALL1, "%": Kind.WALL2, ".": Kind.FLOOR1, ",": Kind.FLOOR2, "S": Kind.START, "G": Kind.GOAL}
KIND_GLYPH = {v: k for k, v in GLYPHS.items()}
MARKER = "D"


class Action(IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2


class Event(Enum):
    NONE = "none"
    COLLISION = "collision"
    GOAL_REACHED = "goal"
    TIME_LIMIT = "time_limit"


class MapError(ValueError):
    pass


class UnknownGlyphError(MapError):
    def __init__(self, glyph, row, col):
        super().__init__(f"unknown glyph {glyph!r} at row {row}, col {col}")
        self.row, self.col = row, col


class NoStartError(MapError):
    pass


class MultipleStartError(MapError):
    pass


class UnwalledBorderError(MapError):
    pass


class NoGoalError(MapError):
    pass


class RaggedMapError(MapError):
    pass


class TrackSyntaxError(MapError):
    pass


@dataclass(frozen=True)
class DynamicTrack:
    waypoints: tuple[tuple[int, int], ...]  # (row, col) cells
    speed: float
    radius: float = AGENT_RADIUS

    def points(self) -> np.ndarray:
        return np.array([(c + 0.5, r + 0.5) for r, c in self.waypoints], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class WorldSpec:
    grid: np.ndarray  # (rows, cols) of Kind values
    theme: np.ndarray  # (rows, cols) of 1 / 2
    markers: frozenset = frozenset()  # (row, col) cells drawn as 'D'
    tracks: tuple[DynamicTrack, ...] = ()
    cell_size: float = 1.0

    @property
    def rows(self) -> int:
        return self.grid.shape[0]

    @property
    def cols(self) -> int:
        return self.grid.shape[1]

    @property
    def start(self) -> tuple[int, int]:
        r, c = np.argwhere(self.grid == Kind.START)[0]
        return int(r), int(c)

    @cached_property
    def wall_rows(self) -> list[list[bool]]:
        """Plain nested lists; hot loops index these instead of the numpy grid."""
        return (self.grid <= Kind.WALL2).tolist()

    @cached_property
    def theme_rows(self) -> list[list[int]]:
        return self.theme.tolist()

    def is_wall(self, row: int, col: int) -> bool:
        if row < 0 or col < 0 or row >= self.grid.shape[0] or col >= self.grid.shape[1]:
            return True
        return self.wall_rows[row][col]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y)), int(math.floor(x))

    def theme_at(self, x: float, y: float) -> int:
        r, c = self.cell_of(x, y)
        return int(self.theme[r, c])

    def free_cells(self) -> list[tuple[int, int]]:
        return [(int(r), int(c)) for r, c in np.argwhere(self.grid >= Kind.FLOOR1)]

    def __eq__(self, other):
        return (
            isinstance(other, WorldSpec)
            and np.array_equal(self.grid, other.grid)
            and np.array_equal(self.theme, other.theme)
            and self.markers == other.markers
            and self.tracks == other.tracks
        )


_TRACK_RE = re.compile(r"^!track\s+(?P<opts>[^:]*):\s*(?P<points>.*)$")
_POINT_RE = re.compile(r"\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)")


def _parse_track(line: str, lineno: int) -> DynamicTrack:
    m = _TRACK_RE.match(line.strip())
    if not m:
        raise TrackSyntaxError(f"line {lineno}: expected '!track speed=<real>: (r,c),...'")
    opts = {}
    for tok in m.group("opts").split():
        key, _, val = tok.partition("=")
        try:
            opts[key] = float(val)
        except ValueError:
            raise TrackSyntaxError(f"line {lineno}: bad value {tok!r}") from None
    if "speed" not in opts or set(opts) - {"speed", "radius"}:
        raise TrackSyntaxError(f"line {lineno}: track needs speed=<real> (and optional radius=<real>)")
    body = m.group("points").strip()
    points = tuple((int(r), int(c)) for r, c in _POINT_RE.findall(body))
    if not points or _POINT_RE.sub("", body).replace(",", "").strip():
        raise TrackSyntaxError(f"line {lineno}: bad waypoint list {body!r}")
    if opts["speed"] <= 0:
        raise TrackSyntaxError(f"line {lineno}: speed must be positive")
    return DynamicTrack(points, opts["speed"], opts.get("radius", AGENT_RADIUS))


def load_map(text: str, require_goal: bool = True) -> WorldSpec:
    rows, tracks, lines = [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.startswith("!"):
            tracks.append(_parse_track(line, lineno))
        elif line.strip():
            rows.append(line.rstrip("\r\n"))
    if not rows:
        raise MapError("map has no rows")
    width = len(rows[0])
    grid = np.zeros((len(rows), width), dtype=np.int8)
    markers = set()
    for r, line in enumerate(rows):
        if len(line) != width:
            raise RaggedMapError(f"row {r} has length {len(line)}, expected {width}")
        for c, ch in enumerate(line):
            if ch == MARKER:
                markers.add((r, c))
                grid[r, c] = -1  # floor with inherited theme
            elif ch in GLYPHS:
                grid[r, c] = GLYPHS[ch]
            else:
                raise UnknownGlyphError(ch, r, c)
    n_start = int((grid == Kind.START).sum())
    if n_start == 0:
        raise NoStartError("map has no start cell 'S'")
    if n_start > 1:
        raise MultipleStartError(f"map has {n_start} start cells")
    if require_goal and not (grid == Kind.GOAL).any():
        raise NoGoalError("map has no goal cell 'G'")
    border = np.concatenate([grid[0], grid[-1], grid[:, 0], grid[:, -1]])
    if ((border != Kind.WALL1) & (border != Kind.WALL2)).any():
        raise UnwalledBorderError("map border must consist of wall cells")
    theme = _assign_themes(grid)
    grid[grid == -1] = Kind.FLOOR1
    # a marker cell is plain floor in its inherited theme
    for r, c in markers:
        grid[r, c] = Kind.FLOOR1 if theme[r, c] == 1 else Kind.FLOOR2
    for track in tracks:
        for r, c in track.waypoints:
            if not (0 <= r < grid.shape[0] and 0 <= c < grid.shape[1]) or grid[r, c] <= Kind.WALL2:
                raise TrackSyntaxError(f"track waypoint ({r},{c}) is not a free cell")
    return WorldSpec(grid, theme, frozenset(markers), tuple(tracks))


def _assign_themes(grid: np.ndarray) -> np.ndarray:
    """Walls/floors carry their glyph's theme; S, G and D take the majority of their 4-neighbours."""
    theme = np.zeros(grid.shape, dtype=np.int8)
    theme[(grid == Kind.WALL1) | (grid == Kind.FLOOR1)] = 1
    theme[(grid == Kind.WALL2) | (grid == Kind.FLOOR2)] = 2
    pending = list(zip(*np.nonzero(theme == 0)))
    # repeat so chains of inheriting cells (e.g. a row of G) resolve from their neighbours
    for _ in range(grid.size):
        if not pending:
            break
        left = []
        for r, c in pending:
            votes = [theme[rr, cc] for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))
                     if 0 <= rr < grid.shape[0] and 0 <= cc < grid.shape[1] and theme[rr, cc]]
            if votes:
                # ties go to theme 1
                theme[r, c] = 2 if votes.count(2) > votes.count(1) else 1
            else:
                left.append((r, c))
        if len(left) == len(pending):
            for r, c in left:
                theme[r, c] = 1
            break
        pending = left
    return theme


def serialize_map(world: WorldSpec) -> str:
    lines = []
    for r in range(world.rows):
        row = []
        for c in range(world.cols):
            row.append(MARKER if (r, c) in world.markers else KIND_GLYPH[Kind(int(world.grid[r, c]))])
        lines.append("".join(row))
    for t in world.tracks:
        pts = ",".join(f"({r},{c})" for r, c in t.waypoints)
        lines.append(f"!track speed={t.speed!r} radius={t.radius!r}: {pts}")
    return "\n".join(lines) + "\n"


def theme_regions(world: WorldSpec) -> list[tuple[int, int]]:
    """4-connected regions of equal theme, as (theme, cell count) in discovery order."""
    seen = np.zeros(world.grid.shape, dtype=bool)
    regions = []
    for r0 in range(world.rows):
        for c0 in range(world.cols):
            if seen[r0, c0]:
                continue
            th = world.theme[r0, c0]
            stack, n = [(r0, c0)], 0
            seen[r0, c0] = True
            while stack:
                r, c = stack.pop()
                n += 1
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < world.rows and 0 <= cc < world.cols and not seen[rr, cc] \
                            and world.theme[rr, cc] == th:
                        seen[rr, cc] = True
                        stack.append((rr, cc))
            regions.append((int(th), n))
    return regions


@dataclass(frozen=True)
class AgentPose:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", self.heading % TAU)


@dataclass(frozen=True)
class DynamicState:
    positions: tuple[tuple[float, float], ...] = ()
    segments: tuple[int, ...] = ()  # current segment index per obstacle
    directions: tuple[int, ...] = ()  # +1 forward along waypoints, -1 back
    progress: tuple[float, ...] = ()  # distance travelled along the current segment


@dataclass(frozen=True)
class StepResult:
    next_pose: AgentPose
    reward: float
    terminal: bool
    event: Event


def disc_hits_wall(world: WorldSpec, x: float, y: float, radius: float = AGENT_RADIUS) -> bool:
    r0, c0 = int(math.floor(y)), int(math.floor(x))
    for r in range(r0 - 1, r0 + 2):
        for c in range(c0 - 1, c0 + 2):
            if not world.is_wall(r, c):
                continue
            dx = max(c - x, 0.0, x - (c + 1))
            dy = max(r - y, 0.0, y - (r + 1))
            if dx * dx + dy * dy < radius * radius - _EPS:
                return True
    return False


def disc_hits_obstacle(world: WorldSpec, dyn: DynamicState | None, x: float, y: float) -> bool:
    if dyn is None:
        return False
    for (ox, oy), track in zip(dyn.positions, world.tracks):
        reach = AGENT_RADIUS + track.radius
        if (x - ox) ** 2 + (y - oy) ** 2 < reach * reach - _EPS:
            return True
    return False


def _turn(heading: float, delta_steps: int) -> float:
    k = heading / TURN_STEP
    kr = round(k)
    if abs(k - kr) < 1e-9:
        return ((kr + delta_steps) % 20) * TURN_STEP
    return (heading + delta_steps * TURN_STEP) % TAU


def step(world: WorldSpec, pose: AgentPose, action, t: int, dynamic_state: DynamicState | None = None,
         max_steps: int = DEFAULT_MAX_STEPS) -> StepResult:
    """Apply one primitive action. t is the 0-based index of this step within the episode."""
    action = Action(int(action))
    event = Event.NONE
    if action == Action.FORWARD:
        nx = pose.x + FORWARD_STEP * math.cos(pose.heading)
        ny = pose.y + FORWARD_STEP * math.sin(pose.heading)
        if disc_hits_wall(world, nx, ny) or disc_hits_obstacle(world, dynamic_state, nx, ny):
            return StepResult(pose, REWARD_COLLISION, True, Event.COLLISION)
        new_pose = AgentPose(nx, ny, pose.heading)
        reward = REWARD_FORWARD
        r, c = world.cell_of(nx, ny)
        if world.grid[r, c] == Kind.GOAL:
            event = Event.GOAL_REACHED
    else:
        delta = 1 if action == Action.TURN_LEFT else -1
        new_pose = AgentPose(pose.x, pose.y, _turn(pose.heading, delta))
        reward = REWARD_TURN
    if event is Event.NONE and t + 1 >= max_steps:
        event = Event.TIME_LIMIT
    return StepResult(new_pose, reward, event is not Event.NONE, event)


def initial_dynamics(world: WorldSpec) -> DynamicState:
    n = len(world.tracks)
    return DynamicState(
        tuple(tuple(t.points()[0]) for t in world.tracks),
        (0,) * n, (1,) * n, (0.0,) * n,
    )


def advance_dynamics(world: WorldSpec, dyn: DynamicState) -> DynamicState:
    """Move every obstacle `speed` along its polyline, reversing direction at the ends."""
    if not world.tracks:
        return dyn
    positions, segments, directions, progress = [], [], [], []
    for i, track in enumerate(world.tracks):
        pts = track.points()
        seg, d, prog = dyn.segments[i], dyn.directions[i], dyn.progress[i]
        if len(pts) == 1:
            positions.append(tuple(pts[0]))
            segments.append(seg), directions.append(d), progress.append(prog)
            continue
        remaining = track.speed
        while True:
            a, b = (pts[seg], pts[seg + 1]) if d > 0 else (pts[seg + 1], pts[seg])
            length = float(np.hypot(*(b - a)))
            if prog + remaining < length - _EPS:
                prog += remaining
                break
            remaining -= length - prog
            prog = 0.0
            # reached the segment end: continue onto the next one or reverse at a track end
            if d > 0 and seg + 1 < len(pts) - 1:
                seg += 1
            elif d < 0 and seg > 0:
                seg -= 1
            else:
                d = -d
            if remaining <= _EPS:
                break
        a, b = (pts[seg], pts[seg + 1]) if d > 0 else (pts[seg + 1], pts[seg])
        length = float(np.hypot(*(b - a)))
        pos = a + (b - a) * (prog / length if length > 0 else 0.0)
        positions.append((float(pos[0]), float(pos[1])))
        segments.append(seg), directions.append(d), progress.append(prog)
    return DynamicState(tuple(positions), tuple(segments), tuple(directions), tuple(progress))


def reset(world: WorldSpec, seed: int) -> tuple[AgentPose, DynamicState]:
    r, c = world.start
    k = int(np.random.default_rng(seed).integers(4))
    return AgentPose(c + 0.5, r + 0.5, k * (math.pi / 2)), initial_dynamics(world)


# -- rendering ---------------------------------------------------------------

CEILING = (200, 200, 200)
BRICK_A = (190, 45, 35)
BRICK_B = (110, 20, 15)
DARK_WALL = (18, 18, 24)
FLOOR_GRAY = (135, 135, 135)
FLOOR_PURPLE = (125, 35, 175)
OBSTACLE_ORANGE = (255, 140, 0)
BRICK_BANDS = 4

_RAY_OFFSETS = FOV / 2 - (np.arange(IMG_W) + 0.5) * (FOV / IMG_W)


def _cast(world: WorldSpec, x: float, y: float, angle: float, max_dist: float = 64.0):
    """DDA along one ray; returns (distance along ray, wall theme)."""
    dx, dy = math.cos(angle), math.sin(angle)
    col, row = int(math.floor(x)), int(math.floor(y))
    step_c = 1 if dx > 0 else -1
    step_r = 1 if dy > 0 else -1
    t_dc = abs(1.0 / dx) if abs(dx) > 1e-12 else math.inf
    t_dr = abs(1.0 / dy) if abs(dy) > 1e-12 else math.inf
    t_c = ((col + 1 - x) if dx > 0 else (x - col)) * t_dc if t_dc < math.inf else math.inf
    t_r = ((row + 1 - y) if dy > 0 else (y - row)) * t_dr if t_dr < math.inf else math.inf
    walls, themes = world.wall_rows, world.theme_rows
    n_rows, n_cols = world.grid.shape
    t = 0.0
    while t < max_dist:
        if t_c < t_r:
            col += step_c
            t = t_c
            t_c += t_dc
        else:
            row += step_r
            t = t_r
            t_r += t_dr
        if not (0 <= row < n_rows and 0 <= col < n_cols):
            return t, 1
        if walls[row][col]:
            return t, themes[row][col]
    return max_dist, 1


def _ray_disc(x, y, angle, ox, oy, radius):
    dx, dy = math.cos(angle), math.sin(angle)
    fx, fy = x - ox, y - oy
    b = fx * dx + fy * dy
    c = fx * fx + fy * fy - radius * radius
    disc = b * b - c
    if disc < 0:
        return math.inf
    t = -b - math.sqrt(disc)
    if t < 0:
        t = -b + math.sqrt(disc)
    return t if t >= 0 else math.inf


def render_u8(world: WorldSpec, pose: AgentPose, dynamic_state: DynamicState | None = None) -> np.ndarray:
    perp = np.empty(IMG_W)
    kind = np.empty(IMG_W, dtype=np.int8)  # 1, 2 wall theme; 3 obstacle
    for i, off in enumerate(_RAY_OFFSETS):
        angle = pose.heading + off
        dist, th = _cast(world, pose.x, pose.y, angle)
        if dynamic_state is not None:
            for (ox, oy), track in zip(dynamic_state.positions, world.tracks):
                d = _ray_disc(pose.x, pose.y, angle, ox, oy, track.radius)
                if d < dist:
                    dist, th = d, 3
        perp[i] = max(dist * math.cos(off), 1e-6)
        kind[i] = th
    full_h = WALL_SCALE / perp
    height = np.minimum(np.rint(full_h), IMG_H).astype(int)
    top = (IMG_H - height) // 2
    rows = np.arange(IMG_H)[:, None]
    in_wall = (rows >= top) & (rows < top + height)
    below = rows >= top + height
    # brick band index measured in wall-space so bands stay attached to the wall
    v = (rows + 0.5 - IMG_H / 2) / full_h + 0.5
    band = np.floor(v * BRICK_BANDS).astype(int) % 2

    img = np.empty((IMG_H, IMG_W, 3), dtype=np.uint8)
    img[:] = CEILING
    floor = FLOOR_GRAY if world.theme_at(pose.x, pose.y) == 1 else FLOOR_PURPLE
    img[below] = floor
    brick = in_wall & (kind == 1)
    img[brick & (band == 0)] = BRICK_A
    img[brick & (band == 1)] = BRICK_B
    img[in_wall & (kind == 2)] = DARK_WALL
    img[in_wall & (kind == 3)] = OBSTACLE_ORANGE
    return img


def to_observation(img_u8: np.ndarray) -> np.ndarray:
    return img_u8.astype(np.float32) / np.float32(255.0)


def render(world: WorldSpec, pose: AgentPose, dynamic_state: DynamicState | None = None) -> np.ndarray:
    """First-person 24x32x3 observation with values in [0, 1]."""
    return to_observation(render_u8(world, pose, dynamic_state))
