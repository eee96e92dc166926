"""Comparison tables and spatial maps of which option the meta-policy picks."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn import NetworkParams, forward
from .rl.stats import EpisodeStats
from .sim.maze import AgentPose, WorldSpec, render_u8, to_observation

UNVISITED = -1

OPTION_COLOURS = {0: (0, 0, 139), 1: (144, 238, 144)}
UNVISITED_COLOUR = (255, 255, 255)
# extra options beyond the two in the legend
_SPARE_COLOURS = [(220, 60, 60), (240, 200, 40), (150, 60, 200), (40, 200, 220)]

CARDINALS = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)


@dataclass(frozen=True)
class ReportRow:
    name: str
    mean_return: float
    success_pct: float


def summarize(stats: Sequence[EpisodeStats], name: str = "") -> ReportRow:
    if not stats:
        raise ValueError("summarize needs at least one episode")
    mean = float(np.mean([s.ret for s in stats]))
    pct = 100.0 * sum(bool(s.success) for s in stats) / len(stats)
    return ReportRow(name, mean, pct)


def compare(entries: dict[str, Sequence[EpisodeStats]] | Sequence[tuple[str, Sequence[EpisodeStats]]]):
    """Rows sorted by mean return, highest first; ties keep input order."""
    items = list(entries.items()) if isinstance(entries, dict) else list(entries)
    if len(items) < 2:
        raise ValueError("compare needs at least two entries")
    rows = [summarize(stats, name) for name, stats in items]
    return sorted(rows, key=lambda r: -r.mean_return)


def format_table(rows: Sequence[ReportRow]) -> str:
    width = max(len("name"), *(len(r.name) for r in rows))
    lines = [f"{'name':<{width}}  {'mean_return':>12}  {'success_pct':>11}"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.mean_return:>12.1f}  {r.success_pct:>10.1f}%")
    return "\n".join(lines)


def table_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "mean_return", "success_pct"])
    for r in rows:
        w.writerow([r.name, repr(r.mean_return), repr(r.success_pct)])
    return buf.getvalue()


def write_stats_csv(stats: Sequence[EpisodeStats], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "return", "steps", "success", "final_event"])
        for i, s in enumerate(stats):
            w.writerow([i, repr(s.ret), s.steps, int(s.success), s.final_event.value])


# -- activation maps ----------------------------------------------------------------


class MapSource(Enum):
    FROM_TRAJECTORIES = "trajectories"
    FROM_QUERY = "query"


@dataclass(frozen=True)
class ActivationMap:
    cells: np.ndarray  # (rows, cols) int, UNVISITED where nothing was recorded
    resolution: int = 1
    source: MapSource = MapSource.FROM_QUERY

    def __eq__(self, other):
        if not isinstance(other, ActivationMap):
            return NotImplemented
        return (self.resolution == other.resolution and self.source == other.source
                and np.array_equal(self.cells, other.cells))

    @property
    def shape(self):
        return self.cells.shape


def _majority(votes: Sequence[int]) -> int:
    """Most frequent value, lowest value on ties."""
    counts = np.bincount(np.asarray(votes, dtype=np.int64))
    return int(np.argmax(counts))


def activation_map_from_query(world: WorldSpec, meta: NetworkParams, resolution: int = 1,
                              headings: Sequence[float] = CARDINALS) -> ActivationMap:
    """Meta argmax at every free cell centre for each heading, majority per cell."""
    if resolution != 1:
        raise ValueError("only one sample per cell is supported")
    cells = np.full(world.grid.shape, UNVISITED, dtype=np.int64)
    free = world.free_cells()
    if not free:
        return ActivationMap(cells, resolution, MapSource.FROM_QUERY)
    imgs = []
    for r, c in free:
        for h in headings:
            imgs.append(render_u8(world, AgentPose(c + 0.5, r + 0.5, h)))
    q = forward(meta, to_observation(np.stack(imgs)), record=False)[0]
    picks = np.argmax(q, axis=1).reshape(len(free), len(headings))
    for (r, c), votes in zip(free, picks):
        cells[r, c] = _majority(votes)
    return ActivationMap(cells, resolution, MapSource.FROM_QUERY)


def activation_map_from_trajectories(world: WorldSpec, stats: Sequence[EpisodeStats]) -> ActivationMap:
    votes: dict[tuple[int, int], list[int]] = {}
    for s in stats:
        for x, y, _, option in s.trajectory:
            if option >= 0:
                votes.setdefault(world.cell_of(x, y), []).append(option)
    cells = np.full(world.grid.shape, UNVISITED, dtype=np.int64)
    for (r, c), v in votes.items():
        cells[r, c] = _majority(v)
    return ActivationMap(cells, 1, MapSource.FROM_TRAJECTORIES)


def _colour(option: int) -> tuple[int, int, int]:
    if option == UNVISITED:
        return UNVISITED_COLOUR
    if option in OPTION_COLOURS:
        return OPTION_COLOURS[option]
    return _SPARE_COLOURS[(option - 2) % len(_SPARE_COLOURS)]


def map_to_ppm(amap: ActivationMap) -> bytes:
    h, w = amap.cells.shape
    img = np.zeros((h, w, 3), dtype=np.uint8)
    for opt in np.unique(amap.cells):
        img[amap.cells == opt] = _colour(int(opt))
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def map_to_csv(amap: ActivationMap) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "col", "option"])
    for (r, c), v in np.ndenumerate(amap.cells):
        w.writerow([r, c, int(v)])
    return buf.getvalue()


def export_map(amap: ActivationMap, base) -> tuple[Path, Path]:
    """Write base.csv and base.ppm; returns both paths."""
    base = Path(base)
    csv_path, ppm_path = base.with_suffix(".csv"), base.with_suffix(".ppm")
    csv_path.write_text(map_to_csv(amap), encoding="utf-8")
    ppm_path.write_bytes(map_to_ppm(amap))
    return csv_path, ppm_path


def import_map_csv(path, source: MapSource = MapSource.FROM_QUERY) -> ActivationMap:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(int(d["row"]), int(d["col"]), int(d["option"])) for d in csv.DictReader(fh)]
    if not rows:
        raise ValueError(f"{path}: empty activation map")
    h = max(r for r, _, _ in rows) + 1
    w = max(c for _, c, _ in rows) + 1
    cells = np.full((h, w), UNVISITED, dtype=np.int64)
    for r, c, v in rows:
        cells[r, c] = v
    return ActivationMap(cells, 1, source)


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise ValueError(f"{path}: not a binary PPM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def theme_share(amap: ActivationMap, world: WorldSpec, theme: int, option: int) -> float:
    """Fraction of free cells of `theme` that the map labels with `option`."""
    cells = [(r, c) for r, c in world.free_cells() if world.theme_rows[r][c] == theme]
    if not cells:
        return 0.0
    return sum(amap.cells[r, c] == option for r, c in cells) / len(cells)
