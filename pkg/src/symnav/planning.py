"""Path planning on the known map, waypoint subsampling, the deterministic
local controller, frontier detection and the frontier-based goal policies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .env import FORWARD, TURN_LEFT, TURN_RIGHT, AgentPose
from .networks import GoalLikelihoodMap

_SQRT2 = math.sqrt(2.0)
_MOVES = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass
class PlannedPath:
    cells: list                  # [(row, col), ...] from start to goal, 8-connected
    cost: float

    def length(self) -> int:
        return len(self.cells) - 1


class GoalChoice(NamedTuple):
    cell: tuple
    fallback: bool


def cost_map_from_state(obstacles: np.ndarray, explored: np.ndarray,
                        unknown_cost: float = 1.5) -> np.ndarray:
    """Per-cell traversal multipliers: known-free 1, unknown penalised,
    known-obstacle blocked (inf)."""
    known_obstacle = (explored >= 0.5) & (obstacles >= 0.5)
    unknown = explored < 0.5
    cost = np.ones(obstacles.shape)
    cost[unknown] = unknown_cost
    cost[known_obstacle] = np.inf
    return cost


def shortest_path(obstacles: np.ndarray, explored: np.ndarray, start: tuple,
                  goal: tuple, unknown_cost: float = 1.5) -> PlannedPath:
    """Optimal 8-connected path on the known map.

    Unknown cells are traversable at a cost penalty; if the goal is
    unreachable the path ends at the reachable cell nearest the goal
    (Euclidean distance, ties by path cost then row-major order).
    """
    cost = cost_map_from_state(obstacles, explored, unknown_cost)
    h, w = cost.shape
    sr, sc = start
    if not np.isfinite(cost[sr, sc]):
        raise ValueError(f"start cell {start} is a known obstacle")
    cost[sr, sc] = min(cost[sr, sc], 1.0)   # the agent stands there

    graph = _grid_graph(cost)
    s_idx = sr * w + sc
    dist, pred = dijkstra(graph, directed=True, indices=s_idx, return_predecessors=True)

    g_idx = goal[0] * w + goal[1]
    if not np.isfinite(dist[g_idx]):
        reach = np.isfinite(dist)
        rr, cc = np.divmod(np.arange(h * w)[reach], w)
        d2 = (rr - goal[0]) ** 2 + (cc - goal[1]) ** 2
        # nearest reachable cell; break ties by path cost, then scan order
        order = np.lexsort((np.arange(reach.sum()), dist[reach], d2))
        pick = order[0]
        g_idx = rr[pick] * w + cc[pick]

    cells = []
    idx = g_idx
    while idx != -9999 and idx >= 0:
        cells.append((idx // w, idx % w))
        if idx == s_idx:
            break
        idx = pred[idx]
    cells.reverse()
    return PlannedPath(cells, float(dist[g_idx]))


_GRAPH_CACHE: dict = {}


def _edge_template(h: int, w: int):
    """Precomputed (source, target, base-length) triples for the 8-grid."""
    key = (h, w)
    tpl = _GRAPH_CACHE.get(key)
    if tpl is not None:
        return tpl
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, base = [], [], []
    for dr, dc in _MOVES:
        src = idx[max(0, -dr):h - max(0, dr), max(0, -dc):w - max(0, dc)]
        dst = idx[max(0, dr):h + min(0, dr), max(0, dc):w + min(0, dc)]
        rows.append(src.ravel())
        cols.append(dst.ravel())
        base.append(np.full(src.size, _SQRT2 if dr and dc else 1.0))
    tpl = (np.concatenate(rows), np.concatenate(cols), np.concatenate(base))
    _GRAPH_CACHE[key] = tpl
    return tpl


def _grid_graph(cost: np.ndarray) -> csr_matrix:
    h, w = cost.shape
    rows, cols, base = _edge_template(h, w)
    flat = cost.ravel()
    mult = flat[cols]                   # entering a cell pays its multiplier
    ok = np.isfinite(mult)
    # no corner cutting: a diagonal move needs both orthogonal neighbours
    # passable, otherwise the continuous controller cannot execute it
    diagonal = base > 1.0
    if diagonal.any():
        dr = cols // w - rows // w
        dc = cols % w - rows % w
        side_a = rows + dr * w          # (r+dr, c)
        side_b = rows + dc              # (r, c+dc)
        ok &= ~diagonal | (np.isfinite(flat[side_a]) & np.isfinite(flat[side_b]))
    return csr_matrix((base[ok] * mult[ok], (rows[ok], cols[ok])), shape=(h * w, h * w))


def subsample_short_term_goals(path: PlannedPath, interval: int) -> list:
    """Every interval-th waypoint plus the final goal."""
    if not path.cells:
        raise ValueError("cannot subsample an empty path")
    cells = path.cells
    picks = list(range(interval, len(cells), interval))
    if not picks or picks[-1] != len(cells) - 1:
        picks.append(len(cells) - 1)
    return [cells[i] for i in picks]


@dataclass
class MotionConfig:
    turn_rad: float = math.radians(15.0)
    threshold_rad: float = math.radians(15.0)

    @staticmethod
    def from_config(cfg) -> "MotionConfig":
        return MotionConfig(turn_rad=math.radians(cfg["motion.turn_deg"]),
                            threshold_rad=math.radians(cfg["motion.turn_threshold_deg"]))


def local_step(pose: AgentPose, waypoint: tuple, motion: MotionConfig) -> str:
    """One controller decision: turn toward the waypoint when the heading
    error exceeds the threshold (ties turn left), otherwise drive forward."""
    wy, wx = waypoint[0] + 0.5, waypoint[1] + 0.5
    bearing = math.atan2(wy - pose.y, wx - pose.x)
    err = math.atan2(math.sin(bearing - pose.heading), math.cos(bearing - pose.heading))
    if abs(err) > motion.threshold_rad:
        return TURN_LEFT if err >= 0 else TURN_RIGHT
    return FORWARD


@dataclass
class FrontierMap:
    """Binary mask of explored-free cells adjacent to unexplored space."""

    data: np.ndarray
    components: list = field(default_factory=list)   # [(size, [cells...]), ...]
    free_mask: np.ndarray | None = None              # explored-free cells, for fallback

    def largest_component(self):
        return max(self.components, key=lambda sc: sc[0], default=None)


def detect_frontiers(local_view: np.ndarray, threshold: float = 0.5) -> FrontierMap:
    """Frontier cells of a [>=2, G, G] map view (channel 0 obstacles,
    channel 1 explored): explored, free, with an unexplored 4-neighbour."""
    obstacles, explored = local_view[0], local_view[1]
    free = (explored >= threshold) & (obstacles < threshold)
    unexplored = explored < threshold
    pad = np.pad(unexplored, 1, constant_values=False)
    neighbour_unexplored = (pad[:-2, 1:-1] | pad[2:, 1:-1]
                            | pad[1:-1, :-2] | pad[1:-1, 2:])
    mask = free & neighbour_unexplored

    labels, count = ndimage.label(mask, structure=np.ones((3, 3)))
    components = []
    for lab in range(1, count + 1):
        cells = [tuple(rc) for rc in np.argwhere(labels == lab)]
        components.append((len(cells), cells))
    return FrontierMap(mask.astype(float), components, free)


def fbe_select_goal(f: FrontierMap, rng: np.random.Generator) -> GoalChoice:
    """Uniform-random cell on the largest frontier component; when no
    frontier exists, fall back to a random explored-free cell."""
    best = f.largest_component()
    if best is not None:
        cells = best[1]
        return GoalChoice(cells[int(rng.integers(len(cells)))], False)
    free_cells = np.argwhere(f.free_mask) if f.free_mask is not None else np.zeros((0, 2))
    if len(free_cells) == 0:
        side = f.data.shape[0]
        return GoalChoice((side // 2, side // 2), True)
    pick = free_cells[int(rng.integers(len(free_cells)))]
    return GoalChoice((int(pick[0]), int(pick[1])), True)


def fbe_rl_select_goal(f: FrontierMap, actor_map: GoalLikelihoodMap,
                       rng: np.random.Generator) -> GoalChoice:
    """Frontier selection weighted by the actor: multiply the actor map with
    the (max-pooled) frontier mask and sample from a softmax restricted to
    frontier-positive cells.  Returns a cell on the actor's lattice."""
    side = actor_map.data.shape[0]
    g = f.data.shape[0]
    if g % side != 0:
        raise ValueError(f"frontier mask side {g} is not a multiple of the actor lattice {side}")
    factor = g // side
    pooled = f.data.reshape(side, factor, side, factor).max(axis=(1, 3))
    support = pooled > 0
    if not support.any():
        choice = fbe_select_goal(f, rng)
        return GoalChoice((choice.cell[0] // factor, choice.cell[1] // factor), True)
    weighted = actor_map.data * pooled
    vals = weighted[support]
    # softmax over frontier-positive cells only; a softmax over the whole map
    # would hand e^0 mass to every non-frontier cell
    z = np.exp(vals - vals.max())
    probs = z / z.sum()
    cum = np.cumsum(probs)
    pick = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    pick = min(pick, probs.size - 1)
    cells = np.argwhere(support)
    return GoalChoice((int(cells[pick][0]), int(cells[pick][1])), False)
