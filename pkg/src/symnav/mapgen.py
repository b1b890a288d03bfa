"""Procedural occupancy-grid generation: an in-distribution suite of small
rectangular-room layouts and an out-of-distribution suite of larger, more
irregular maze-corridor layouts.  Generation is deterministic per seed."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import Config

FREE, OBSTACLE = 0, 1


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MapGeneratorSpec:
    suite: str                  # iid | ood
    rooms_min: int
    rooms_max: int
    room_cells_min: int
    room_cells_max: int
    area_min_cells: int
    area_max_cells: int
    corridor_width: int
    maze_irregularity: float    # corridor turn probability; 0 gives L-corridors
    side: int
    cell_size: float
    seed: int


def spec_for_suite(cfg: Config, suite: str, seed: int) -> MapGeneratorSpec:
    suite = suite.lower()
    if suite not in ("iid", "ood"):
        raise ValueError(f"unknown suite {suite!r}; expected iid or ood")
    cell = cfg["env.cell_size"]
    area_to_cells = 1.0 / (cell * cell)
    p = "map.iid_" if suite == "iid" else "map.ood_"
    return MapGeneratorSpec(
        suite=suite,
        rooms_min=cfg[p + "rooms_min"],
        rooms_max=cfg[p + "rooms_max"],
        room_cells_min=cfg[p + "room_cells_min"],
        room_cells_max=cfg[p + "room_cells_max"],
        area_min_cells=int(cfg[p + "area_min_m2"] * area_to_cells),
        area_max_cells=int(cfg[p + "area_max_m2"] * area_to_cells),
        corridor_width=cfg["map.corridor_width"],
        maze_irregularity=0.0 if suite == "iid" else cfg["map.maze_irregularity"],
        side=cfg["env.M"],
        cell_size=cell,
        seed=seed,
    )


@dataclass
class OccupancyGrid:
    cells: np.ndarray           # [M, M] of {FREE, OBSTACLE}
    cell_size: float

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        m = self.cells.shape[0]
        if self.cells.shape != (m, m):
            raise ValueError(f"grid must be square, got {self.cells.shape}")

    @property
    def side(self) -> int:
        return self.cells.shape[0]

    def free_mask(self) -> np.ndarray:
        return self.cells == FREE

    def free_area_m2(self) -> float:
        return float(self.free_mask().sum()) * self.cell_size ** 2

    def check_invariants(self) -> None:
        border = np.concatenate([self.cells[0], self.cells[-1],
                                 self.cells[:, 0], self.cells[:, -1]])
        if not (border == OBSTACLE).all():
            raise ValueError("border cells must be obstacle")
        if not _single_free_component(self.cells):
            raise ValueError("free cells must form one connected component")


def _single_free_component(cells: np.ndarray) -> bool:
    free = cells == FREE
    if not free.any():
        return False
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])  # 4-connectivity
    _, count = ndimage.label(free, structure=structure)
    return count == 1


def generate_map(spec: MapGeneratorSpec, max_attempts: int = 64) -> OccupancyGrid:
    """Deterministic map build: place rooms, connect them with corridors, then
    accept only layouts that meet connectivity and the suite's free-area band."""
    for attempt in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, attempt, 0x4D41]))
        cells = _build_layout(spec, rng)
        if cells is None:
            continue
        free_count = int((cells == FREE).sum())
        if not spec.area_min_cells <= free_count <= spec.area_max_cells:
            continue
        if not _single_free_component(cells):
            continue
        grid = OccupancyGrid(cells, spec.cell_size)
        grid.check_invariants()
        return grid
    raise GenerationError(f"no acceptable layout for suite={spec.suite} seed={spec.seed} "
                          f"after {max_attempts} attempts")


def _build_layout(spec: MapGeneratorSpec, rng: np.random.Generator):
    m = spec.side
    cells = np.full((m, m), OBSTACLE, dtype=np.uint8)
    n_rooms = int(rng.integers(spec.rooms_min, spec.rooms_max + 1))
    rooms = []
    inset = 2
    for _ in range(n_rooms):
        placed = False
        for _ in range(300):
            h = int(rng.integers(spec.room_cells_min, spec.room_cells_max + 1))
            w = int(rng.integers(spec.room_cells_min, spec.room_cells_max + 1))
            r0 = int(rng.integers(inset, m - inset - h))
            c0 = int(rng.integers(inset, m - inset - w))
            if _region_clear(cells, r0, c0, h, w, margin=2):
                cells[r0:r0 + h, c0:c0 + w] = FREE
                if spec.suite == "ood" and rng.random() < 0.5:
                    # L-shaped room: fuse a second overlapping rectangle
                    h2 = int(rng.integers(spec.room_cells_min // 2, h + 1))
                    w2 = int(rng.integers(spec.room_cells_min // 2, w + 1))
                    r2 = min(max(inset, r0 + int(rng.integers(-h2 // 2, h))), m - inset - h2)
                    c2 = min(max(inset, c0 + int(rng.integers(-w2 // 2, w))), m - inset - w2)
                    cells[r2:r2 + h2, c2:c2 + w2] = FREE
                rooms.append((r0 + h // 2, c0 + w // 2))
                placed = True
                break
        if not placed:
            return None
    if len(rooms) < 2:
        return None
    order = rng.permutation(len(rooms))
    for i in range(len(order) - 1):
        _carve_corridor(cells, rooms[order[i]], rooms[order[i + 1]], spec, rng)
    extra_links = 2 if spec.suite == "ood" else 0
    for _ in range(extra_links):
        a, b = rng.choice(len(rooms), size=2, replace=False)
        _carve_corridor(cells, rooms[a], rooms[b], spec, rng)
    return cells


def _region_clear(cells, r0, c0, h, w, margin) -> bool:
    r1, c1 = r0 + h, c0 + w
    window = cells[max(0, r0 - margin):r1 + margin, max(0, c0 - margin):c1 + margin]
    return bool((window == OBSTACLE).all())


def _carve_block(cells, r, c, width):
    m = cells.shape[0]
    half = width // 2
    r0, r1 = max(1, r - half), min(m - 1, r - half + width)
    c0, c1 = max(1, c - half), min(m - 1, c - half + width)
    cells[r0:r1, c0:c1] = FREE


def _carve_corridor(cells, a, b, spec: MapGeneratorSpec, rng) -> None:
    w = spec.corridor_width
    if spec.maze_irregularity <= 0:
        # L-corridor: horizontal leg then vertical leg
        r, c = a
        for cc in range(min(c, b[1]), max(c, b[1]) + 1):
            _carve_block(cells, r, cc, w)
        for rr in range(min(r, b[0]), max(r, b[0]) + 1):
            _carve_block(cells, rr, b[1], w)
        return
    # drifting corridor: march toward the target, turning at random
    r, c = a
    heading = rng.integers(4)  # 0 E, 1 S, 2 W, 3 N
    moves = ((0, 1), (1, 0), (0, -1), (-1, 0))
    for _ in range(6 * spec.side):
        _carve_block(cells, r, c, w)
        if (r, c) == b:
            return
        if rng.random() < spec.maze_irregularity:
            heading = int(rng.integers(4))
        else:
            # bias toward the target on the dominant axis
            dr, dc = b[0] - r, b[1] - c
            heading = (1 if dr > 0 else 3) if abs(dr) > abs(dc) else (0 if dc > 0 else 2)
        dr, dc = moves[heading]
        r = min(max(1, r + dr), spec.side - 2)
        c = min(max(1, c + dc), spec.side - 2)
    # random walk expired; finish with a straight L-leg so rooms stay linked
    for cc in range(min(c, b[1]), max(c, b[1]) + 1):
        _carve_block(cells, r, cc, w)
    for rr in range(min(r, b[0]), max(r, b[0]) + 1):
        _carve_block(cells, rr, b[1], w)


def make_single_room(side: int, room_h: int, room_w: int, cell_size: float,
                     origin: tuple | None = None) -> OccupancyGrid:
    """One rectangular free room in an obstacle field (diagnostic fixture)."""
    cells = np.full((side, side), OBSTACLE, dtype=np.uint8)
    if origin is None:
        origin = ((side - room_h) // 2, (side - room_w) // 2)
    r0, c0 = origin
    if r0 < 1 or c0 < 1 or r0 + room_h > side - 1 or c0 + room_w > side - 1:
        raise ValueError("room does not fit inside the border")
    cells[r0:r0 + room_h, c0:c0 + room_w] = FREE
    grid = OccupancyGrid(cells, cell_size)
    grid.check_invariants()
    return grid


# ---- plain-text map format ------------------------------------------------

def save_map_text(path, grid: OccupancyGrid) -> None:
    """First line: side and cell size; then one row per line, '#' obstacle."""
    with open(path, "w") as fh:
        fh.write(f"{grid.side} {grid.cell_size}\n")
        for row in grid.cells:
            fh.write("".join("#" if v == OBSTACLE else "." for v in row) + "\n")


def load_map_text(path) -> OccupancyGrid:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: bad header, expected 'M cell_size'")
        side, cell_size = int(header[0]), float(header[1])
        rows = []
        for _ in range(side):
            line = fh.readline().rstrip("\n")
            if len(line) != side:
                raise ValueError(f"{path}: row length {len(line)} != side {side}")
            rows.append([OBSTACLE if ch == "#" else FREE for ch in line])
    return OccupancyGrid(np.array(rows, dtype=np.uint8), cell_size)
