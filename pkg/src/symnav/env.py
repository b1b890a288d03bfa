"""Grid-world exploration environment: ray-cast sensing, map registration,
coverage reward and policy-state construction.

Conventions: map arrays are indexed [row, col]; a pose holds continuous cell
coordinates (x along columns, y along rows) and a heading in radians with
direction (cos h, sin h).  The cell containing (x, y) is (floor(y), floor(x)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .mapgen import OBSTACLE, OccupancyGrid
from .networks import PolicyState
from .tensor import ShapeError

FORWARD, TURN_LEFT, TURN_RIGHT = "forward", "turn_left", "turn_right"
ACTIONS = (FORWARD, TURN_LEFT, TURN_RIGHT)

# substep length for ray marching and motion, in cells
_SUBSTEP = 0.25


@dataclass
class AgentPose:
    x: float
    y: float
    heading: float

    def cell(self) -> tuple:
        return (int(math.floor(self.y)), int(math.floor(self.x)))


@dataclass
class EgoObservation:
    """Egocentric top view [2, v, v]: channel 0 obstacles, channel 1 explored.
    The agent sits at the centre pixel facing the +column direction."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 2 or self.data.shape[1] != self.data.shape[2]:
            raise ShapeError(f"ego observation must be [2,v,v], got {self.data.shape}")


@dataclass
class GlobalMapState:
    """Global map [4, M, M]: obstacles, explored, agent-position disk, path."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 4 or self.data.shape[1] != self.data.shape[2]:
            raise ShapeError(f"global map must be [4,M,M], got {self.data.shape}")

    @property
    def side(self) -> int:
        return self.data.shape[1]

    def copy(self) -> "GlobalMapState":
        return GlobalMapState(self.data.copy())


@dataclass
class SensorConfig:
    fov_rad: float
    max_range_cells: float
    range_noise_cells: float = 0.0
    v: int = 32

    @staticmethod
    def from_config(cfg: Config) -> "SensorConfig":
        return SensorConfig(
            fov_rad=math.radians(cfg["env.sensor_fov_deg"]),
            max_range_cells=cfg["env.sensor_range_cells"],
            range_noise_cells=cfg["env.range_noise_m"] / cfg["env.cell_size"],
            v=cfg["env.v"],
        )


_WEDGE_CACHE: dict = {}


def _wedge_table(sensor: SensorConfig):
    """Per-ego-pixel sightlines for the sensor wedge.

    Every ego pixel inside the field of view and range is one ray; its
    sightline is sampled at substeps so occlusion can be tested cell by cell.
    Returns pixel indices, pixel distances, substep offsets (ego frame, padded
    by repeating the last point) and per-substep distances.
    """
    key = (sensor.v, round(sensor.fov_rad, 9), round(sensor.max_range_cells, 6))
    cached = _WEDGE_CACHE.get(key)
    if cached is not None:
        return cached
    v = sensor.v
    centre = (v - 1) / 2.0
    rows, cols = np.mgrid[0:v, 0:v]
    fx = cols - centre
    fy = rows - centre
    rho = np.sqrt(fx ** 2 + fy ** 2)
    ang = np.arctan2(fy, fx)
    half = sensor.fov_rad / 2.0
    inside = (rho <= sensor.max_range_cells + 1e-9) & \
             ((np.abs(ang) <= half + 1e-9) | (rho < 1e-9))
    pr, pc = rows[inside], cols[inside]
    p_fx, p_fy, p_rho = fx[inside], fy[inside], rho[inside]

    n_sub = max(1, int(math.ceil(sensor.max_range_cells / _SUBSTEP)))
    t = np.arange(1, n_sub + 1) * _SUBSTEP                        # [S]
    frac = np.minimum(t[None, :], p_rho[:, None])                 # clamp at own pixel
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(p_rho > 0, p_fx / np.maximum(p_rho, 1e-12), 0.0)
        uy = np.where(p_rho > 0, p_fy / np.maximum(p_rho, 1e-12), 0.0)
    off = np.stack([ux[:, None] * frac, uy[:, None] * frac], axis=-1)  # [P, S, 2]
    entry = (pr, pc, p_rho, off, frac)
    _WEDGE_CACHE[key] = entry
    return entry


def sense(grid: OccupancyGrid, pose: AgentPose, sensor: SensorConfig,
          rng: np.random.Generator | None = None) -> EgoObservation:
    """Ray-cast the sensor wedge: every ego pixel in the field of view is
    marked explored when its sightline reaches it, and marked as obstacle when
    the pixel itself holds the first wall hit.  Optional Gaussian noise on the
    per-ray range estimate."""
    v = sensor.v
    obs = np.zeros((2, v, v))
    pr, pc, p_rho, off, frac = _wedge_table(sensor)
    cos_h, sin_h = math.cos(pose.heading), math.sin(pose.heading)
    wx = pose.x + off[..., 0] * cos_h - off[..., 1] * sin_h       # [P, S]
    wy = pose.y + off[..., 0] * sin_h + off[..., 1] * cos_h
    m = grid.side
    ci = np.clip(np.floor(wx).astype(int), 0, m - 1)
    ri = np.clip(np.floor(wy).astype(int), 0, m - 1)
    blocked = grid.cells[ri, ci] == OBSTACLE                      # [P, S]

    n_pix = len(pr)
    any_hit = blocked.any(axis=1)
    first = np.argmax(blocked, axis=1)
    d_obs = np.where(any_hit, frac[np.arange(n_pix), first], np.inf)

    if rng is not None and sensor.range_noise_cells > 0:
        noisy = np.maximum(d_obs + rng.normal(0.0, sensor.range_noise_cells, n_pix), _SUBSTEP)
        d = np.where(any_hit, noisy, d_obs)
        explored = p_rho <= d + _SUBSTEP / 2
        wall = explored & any_hit & (np.abs(p_rho - d) <= 2 * _SUBSTEP)
    else:
        # a wall pixel is visible iff the first hit along its sightline is
        # its own cell; free pixels need a clear sightline all the way
        own_wall = any_hit & (ri[np.arange(n_pix), first] == ri[:, -1]) \
                           & (ci[np.arange(n_pix), first] == ci[:, -1])
        explored = (p_rho <= d_obs + _SUBSTEP / 2) | own_wall
        wall = own_wall
    obs[1][pr[explored], pc[explored]] = 1.0
    obs[0][pr[wall], pc[wall]] = 1.0
    centre = int((v - 1) / 2.0)
    obs[1, centre, centre] = 1.0  # the agent's own cell is explored
    return EgoObservation(obs)


def register(obs: EgoObservation, pose: AgentPose, h: GlobalMapState,
             pose_noise: tuple = (0.0, 0.0),
             rng: np.random.Generator | None = None) -> GlobalMapState:
    """Stamp an egocentric observation into the global map at the given pose
    (optionally perturbed), through an inverse warp so no holes appear.
    The explored mask only grows; agent and path channels are refreshed."""
    if pose_noise != (0.0, 0.0) and rng is not None:
        pose = AgentPose(pose.x + rng.normal(0, pose_noise[0]),
                         pose.y + rng.normal(0, pose_noise[0]),
                         pose.heading + rng.normal(0, pose_noise[1]))
    out = h.copy()
    v = obs.data.shape[1]
    centre = (v - 1) / 2.0
    m = h.side
    cos_h, sin_h = math.cos(pose.heading), math.sin(pose.heading)

    # forward pass: each ego pixel stamps the exact world cell it sensed
    # (same floor(pose + R * offset) the sensor uses), so wall and free
    # evidence never smears across cells.  Free evidence corrects stale
    # obstacle marks; obstacles win within one observation.
    pix_r, pix_c = np.nonzero(obs.data[1] >= 0.5)
    if pix_r.size:
        fx = pix_c - centre
        fy = pix_r - centre
        wr = np.floor(pose.y + fx * sin_h + fy * cos_h).astype(int)
        wc = np.floor(pose.x + fx * cos_h - fy * sin_h).astype(int)
        ok = (wr >= 0) & (wr < m) & (wc >= 0) & (wc < m)
        wall_px = obs.data[0][pix_r, pix_c] >= 0.5
        free = ok & ~wall_px
        wall = ok & wall_px
        out.data[0][wr[free], wc[free]] = 0.0
        out.data[0][wr[wall], wc[wall]] = 1.0
        out.data[1][wr[ok], wc[ok]] = 1.0

    # inverse fill for the explored channel only: the rotated pixel grid can
    # leave pinholes under the forward map, and explored is monotone anyway
    reach = centre + 1
    r0, r1 = max(0, int(pose.y - reach)), min(m, int(pose.y + reach) + 1)
    c0, c1 = max(0, int(pose.x - reach)), min(m, int(pose.x + reach) + 1)
    rows, cols = np.mgrid[r0:r1, c0:c1]
    dx = (cols + 0.5) - pose.x
    dy = (rows + 0.5) - pose.y
    fx = dx * cos_h + dy * sin_h
    fy = -dx * sin_h + dy * cos_h
    expl = _bilinear(obs.data[1], centre + fy, centre + fx) >= 0.5
    out.data[1][rows[expl], cols[expl]] = 1.0

    # small disk marking the agent position, refreshed every step
    out.data[2] = 0.0
    dr0, dr1 = max(0, int(pose.y) - 2), min(m, int(pose.y) + 3)
    dc0, dc1 = max(0, int(pose.x) - 2), min(m, int(pose.x) + 3)
    drows, dcols = np.mgrid[dr0:dr1, dc0:dc1]
    disk = ((drows + 0.5 - pose.y) ** 2 + (dcols + 0.5 - pose.x) ** 2) <= 1.0
    out.data[2, dr0:dr1, dc0:dc1][disk] = 1.0
    cell = (min(max(int(pose.y), 0), m - 1), min(max(int(pose.x), 0), m - 1))
    out.data[3][cell] = 1.0
    return out


def _bilinear(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear samples at continuous positions; zero outside the image."""
    h, w = img.shape
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    fr, fc = rows - r0, cols - c0
    out = np.zeros(rows.shape)
    for dr, dc, wt in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                       (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        rr, cc = r0 + dr, c0 + dc
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        out += np.where(ok, img[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)] * wt, 0.0)
    return out


def coverage(h: GlobalMapState, cell_size: float) -> float:
    """Explored area in square metres (explored-channel mass)."""
    return float(h.data[1].sum()) * cell_size ** 2


def step_reward(h_before: GlobalMapState, h_after: GlobalMapState, cell_size: float) -> float:
    return coverage(h_after, cell_size) - coverage(h_before, cell_size)


def make_policy_state(h: GlobalMapState, pose: AgentPose, g: int) -> PolicyState:
    """Local crop around the agent stacked on the area-averaged global view."""
    m = h.side
    if m % g != 0:
        raise ShapeError(f"global side {m} must be a multiple of the state side {g}")
    f = m // g
    global_view = h.data.reshape(4, g, f, g, f).mean(axis=(2, 4))

    local = np.zeros((4, g, g))
    r_c, c_c = int(round(pose.y)), int(round(pose.x))
    r0, c0 = r_c - g // 2, c_c - g // 2
    src_r0, src_r1 = max(0, r0), min(m, r0 + g)
    src_c0, src_c1 = max(0, c0), min(m, c0 + g)
    if src_r1 > src_r0 and src_c1 > src_c0:
        local[:, src_r0 - r0:src_r1 - r0, src_c0 - c0:src_c1 - c0] = \
            h.data[:, src_r0:src_r1, src_c0:src_c1]
    return PolicyState(np.clip(np.concatenate([local, global_view], axis=0), 0.0, 1.0))


@dataclass
class EpisodeRecord:
    """Seeded trajectory trace: per-step pose/coverage/reward plus the goals."""

    seed: int
    steps: list = field(default_factory=list)    # (step, x, y, heading, coverage_m2, reward)
    goals: list = field(default_factory=list)    # (step, row, col, fallback)

    def final_coverage(self) -> float:
        return self.steps[-1][4] if self.steps else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("step,x,y,heading,coverage_m2,reward\n")
            for row in self.steps:
                fh.write("%d,%.6f,%.6f,%.6f,%.6f,%.6f\n" % row)


class ExplorationEnv:
    """One agent exploring one grid; owns its RNG and noise state.

    With zero noise an episode is a deterministic function of (grid, seed).
    """

    def __init__(self, grid: OccupancyGrid, cfg: Config, seed: int = 0):
        self.grid = grid
        self.cfg = cfg
        self.sensor = SensorConfig.from_config(cfg)
        self.cell_size = cfg["env.cell_size"]
        self.step_cells = cfg["motion.step_m"] / self.cell_size
        self.turn_rad = math.radians(cfg["motion.turn_deg"])
        self.pose_noise_cells = cfg["env.pose_noise_cells"]
        self.heading_noise_rad = math.radians(cfg["env.heading_noise_deg"])
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE17]))
        self.seed = seed
        self.pose: AgentPose | None = None
        self.h: GlobalMapState | None = None
        self.steps = 0
        self._drift = np.zeros(3)   # dx, dy, dheading accumulated odometry error

    # ---- lifecycle -------------------------------------------------------

    def reset(self, start_pose: AgentPose | None = None) -> GlobalMapState:
        if start_pose is not None:
            self.pose = AgentPose(start_pose.x, start_pose.y, start_pose.heading)
        else:
            free = np.argwhere(_eroded_free(self.grid))
            idx = int(self.rng.integers(len(free)))
            r, c = free[idx]
            if self.cfg["env.start_heading"] == "random":
                heading = float(self.rng.uniform(0, 2 * math.pi))
            else:
                heading = 0.0
            self.pose = AgentPose(c + 0.5, r + 0.5, heading)
        self.h = GlobalMapState(np.zeros((4, self.grid.side, self.grid.side)))
        self.steps = 0
        self._drift[:] = 0.0
        self._observe()
        return self.h

    def est_pose(self) -> AgentPose:
        return AgentPose(self.pose.x + self._drift[0], self.pose.y + self._drift[1],
                         self.pose.heading + self._drift[2])

    def _observe(self) -> None:
        noise_rng = self.rng if self.sensor.range_noise_cells > 0 else None
        obs = sense(self.grid, self.pose, self.sensor, rng=noise_rng)
        self.h = register(obs, self.est_pose(), self.h)

    # ---- dynamics ----------------------------------------------------------

    def step(self, action: str) -> float:
        """Apply one action, sense, register; returns the coverage gain (m^2)."""
        if action == FORWARD:
            self._move_forward()
        elif action == TURN_LEFT:
            self.pose.heading += self.turn_rad
        elif action == TURN_RIGHT:
            self.pose.heading -= self.turn_rad
        else:
            raise ValueError(f"unknown action {action!r}")
        self.pose.heading = math.atan2(math.sin(self.pose.heading), math.cos(self.pose.heading))
        if self.pose_noise_cells > 0:
            self._drift[0] += self.rng.normal(0, self.pose_noise_cells)
            self._drift[1] += self.rng.normal(0, self.pose_noise_cells)
        if self.heading_noise_rad > 0:
            self._drift[2] += self.rng.normal(0, self.heading_noise_rad)
        before = coverage(self.h, self.cell_size)
        self._observe()
        self.steps += 1
        return coverage(self.h, self.cell_size) - before

    def _move_forward(self) -> None:
        # march in substeps; on contact clamp the colliding axis and slide
        # along the free one, so corridor corners do not wedge the agent
        dx = math.cos(self.pose.heading) * _SUBSTEP
        dy = math.sin(self.pose.heading) * _SUBSTEP
        n = max(1, int(round(self.step_cells / _SUBSTEP)))
        free = self.grid.free_mask()
        for _ in range(n):
            nx, ny = self.pose.x + dx, self.pose.y + dy
            if free[int(math.floor(ny)), int(math.floor(nx))]:
                self.pose.x, self.pose.y = nx, ny
            elif free[int(math.floor(self.pose.y)), int(math.floor(nx))]:
                self.pose.x = nx
            elif free[int(math.floor(ny)), int(math.floor(self.pose.x))]:
                self.pose.y = ny
            else:
                break

    # ---- views -----------------------------------------------------------

    def policy_state(self) -> PolicyState:
        return make_policy_state(self.h, self.est_pose(), self.cfg["env.G"])

    def coverage_m2(self) -> float:
        return coverage(self.h, self.cell_size)

    def explored_free_fraction(self) -> float:
        """Fraction of the grid's free cells marked explored."""
        free = self.grid.free_mask()
        explored = self.h.data[1] >= 0.5
        return float((explored & free).sum() / free.sum())


def _eroded_free(grid: OccupancyGrid) -> np.ndarray:
    """Free cells whose 8-neighbourhood is also free (safe start positions)."""
    free = grid.free_mask()
    out = free.copy()
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            out &= np.roll(np.roll(free, dr, axis=0), dc, axis=1)
    return out
