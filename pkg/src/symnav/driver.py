"""Episode execution: global-decision cadence, path following and the goal
policies (network actor, frontier heuristics, random baseline)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import Config
from .env import FORWARD, EpisodeRecord, ExplorationEnv
from .networks import GlobalPolicyNetwork, actor_forward, sample_goal
from .planning import (GoalChoice, MotionConfig, detect_frontiers,
                       fbe_rl_select_goal, fbe_select_goal, local_step,
                       shortest_path, subsample_short_term_goals)


@dataclass
class DriverConfig:
    decision_interval: int
    subsample_interval: int
    arrive_radius: float
    unknown_cost: float
    motion: MotionConfig

    @staticmethod
    def from_config(cfg: Config) -> "DriverConfig":
        return DriverConfig(
            decision_interval=cfg["plan.decision_interval"],
            subsample_interval=cfg["plan.subsample_interval"],
            arrive_radius=cfg["plan.arrive_radius"],
            unknown_cost=cfg["plan.unknown_cost"],
            motion=MotionConfig.from_config(cfg),
        )


class NetworkGoalPolicy:
    """Sample a long-term goal from the actor's likelihood map."""

    def __init__(self, net: GlobalPolicyNetwork, rng: np.random.Generator):
        self.net = net
        self.rng = rng

    def propose(self, env: ExplorationEnv) -> GoalChoice:
        state = env.policy_state()
        goal_g = sample_goal(actor_forward(self.net, state), self.rng)
        return GoalChoice(global_lattice_to_world(goal_g, env), False)


class RandomGoalPolicy:
    """Uniform goal cell on the actor's lattice; the sanity-floor baseline."""

    def __init__(self, g: int, rng: np.random.Generator):
        self.g = g
        self.rng = rng

    def propose(self, env: ExplorationEnv) -> GoalChoice:
        side = self.g // 4
        r, c = (int(v) for v in self.rng.integers(0, side, 2))
        goal_g = (r * 4 + 1.5, c * 4 + 1.5)
        return GoalChoice(global_lattice_to_world(goal_g, env), False)


class FBEGoalPolicy:
    """Random point on the largest frontier of the local view."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def propose(self, env: ExplorationEnv) -> GoalChoice:
        state = env.policy_state()
        frontier = detect_frontiers(state.data[:4])
        cell, fallback = fbe_select_goal(frontier, self.rng)
        return GoalChoice(local_crop_to_world(cell, env), fallback)


class FBERLGoalPolicy:
    """Frontier selection weighted by the actor's likelihood map."""

    def __init__(self, net: GlobalPolicyNetwork, rng: np.random.Generator):
        self.net = net
        self.rng = rng

    def propose(self, env: ExplorationEnv) -> GoalChoice:
        state = env.policy_state()
        frontier = detect_frontiers(state.data[:4])
        actor_map = actor_forward(self.net, state)
        cell, fallback = fbe_rl_select_goal(frontier, actor_map, self.rng)
        side = actor_map.data.shape[0]
        factor = state.G // side
        half = (factor - 1) / 2.0
        crop_cell = (cell[0] * factor + half, cell[1] * factor + half)
        return GoalChoice(local_crop_to_world(crop_cell, env), fallback)


def global_lattice_to_world(goal_g: tuple, env: ExplorationEnv) -> tuple:
    """Goal on the rescaled-global-view lattice -> continuous world cell coords."""
    f = env.grid.side // env.cfg["env.G"]
    return ((goal_g[0] + 0.5) * f, (goal_g[1] + 0.5) * f)


def local_crop_to_world(cell: tuple, env: ExplorationEnv) -> tuple:
    """Cell on the agent-centred local crop -> continuous world cell coords."""
    g = env.cfg["env.G"]
    pose = env.est_pose()
    r0 = int(round(pose.y)) - g // 2
    c0 = int(round(pose.x)) - g // 2
    return (r0 + cell[0] + 0.5, c0 + cell[1] + 0.5)


def _clamp_cell(p: tuple, side: int) -> tuple:
    return (min(max(int(p[0]), 0), side - 1), min(max(int(p[1]), 0), side - 1))


def navigate_to_goal(env: ExplorationEnv, goal_world: tuple, driver: DriverConfig,
                     max_steps: int, stop_on_arrival: bool = True) -> tuple:
    """Plan toward the goal and follow waypoints for at most ``max_steps``
    env steps.  Replans when progress stalls; a second stall in a row falls
    back to following the dense path cell by cell.  Returns (steps, reward)."""
    goal_cell = _clamp_cell(goal_world, env.grid.side)
    steps_used = 0
    reward = 0.0
    waypoints = _plan(env, goal_cell, driver)
    stall = 0
    replans = 0
    while steps_used < max_steps:
        pose = env.pose
        if stop_on_arrival and math.hypot(pose.y - goal_world[0], pose.x - goal_world[1]) \
                <= driver.arrive_radius:
            break
        while waypoints and math.hypot(pose.y - (waypoints[0][0] + 0.5),
                                       pose.x - (waypoints[0][1] + 0.5)) <= driver.arrive_radius:
            waypoints.pop(0)
        if not waypoints:
            if stop_on_arrival:
                break
            waypoints = _plan(env, goal_cell, driver)
            if not waypoints:
                break
        action = local_step(pose, waypoints[0], driver.motion)
        before = (pose.x, pose.y)
        reward += env.step(action)
        steps_used += 1
        if action == FORWARD and math.hypot(env.pose.x - before[0], env.pose.y - before[1]) < 0.05:
            stall += 1
            if stall >= 3:
                # wedged against a newly seen wall: replan, then go dense
                replans += 1
                interval = 1 if replans > 1 else driver.subsample_interval
                waypoints = _plan(env, goal_cell, driver, interval=interval)
                stall = 0
        else:
            stall = 0
    return steps_used, reward


def _plan(env: ExplorationEnv, goal_cell: tuple, driver: DriverConfig,
          interval: int | None = None) -> list:
    h = env.h
    start = _clamp_cell((env.pose.y, env.pose.x), env.grid.side)
    obstacles = h.data[0].copy()
    explored = h.data[1]
    obstacles[start] = 0.0      # the agent's own cell is traversable
    path = shortest_path(obstacles, explored, start, goal_cell, driver.unknown_cost)
    if path.length() == 0:
        return []
    return subsample_short_term_goals(path, interval or driver.subsample_interval)


def run_episode(env: ExplorationEnv, policy, total_steps: int, cfg: Config,
                record: EpisodeRecord | None = None,
                state_hook=None) -> EpisodeRecord:
    """Drive one episode: a new long-term goal every decision interval or on
    arrival, whichever comes first."""
    driver = DriverConfig.from_config(cfg)
    if record is None:
        record = EpisodeRecord(seed=env.seed)
    _log_step(record, env, 0.0)
    while env.steps < total_steps:
        if state_hook is not None:
            state_hook(env)
        goal_world, fallback = policy.propose(env)
        record.goals.append((env.steps, goal_world[0], goal_world[1], fallback))
        budget = min(driver.decision_interval, total_steps - env.steps)
        before_steps = env.steps
        _, reward = navigate_to_goal(env, goal_world, driver, budget)
        if env.steps == before_steps:     # arrived immediately; burn one step
            reward = env.step(FORWARD)
        _log_step(record, env, reward)
    return record


def _log_step(record: EpisodeRecord, env: ExplorationEnv, reward: float) -> None:
    record.steps.append((env.steps, env.pose.x, env.pose.y, env.pose.heading,
                         env.coverage_m2(), reward))
