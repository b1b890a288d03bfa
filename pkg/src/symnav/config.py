"""Flat key=value configuration with namespaced keys (env.M, train.gamma, ...).

Values are coerced to the type of the corresponding default.  Unknown keys
are rejected so typos fail loudly.
"""

from __future__ import annotations

import hashlib

DEFAULTS = {
    # environment
    "env.M": 128,
    "env.cell_size": 0.25,              # metres per cell
    "env.v": 32,                        # egocentric observation extent
    "env.G": 64,                        # policy-state extent
    "env.episode_steps": 1000,
    "env.sensor_fov_deg": 90.0,
    "env.sensor_rays": 90,
    "env.sensor_range_cells": 16.0,
    "env.range_noise_m": 0.0,
    "env.pose_noise_cells": 0.0,        # odometry drift per step
    "env.heading_noise_deg": 0.0,
    "env.start_heading": "east",        # east | random
    # map generation suites
    "map.iid_rooms_min": 3,
    "map.iid_rooms_max": 6,
    "map.iid_area_min_m2": 40.0,
    "map.iid_area_max_m2": 80.0,
    "map.iid_room_cells_min": 8,
    "map.iid_room_cells_max": 20,
    "map.ood_rooms_min": 8,
    "map.ood_rooms_max": 14,
    "map.ood_area_min_m2": 120.0,
    "map.ood_area_max_m2": 250.0,
    "map.ood_room_cells_min": 10,
    "map.ood_room_cells_max": 24,
    "map.corridor_width": 2,
    "map.maze_irregularity": 0.35,      # corridor turn probability (OOD only)
    # networks
    "net.variant": "s-ans",
    "net.widths": "8,16,32,32,32",
    "net.kernel": 3,
    "net.actor_hidden": 512,
    "net.critic_hidden": 128,
    "net.sgpp_R": 0,                    # 0: use the head's spatial extent
    "net.sgpp_A": 0,                    # 0: spatial extent rounded up to 4k
    "net.dtype": "float64",             # float64 | float32
    # planning and motion
    "plan.unknown_cost": 1.5,
    "plan.subsample_interval": 4,
    "plan.decision_interval": 25,
    "plan.arrive_radius": 1.0,
    "motion.step_m": 0.25,
    "motion.turn_deg": 15.0,
    "motion.turn_threshold_deg": 15.0,
    # training
    "train.gamma": 0.99,
    "train.value_coef": 0.5,
    "train.entropy_coef": 0.01,
    "train.lr": 2.5e-4,
    "train.optimizer": "sgd",           # sgd | adam
    "train.adam_beta1": 0.9,
    "train.adam_beta2": 0.999,
    "train.adam_eps": 1e-8,
    "train.rollout": 8,                 # global decisions per env per update
    "train.envs": 8,
    "train.updates": 150,
    "train.grad_clip": 0.5,
    "train.seed": 0,
    # evaluation
    "eval.runs": 5,
    "eval.steps": 1000,
    "probe.Q": 200,
    "probe.K": 24,
}

# keys that determine network construction; hashed into checkpoints
NET_KEYS = ("env.G", "net.variant", "net.widths", "net.kernel",
            "net.actor_hidden", "net.critic_hidden", "net.sgpp_R", "net.sgpp_A")


class ConfigError(ValueError):
    pass


class Config:
    """Typed view over the flat key space."""

    def __init__(self, overrides: dict | None = None):
        self._values = dict(DEFAULTS)
        if overrides:
            for k, v in overrides.items():
                self.set(k, v)

    def __getitem__(self, key: str):
        try:
            return self._values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        default = DEFAULTS[key]
        try:
            if isinstance(default, bool):
                coerced = _parse_bool(value)
            elif isinstance(default, int):
                coerced = int(value)
            elif isinstance(default, float):
                coerced = float(value)
            else:
                coerced = str(value)
        except (TypeError, ValueError):
            raise ConfigError(f"cannot coerce {value!r} for key {key!r} "
                              f"(expected {type(default).__name__})") from None
        self._values[key] = coerced

    def update_from_file(self, path) -> None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                self.set(key, value)

    def update_pairs(self, pairs) -> None:
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"expected key=value, got {pair!r}")
            key, value = pair.split("=", 1)
            self.set(key.strip(), value.strip())

    def widths(self) -> tuple:
        try:
            parts = tuple(int(p) for p in str(self["net.widths"]).split(","))
        except ValueError:
            raise ConfigError(f"net.widths must be comma-separated ints, got {self['net.widths']!r}")
        if len(parts) != 5 or any(p < 1 for p in parts):
            raise ConfigError(f"net.widths needs 5 positive entries, got {parts}")
        return parts

    def net_hash(self) -> str:
        text = ";".join(f"{k}={self._values[k]}" for k in NET_KEYS)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def as_dict(self) -> dict:
        return dict(self._values)


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)
