"""Invariance metrics and coverage evaluation.

The rotation probe rotates policy states about their centre: exact index
permutations when every probe angle is a quarter turn, otherwise bilinear
resampling with an inscribed-disk mask applied to every rotation including
the identity, so resampling artefacts hit all entries uniformly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .config import Config
from .driver import (FBEGoalPolicy, FBERLGoalPolicy, NetworkGoalPolicy,
                     RandomGoalPolicy, run_episode)
from .env import EpisodeRecord, ExplorationEnv
from .mapgen import generate_map, spec_for_suite
from .networks import GlobalPolicyNetwork, PolicyState


def _disk_mask(side: int) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side]
    c = (side - 1) / 2.0
    return (((yy - c) ** 2 + (xx - c) ** 2) <= c ** 2).astype(float)


def rotate_state_channels(data: np.ndarray, angle_deg: float, mask: np.ndarray) -> np.ndarray:
    """Bilinear rotation of every channel about the map centre, masked to the
    inscribed disk and clipped back to the unit range."""
    out = np.stack([ndimage.rotate(ch, angle_deg, reshape=False, order=1, mode="constant")
                    for ch in data])
    return np.clip(out, 0.0, 1.0) * mask


@dataclass
class RotationProbe:
    """Base states plus the machinery to produce their K rotations."""

    states: list                      # base PolicyStates
    K: int
    exact: bool                       # every probe angle is a quarter turn
    mask: np.ndarray | None = None

    @property
    def Q(self) -> int:
        return len(self.states)

    def rotated(self, i: int, k: int) -> PolicyState:
        base = self.states[i].data
        if self.exact:
            quarter = (k * 4 // self.K) % 4
            return PolicyState(np.ascontiguousarray(np.rot90(base, quarter, axes=(-2, -1))))
        return PolicyState(rotate_state_channels(base, 360.0 * k / self.K, self.mask))


def make_probe(states, k: int) -> RotationProbe:
    if not states:
        raise ValueError("a rotation probe needs at least one state")
    if k < 1:
        raise ValueError(f"rotation count must be positive, got {k}")
    exact = 4 % k == 0           # K in {1, 2, 4}: all angles are quarter turns
    mask = None if exact else _disk_mask(states[0].data.shape[-1])
    return RotationProbe(list(states), k, exact, mask)


def collect_probe_states(suite: str, cfg: Config, q: int, seed: int,
                         episodes: int = 6) -> list:
    """Sample policy states uniformly across frontier-exploration episodes on
    seeded maps; the same probe serves every model under comparison."""
    states = []
    for ep in range(episodes):
        map_seed = int(np.random.SeedSequence([seed, ep, 0x9E0B]).generate_state(1)[0])
        grid = generate_map(spec_for_suite(cfg, suite, map_seed))
        env = ExplorationEnv(grid, cfg, seed=map_seed)
        env.reset()
        policy = FBEGoalPolicy(np.random.default_rng(np.random.SeedSequence([seed, ep, 1])))
        run_episode(env, policy, cfg["eval.steps"], cfg,
                    state_hook=lambda e: states.append(e.policy_state()))
    if len(states) < q:
        return states
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF00D]))
    picks = rng.choice(len(states), size=q, replace=False)
    return [states[i] for i in sorted(picks)]


def rotation_std(critic_fn, probe: RotationProbe, mean_mode: str = "arithmetic") -> float:
    """Spread of the critic output across each state's rotations, averaged
    over states: (1/Q) * sum_i sqrt(sum_k (y_i^k - ybar_i)^2).

    ``mean_mode`` selects the centring: "arithmetic" divides the sum of the K
    outputs by K; "legacy" reproduces a divisor of K-1 over the same K terms.
    """
    if probe.Q == 0:
        raise ValueError("empty probe")
    if mean_mode not in ("arithmetic", "legacy"):
        raise ValueError(f"unknown mean mode {mean_mode!r}")
    total = 0.0
    for i in range(probe.Q):
        ys = np.array([critic_fn(probe.rotated(i, k)) for k in range(probe.K)])
        denom = probe.K if mean_mode == "arithmetic" else probe.K - 1
        centre = ys.sum() / max(denom, 1)
        total += math.sqrt(float(((ys - centre) ** 2).sum()))
    return total / probe.Q


def feature_similarity_matrix(feature_fn, probe: RotationProbe) -> np.ndarray:
    """Mean cosine similarity between rotated-state features, entry (a, b) =
    mean over states of cos(xi(s_i^a), xi(s_i^b)); zero vectors contribute 0."""
    k = probe.K
    acc = np.zeros((k, k))
    for i in range(probe.Q):
        feats = [np.asarray(feature_fn(probe.rotated(i, kk)), dtype=np.float64)
                 for kk in range(k)]
        norms = [float(np.linalg.norm(f)) for f in feats]
        for a in range(k):
            for b in range(a, k):
                if norms[a] == 0.0 or norms[b] == 0.0:
                    sim = 0.0
                else:
                    sim = float(feats[a] @ feats[b] / (norms[a] * norms[b]))
                acc[a, b] += sim
                if a != b:
                    acc[b, a] += sim
    return acc / probe.Q


def mean_off_diagonal(matrix: np.ndarray) -> float:
    k = matrix.shape[0]
    if k < 2:
        return 0.0
    mask = ~np.eye(k, dtype=bool)
    return float(matrix[mask].mean())


@dataclass
class MetricReport:
    """Invariance metrics for one model on one probe."""

    variant: str
    K: int
    Q: int
    std_arithmetic: float
    std_legacy: float
    similarity: np.ndarray
    coverage_mean: float | None = None
    coverage_std: float | None = None

    def __post_init__(self):
        k = self.similarity.shape[0]
        if self.similarity.shape != (k, k):
            raise ValueError("similarity matrix must be square")
        if not np.allclose(self.similarity, self.similarity.T, atol=1e-9):
            raise ValueError("similarity matrix must be symmetric")

    @property
    def avg_off_diagonal(self) -> float:
        return mean_off_diagonal(self.similarity)

    def write_similarity_csv(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.similarity:
                fh.write(",".join(f"{v:.9f}" for v in row) + "\n")

    def write_summary_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("variant,K,Q,rotation_std,rotation_std_legacy,avg_offdiag_similarity\n")
            fh.write(f"{self.variant},{self.K},{self.Q},{self.std_arithmetic:.9f},"
                     f"{self.std_legacy:.9f},{self.avg_off_diagonal:.9f}\n")


def invariance_report(net: GlobalPolicyNetwork, probe: RotationProbe) -> MetricReport:
    """Both rotation-std centrings and the similarity matrix from a single
    forward pass per rotated state."""
    from .networks import critic_value_and_features
    k = probe.K
    std_sum = {"arithmetic": 0.0, "legacy": 0.0}
    acc = np.zeros((k, k))
    for i in range(probe.Q):
        ys = np.zeros(k)
        feats = []
        for kk in range(k):
            v, xi = critic_value_and_features(net, probe.rotated(i, kk))
            ys[kk] = v
            feats.append(xi)
        for mode, denom in (("arithmetic", k), ("legacy", max(k - 1, 1))):
            centre = ys.sum() / denom
            std_sum[mode] += math.sqrt(float(((ys - centre) ** 2).sum()))
        norms = [float(np.linalg.norm(f)) for f in feats]
        for a in range(k):
            for b in range(a, k):
                if norms[a] == 0.0 or norms[b] == 0.0:
                    sim = 0.0
                else:
                    sim = float(feats[a] @ feats[b] / (norms[a] * norms[b]))
                acc[a, b] += sim
                if a != b:
                    acc[b, a] += sim
    return MetricReport(
        variant=net.variant.tag,
        K=k,
        Q=probe.Q,
        std_arithmetic=std_sum["arithmetic"] / probe.Q,
        std_legacy=std_sum["legacy"] / probe.Q,
        similarity=acc / probe.Q,
    )


# ---- coverage evaluation ---------------------------------------------------


def make_policy(kind: str, rng: np.random.Generator, net: GlobalPolicyNetwork | None,
                g: int):
    kind = kind.lower()
    if kind == "network":
        if net is None:
            raise ValueError("network policy needs a checkpoint")
        return NetworkGoalPolicy(net, rng)
    if kind == "random":
        return RandomGoalPolicy(g, rng)
    if kind == "fbe":
        return FBEGoalPolicy(rng)
    if kind == "fbe-rl":
        if net is None:
            raise ValueError("fbe-rl needs a checkpoint for the actor map")
        return FBERLGoalPolicy(net, rng)
    raise ValueError(f"unknown policy kind {kind!r}")


@dataclass
class CoverageStats:
    runs: int
    steps: int
    finals: list = field(default_factory=list)
    records: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.finals))

    @property
    def std(self) -> float:
        return float(np.std(self.finals))

    def write_summary_csv(self, path, label: str) -> None:
        with open(path, "w") as fh:
            fh.write("policy,runs,steps,coverage_mean_m2,coverage_std_m2\n")
            fh.write(f"{label},{self.runs},{self.steps},{self.mean:.6f},{self.std:.6f}\n")


def evaluate_coverage(policy_kind: str, suite: str, cfg: Config, runs: int,
                      steps: int, seed: int, net: GlobalPolicyNetwork | None = None,
                      out_dir=None, map_seed_base: int = 10_000) -> CoverageStats:
    """Run ``runs`` seeded episodes (one held-out map each) and report the
    coverage at the final step; optionally write one curve CSV per run."""
    stats = CoverageStats(runs=runs, steps=steps)
    for j in range(runs):
        map_seed = map_seed_base + j
        grid = generate_map(spec_for_suite(cfg, suite, map_seed))
        env = ExplorationEnv(grid, cfg, seed=int(np.random.SeedSequence([seed, j]).generate_state(1)[0]))
        env.reset()
        rng = np.random.default_rng(np.random.SeedSequence([seed, j, 0xE7A1]))
        record = run_episode(env, make_policy(policy_kind, rng, net, cfg["env.G"]),
                             steps, cfg, record=EpisodeRecord(seed=map_seed))
        stats.finals.append(env.coverage_m2())
        stats.records.append(record)
        if out_dir is not None:
            record.write_csv(os.path.join(out_dir, f"run{j:02d}_coverage.csv"))
    return stats
