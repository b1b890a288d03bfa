"""Advantage actor-critic training of the global policy.

Rollouts collect one record per global decision; the update recomputes the
forward pass per sample on a fresh tape, accumulates gradients over the batch
and applies one clipped SGD step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import Config
from .driver import DriverConfig, global_lattice_to_world, navigate_to_goal
from .env import ExplorationEnv
from .mapgen import generate_map, spec_for_suite
from .networks import (GlobalPolicyNetwork, PolicyState, build_network,
                       save_checkpoint)
from .tensor import GradientTape, Tensor


@dataclass
class RolloutBuffer:
    """Per-global-decision records, one row list per environment."""

    states: list = field(default_factory=list)     # [envs][steps] PolicyState
    actions: list = field(default_factory=list)    # [envs][steps] flat goal index
    log_probs: list = field(default_factory=list)  # [envs][steps] float
    values: list = field(default_factory=list)     # [envs][steps] float
    rewards: list = field(default_factory=list)    # [envs][steps] float
    dones: list = field(default_factory=list)      # [envs][steps] bool
    bootstrap: list = field(default_factory=list)  # [envs] value after the horizon

    def n_envs(self) -> int:
        return len(self.states)

    def length(self) -> int:
        return len(self.states[0]) if self.states else 0

    def validate(self) -> None:
        n = self.length()
        for rows in (self.actions, self.log_probs, self.values, self.rewards, self.dones):
            if any(len(r) != n for r in rows):
                raise ValueError("ragged rollout buffer")
        for rows in self.rewards:
            if not all(math.isfinite(r) for r in rows):
                raise ValueError("non-finite reward in rollout")


class EnvPool:
    """Rollout workers, each owning an environment and seeded RNG streams.

    Environments run logically in parallel; a pool of one with a forced env
    index reproduces that worker's stream exactly, which keeps serial and
    parallel collection bit-identical.
    """

    def __init__(self, suite: str, cfg: Config, base_seed: int, n_envs: int,
                 env_indices=None):
        self.suite = suite
        self.cfg = cfg
        self.base_seed = base_seed
        self.indices = list(env_indices) if env_indices is not None else list(range(n_envs))
        self.episode_counts = [0] * len(self.indices)
        self.goal_rngs = [np.random.default_rng(np.random.SeedSequence([base_seed, idx, 0x60A1]))
                          for idx in self.indices]
        self.envs = [self._make_env(slot) for slot in range(len(self.indices))]
        for env in self.envs:
            env.reset()

    def _make_env(self, slot: int) -> ExplorationEnv:
        idx = self.indices[slot]
        episode = self.episode_counts[slot]
        map_seed = int(np.random.SeedSequence([self.base_seed, idx, episode]).generate_state(1)[0])
        grid = generate_map(spec_for_suite(self.cfg, self.suite, map_seed))
        return ExplorationEnv(grid, self.cfg, seed=map_seed)

    def new_episode(self, slot: int) -> None:
        self.episode_counts[slot] += 1
        self.envs[slot] = self._make_env(slot)
        self.envs[slot].reset()


def collect_rollout(net: GlobalPolicyNetwork, pool: EnvPool, length: int,
                    cfg: Config, on_episode_end=None) -> RolloutBuffer:
    """Roll every environment forward by ``length`` global decisions."""
    driver = DriverConfig.from_config(cfg)
    episode_steps = cfg["env.episode_steps"]
    buf = RolloutBuffer()
    for _ in pool.envs:
        for rows in (buf.states, buf.actions, buf.log_probs, buf.values,
                     buf.rewards, buf.dones):
            rows.append([])

    for _ in range(length):
        states = [env.policy_state() for env in pool.envs]
        logits_t, values_t = net.batched_actor_and_value(states)
        logp_rows = T.log_softmax_rows(logits_t).data.astype(np.float64)
        values = values_t.data.astype(np.float64)
        for slot, env in enumerate(pool.envs):
            logp = logp_rows[slot]
            probs = np.exp(logp)
            rng = pool.goal_rngs[slot]
            cum = np.cumsum(probs)
            action = int(min(np.searchsorted(cum, rng.random() * cum[-1], side="right"),
                             probs.size - 1))

            side = net.G_out
            r, cidx = divmod(action, side)
            goal_g = (r * 4 + 1.5, cidx * 4 + 1.5)
            goal_world = global_lattice_to_world(goal_g, env)
            budget = min(driver.decision_interval, episode_steps - env.steps)
            _, reward = navigate_to_goal(env, goal_world, driver, max(budget, 1))

            done = env.steps >= episode_steps
            buf.states[slot].append(states[slot])
            buf.actions[slot].append(action)
            buf.log_probs[slot].append(float(logp[action]))
            buf.values[slot].append(float(values[slot]))
            buf.rewards[slot].append(reward)
            buf.dones[slot].append(done)
            if done:
                if on_episode_end is not None:
                    on_episode_end(env)
                pool.new_episode(slot)

    final_states = [env.policy_state() for env in pool.envs]
    _, boot_t = net.batched_actor_and_value(final_states)
    buf.bootstrap = [float(v) for v in boot_t.data.astype(np.float64)]
    buf.validate()
    return buf


def returns_and_advantages(buf: RolloutBuffer, gamma: float,
                           bootstrap=None) -> tuple:
    """Discounted returns by backward recursion, bootstrapped at the horizon
    unless the episode ended; advantages against the recorded values."""
    if buf.length() == 0:
        raise ValueError("empty rollout buffer")
    boots = bootstrap if bootstrap is not None else buf.bootstrap
    returns, advantages = [], []
    for e in range(buf.n_envs()):
        acc = float(boots[e])
        rets = [0.0] * buf.length()
        for t in reversed(range(buf.length())):
            if buf.dones[e][t]:
                acc = 0.0
            acc = buf.rewards[e][t] + gamma * acc
            rets[t] = acc
        returns.append(rets)
        advantages.append([r - v for r, v in zip(rets, buf.values[e])])
    return returns, advantages


def a2c_loss_for_sample(net: GlobalPolicyNetwork, state: PolicyState, action: int,
                        ret: float, advantage: float, value_coef: float,
                        entropy_coef: float) -> tuple:
    """Per-sample loss tensor plus scalar diagnostics (policy, value, entropy)."""
    logits, v = net.actor_and_value(state)
    logp_map = T.log_softmax_flat(logits)
    logp_a = T.take_flat(logp_map, action)
    probs = T.exp(logp_map)
    entropy = T.neg(T.reduce("sum", T.mul(probs, logp_map)))
    td = T.sub(v, float(ret))
    policy_term = T.mul(logp_a, -float(advantage))
    loss = T.add(T.add(policy_term, T.mul(T.square(td), value_coef)),
                 T.mul(entropy, -entropy_coef))
    return loss, float(policy_term.item()), float(td.item()) ** 2, float(entropy.item())


@dataclass
class UpdateDiagnostics:
    policy_loss: float
    value_loss: float
    entropy: float
    grad_norm: float
    aborted: bool = False


class Optimizer:
    """Clipped gradient step: plain SGD by default, Adam behind config."""

    def __init__(self, cfg: Config):
        self.kind = cfg["train.optimizer"].lower()
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        self.lr = cfg["train.lr"]
        self.clip = cfg["train.grad_clip"]
        self.beta1 = cfg["train.adam_beta1"]
        self.beta2 = cfg["train.adam_beta2"]
        self.eps = cfg["train.adam_eps"]
        self._m = None
        self._v = None
        self._t = 0

    def step(self, params, grads) -> float:
        """Apply one update in place; returns the pre-clip gradient norm."""
        total_sq = sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)
        norm = math.sqrt(total_sq)
        coef = min(1.0, self.clip / (norm + 1e-12)) if self.clip > 0 else 1.0
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p.data = p.data - (self.lr * coef) * g.astype(p.data.dtype)
            return norm
        if self._m is None:
            self._m = [np.zeros_like(p.data, dtype=np.float64) for p in params]
            self._v = [np.zeros_like(p.data, dtype=np.float64) for p in params]
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self._t
        bias2 = 1.0 - b2 ** self._t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            gc = g.astype(np.float64) * coef
            m *= b1
            m += (1 - b1) * gc
            v *= b2
            v += (1 - b2) * gc * gc
            step = self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data = p.data - step.astype(p.data.dtype)
        return norm


def _chunk_loss(net: GlobalPolicyNetwork, states, actions, rets, advs,
                value_coef: float, entropy_coef: float) -> tuple:
    """Summed per-sample losses over a chunk through one batched pass; the
    math matches a2c_loss_for_sample term for term."""
    logits, values = net.batched_actor_and_value(states)
    logp = T.log_softmax_rows(logits)
    logp_a = T.take_rows(logp, actions)
    probs = T.exp(logp)
    ent_rows = T.neg(T.reduce("sum", T.mul(probs, logp), axis=1))
    td = T.sub(values, Tensor(np.asarray(rets, dtype=net.dtype)))
    pol_rows = T.mul(logp_a, Tensor(-np.asarray(advs, dtype=net.dtype)))
    loss_rows = T.add(T.add(pol_rows, T.mul(T.square(td), value_coef)),
                      T.mul(ent_rows, -entropy_coef))
    return T.reduce("sum", loss_rows), pol_rows, td, ent_rows


_UPDATE_CHUNK = 32   # bounds the im2col working set during the batched pass


def a2c_update(net: GlobalPolicyNetwork, buf: RolloutBuffer, cfg: Config,
               returns=None, advantages=None,
               optimizer: Optimizer | None = None) -> UpdateDiagnostics:
    """One clipped optimizer step on the combined loss, averaged over the
    batch.

    Advantages enter the policy term as constants.  A non-finite loss aborts
    the update (no parameter change) and flags the diagnostics.
    """
    if returns is None or advantages is None:
        returns, advantages = returns_and_advantages(buf, cfg["train.gamma"])
    if optimizer is None:
        optimizer = Optimizer(cfg)
    params = [p for _, p in net.parameters()]
    grads = [np.zeros_like(p.data) for p in params]
    n = buf.n_envs() * buf.length()
    states, actions, rets, advs = [], [], [], []
    for e in range(buf.n_envs()):
        states.extend(buf.states[e])
        actions.extend(buf.actions[e])
        rets.extend(returns[e])
        advs.extend(advantages[e])

    pol_sum = val_sum = ent_sum = 0.0
    value_coef, entropy_coef = cfg["train.value_coef"], cfg["train.entropy_coef"]
    for lo in range(0, n, _UPDATE_CHUNK):
        hi = min(lo + _UPDATE_CHUNK, n)
        with GradientTape() as tape:
            loss, pol_rows, td, ent_rows = _chunk_loss(
                net, states[lo:hi], actions[lo:hi], rets[lo:hi], advs[lo:hi],
                value_coef, entropy_coef)
        if not math.isfinite(loss.item()):
            return UpdateDiagnostics(pol_sum / max(n, 1), val_sum / max(n, 1),
                                     ent_sum / max(n, 1), 0.0, aborted=True)
        tape.backward(loss)
        for g, p in zip(grads, params):
            g += tape.gradient(p).data
        pol_sum += float(pol_rows.data.sum())
        val_sum += value_coef * float((td.data.astype(np.float64) ** 2).sum())
        ent_sum += float(ent_rows.data.sum())

    for g in grads:
        g /= n
    norm = optimizer.step(params, grads)
    diag = UpdateDiagnostics(pol_sum / n, val_sum / n, ent_sum / n, norm)
    if not diag.entropy > 0.0:
        raise FloatingPointError("policy entropy collapsed to zero")
    return diag


@dataclass
class TrainResult:
    checkpoint_path: str
    curve: list                      # (update, mean_coverage_m2, policy, value, entropy)


def train(variant: str, suite: str, cfg: Config, out_dir, seed: int | None = None,
          progress=None) -> TrainResult:
    """Full training run: seeded end to end, periodic checkpoints, CSV curve."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    seed = cfg["train.seed"] if seed is None else seed
    net = build_network(variant, cfg, seed=seed)
    pool = EnvPool(suite, cfg, seed, cfg["train.envs"])
    optimizer = Optimizer(cfg)
    updates = cfg["train.updates"]
    finished: list = []
    pool_cov = lambda: float(np.mean([env.coverage_m2() for env in pool.envs]))
    curve = []
    ckpt_every = max(1, updates // 5)
    final_path = os.path.join(out_dir, f"{net.variant.tag.lower()}_{suite}_seed{seed}.ckpt")
    for update in range(1, updates + 1):
        buf = collect_rollout(net, pool, cfg["train.rollout"], cfg,
                              on_episode_end=lambda env: finished.append(env.coverage_m2()))
        diag = a2c_update(net, buf, cfg, optimizer=optimizer)
        if diag.aborted:
            raise FloatingPointError(f"update {update}: non-finite loss, run aborted")
        recent = finished[-cfg["train.envs"]:]
        mean_cov = float(np.mean(recent)) if recent else pool_cov()
        curve.append((update, mean_cov, diag.policy_loss, diag.value_loss, diag.entropy))
        if progress is not None:
            progress(update, curve[-1])
        if update % ckpt_every == 0:
            save_checkpoint(final_path, net)
    save_checkpoint(final_path, net)
    write_curve_csv(os.path.join(out_dir, f"curve_{net.variant.tag.lower()}_{suite}_seed{seed}.csv"),
                    curve)
    return TrainResult(final_path, curve)


def write_curve_csv(path, curve) -> None:
    with open(path, "w") as fh:
        fh.write("update,mean_coverage_m2,policy_loss,value_loss,entropy\n")
        for row in curve:
            fh.write("%d,%.6f,%.6f,%.6f,%.6f\n" % row)
