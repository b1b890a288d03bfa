"""Self-contained oracle and property checks behind the `selftest` command.

Each check pits a fast path against an independent reference (nested loops,
heapq Dijkstra, matrix algebra, extended precision) or asserts a symmetry
identity computed both ways.  Everything is seeded, so two runs of the suite
produce identical results.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from . import oracles
from . import tensor as T
from .config import Config
from .layers import (IDENTITY, P4Element, blur_pool, group_gconv, init_layer,
                     lifting_gconv, max_pool, orientation_pool, p4_compose,
                     rot90_spatial, transform_p4)
from .mapgen import generate_map, spec_for_suite
from .networks import (PolicyState, build_network, critic_forward,
                       load_checkpoint, save_checkpoint)
from .planning import cost_map_from_state, detect_frontiers, shortest_path
from .sgpp import global_average_pool, sgpp
from .tensor import GradientTape, Tensor


@dataclass
class CheckResult:
    name: str
    passed: bool
    metric: str


def _rot(x, m):
    return np.ascontiguousarray(np.rot90(x, m, axes=(-2, -1)))


def check_matmul_oracle() -> CheckResult:
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(5):
        a, b = rng.standard_normal((4, 6)), rng.standard_normal((6, 3))
        worst = max(worst, float(np.abs(T.matmul(Tensor(a), Tensor(b)).data
                                        - oracles.loop_matmul(a, b)).max()))
    return CheckResult("matmul vs triple-loop oracle", worst <= 1e-12, f"max abs {worst:.1e}")


def check_correlation_oracle() -> CheckResult:
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 3))
        h = int(rng.integers(max(1, k - 2 * padding), 9))
        w = int(rng.integers(max(1, k - 2 * padding), 9))
        x = rng.standard_normal((c_in, h, w))
        f = rng.standard_normal((c_out, c_in, k, k))
        fast = T.correlate2d(Tensor(x), Tensor(f), stride=stride, padding=padding).data
        worst = max(worst, float(np.abs(fast - oracles.loop_correlate2d(x, f, stride, padding)).max()))
    return CheckResult("correlate2d vs nested-loop oracle", worst <= 1e-10, f"max abs {worst:.1e}")


def check_gradients_finite_difference() -> CheckResult:
    rng = np.random.default_rng(12)
    x = Tensor.param(rng.standard_normal((2, 6, 6)))
    w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.4)

    def f(t):
        h = T.relu(T.correlate2d(t, w, padding=1))
        return T.reduce("sum", T.square(T.softmax_flat(T.reduce("mean", h, axis=0))))

    with GradientTape() as tape:
        loss = f(x)
    tape.backward(loss)
    fd = T.finite_difference_gradient(f, x, h=1e-4)
    rel = np.abs(tape.gradient(x).data - fd.data) / np.maximum(np.abs(fd.data), 1e-6)
    return CheckResult("tape gradients vs finite differences", float(rel.max()) < 1e-3,
                       f"max rel {rel.max():.1e}")


def check_group_algebra() -> CheckResult:
    rng = np.random.default_rng(13)
    ok = True
    for ma in range(4):
        for mb in range(4):
            got = p4_compose(P4Element(ma), P4Element(mb))
            ok &= (got.m, got.z1, got.z2) == oracles.p4_compose_by_matrix((ma, 0, 0), (mb, 0, 0))
    for _ in range(100):
        ta = (int(rng.integers(4)), int(rng.integers(-5, 6)), int(rng.integers(-5, 6)))
        tb = (int(rng.integers(4)), int(rng.integers(-5, 6)), int(rng.integers(-5, 6)))
        got = p4_compose(P4Element(*ta), P4Element(*tb))
        ok &= (got.m, got.z1, got.z2) == oracles.p4_compose_by_matrix(ta, tb)
    ok &= p4_compose(P4Element(1), P4Element(1).inverse()) == IDENTITY
    return CheckResult("p4 composition vs matrix-product oracle", bool(ok),
                       "16 rotation pairs + 100 translated pairs")


def check_stack_equivariance() -> CheckResult:
    rng = np.random.default_rng(14)
    lift = init_layer("lifting", rng, c_out=2, c_in=3, k=3)
    grp = init_layer("group", rng, c_out=3, c_in=2, k=3)

    def stack(x):
        h = T.relu(lifting_gconv(x, lift, padding=1).data)
        h = blur_pool(h)
        return group_gconv(h, grp, padding=1)

    worst = 0.0
    for _ in range(5):
        x = Tensor(rng.standard_normal((3, 12, 12)))
        base = stack(x)
        for m in range(4):
            got = stack(rot90_spatial(x, m)).data.data
            want = transform_p4(base, m).data.data
            worst = max(worst, float(np.abs(got - want).max()))
    return CheckResult("conv stack p4 equivariance", worst <= 1e-9, f"max abs {worst:.1e}")


def check_blur_pool() -> CheckResult:
    rng = np.random.default_rng(15)
    const = blur_pool(Tensor(np.full((2, 8, 8), 1.3))).data
    ok = bool(np.abs(const - 1.3).max() <= 1e-12)
    blur_s, max_s = [], []
    for _ in range(100):
        base = rng.standard_normal((16, 16))
        for _ in range(3):
            base = (base + np.roll(base, 1, 0) + np.roll(base, -1, 0)
                    + np.roll(base, 1, 1) + np.roll(base, -1, 1)) / 5.0
        shifted = np.roll(base, 1, axis=1)
        blur_s.append(_cos(blur_pool(Tensor(base[None])).data,
                           blur_pool(Tensor(shifted[None])).data))
        max_s.append(_cos(max_pool(Tensor(base[None])).data,
                          max_pool(Tensor(shifted[None])).data))
    ok &= float(np.mean(blur_s)) > float(np.mean(max_s))
    return CheckResult("blur pooling: constants and shift consistency", ok,
                       f"blur {np.mean(blur_s):.4f} vs max {np.mean(max_s):.4f}")


def _cos(a, b):
    a, b = a.reshape(-1), b.reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return 0.0 if na == 0 or nb == 0 else float(a @ b / (na * nb))


def check_sgpp() -> CheckResult:
    rng = np.random.default_rng(16)
    worst = 0.0
    for _ in range(5):
        x = rng.standard_normal((2, 32, 32))
        base = sgpp(Tensor(x), 16, 16).data.data
        for m in range(4):
            got = sgpp(Tensor(_rot(x, m)), 16, 16).data.data
            worst = max(worst, float(np.abs(got - base).max()))
    blob = np.zeros((1, 32, 32))
    blob[0, 12:20, 18:26] = 1.0
    a = sgpp(Tensor(blob), 16, 16).data.data
    b = sgpp(Tensor(np.roll(blob, 6, axis=2)), 16, 16).data.data
    shift_gap = float(np.abs(a - b).max())
    ok = worst <= 1e-9 and shift_gap > 0.1
    return CheckResult("polar pooling: rotation-invariant, shift-sensitive", ok,
                       f"rot {worst:.1e}, shift gap {shift_gap:.3f}")


def check_gap_invariance() -> CheckResult:
    rng = np.random.default_rng(17)
    x = rng.standard_normal((2, 6, 6))
    base = global_average_pool(Tensor(x)).data
    ok = True
    for m in range(4):
        ok &= bool(np.array_equal(global_average_pool(Tensor(_rot(x, m))).data, base))
        flipped = np.ascontiguousarray(_rot(x, m)[:, ::-1])
        ok &= bool(np.array_equal(global_average_pool(Tensor(flipped)).data, base))
    return CheckResult("global average pooling dihedral invariance", ok, "8 transforms, bitwise")


def check_critic_symmetries() -> CheckResult:
    cfg = Config({"env.G": 16})
    sans = build_network("s-ans", cfg, seed=1)
    ans = build_network("ans", cfg, seed=1)
    for net in (sans, ans):
        for _, p in net.parameters():
            p.data = p.data * 2.0
    rng = np.random.default_rng(18)
    worst_sans, hits, total = 0.0, 0, 0
    for _ in range(10):
        s = PolicyState((rng.random((8, 16, 16)) > 0.5).astype(float))
        b_s, b_a = critic_forward(sans, s), critic_forward(ans, s)
        gaps = []
        for m in range(1, 4):
            rs = PolicyState(_rot(s.data, m))
            worst_sans = max(worst_sans, abs(critic_forward(sans, rs) - b_s))
            gaps.append(abs(critic_forward(ans, rs) - b_a))
        hits += max(gaps) > 1e-3
        total += 1
    ok = worst_sans <= 1e-5 and hits / total >= 0.9
    return CheckResult("critic rotation symmetry split (polar vs flatten head)", ok,
                       f"sans {worst_sans:.1e}, ans violations {hits}/{total}")


def check_shortest_path_oracle() -> CheckResult:
    cfg = Config()
    rng = np.random.default_rng(19)
    ok = True
    for trial in range(10):
        grid = generate_map(spec_for_suite(cfg, "iid" if trial % 2 == 0 else "ood", trial))
        sub = grid.cells[::4, ::4].astype(float)
        explored = (np.random.default_rng(trial).random(sub.shape) > 0.3).astype(float)
        free = np.argwhere(sub < 0.5)
        start = tuple(free[rng.integers(len(free))])
        goal = tuple(free[rng.integers(len(free))])
        explored[start] = 1.0
        p = shortest_path(sub, explored, start, goal)
        cost_map = cost_map_from_state(sub, explored)
        cost_map[start] = min(cost_map[start], 1.0)
        oracle_cost, dist = oracles.dijkstra_grid(cost_map, start, goal)
        want = oracle_cost if oracle_cost is not None else float(dist[p.cells[-1]])
        ok &= abs(p.cost - want) <= 1e-9
    return CheckResult("shortest path vs heapq Dijkstra oracle", ok, "10 random maps, exact")


def check_frontier_oracle() -> CheckResult:
    rng = np.random.default_rng(20)
    ok = True
    for _ in range(10):
        view = np.zeros((4, 12, 12))
        view[1] = (rng.random((12, 12)) > 0.4).astype(float)
        view[0] = ((rng.random((12, 12)) > 0.8) & (view[1] > 0.5)).astype(float)
        f = detect_frontiers(view)
        ok &= oracles.frontier_definition_check(view[0], view[1], f.data)
    return CheckResult("frontier mask vs per-cell definition oracle", ok, "10 random views")


def check_returns_oracle() -> CheckResult:
    from .a2c import RolloutBuffer, returns_and_advantages
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(3, 10))
        rewards = rng.standard_normal(n).tolist()
        dones = (rng.random(n) < 0.25).tolist()
        boot = float(rng.standard_normal())
        gamma = float(rng.uniform(0.5, 1.0))
        buf = RolloutBuffer()
        buf.rewards, buf.dones = [rewards], [dones]
        buf.values = [[0.0] * n]
        buf.states = [[None] * n]
        buf.actions = [[0] * n]
        buf.log_probs = [[0.0] * n]
        buf.bootstrap = [boot]
        rets, _ = returns_and_advantages(buf, gamma)
        want = oracles.discounted_returns_direct(rewards, dones, gamma, boot)
        worst = max(worst, float(np.abs(np.array(rets[0]) - want).max()))
    return CheckResult("discounted returns vs direct-sum oracle", worst <= 1e-12,
                       f"max abs {worst:.1e}")


def check_softmax_extended_precision() -> CheckResult:
    rng = np.random.default_rng(22)
    worst = 0.0
    for _ in range(10):
        vals = rng.standard_normal(12) * 3
        got = T.softmax_flat(Tensor(vals)).data
        worst = max(worst, float(np.abs(got - oracles.extended_precision_softmax(vals)).max()))
    return CheckResult("softmax vs extended-precision oracle", worst <= 1e-12,
                       f"max abs {worst:.1e}")


def check_checkpoint_roundtrip() -> CheckResult:
    cfg = Config({"env.G": 16})
    net = build_network("g-ans", cfg, seed=5)
    rng = np.random.default_rng(23)
    s = PolicyState(rng.random((8, 16, 16)))
    v = critic_forward(net, s)
    buf = io.BytesIO()

    import os
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "net.ckpt")
        save_checkpoint(path, net)
        loaded = load_checkpoint(path, cfg)
    ok = abs(critic_forward(loaded, s) - v) <= 1e-12
    return CheckResult("checkpoint round trip", ok, f"value drift {abs(critic_forward(loaded, s) - v):.1e}")


def check_map_generation() -> CheckResult:
    cfg = Config()
    a = generate_map(spec_for_suite(cfg, "ood", 3))
    b = generate_map(spec_for_suite(cfg, "ood", 3))
    ok = bool(np.array_equal(a.cells, b.cells))
    try:
        a.check_invariants()
    except ValueError:
        ok = False
    return CheckResult("map generation determinism and invariants", ok,
                       f"free area {a.free_area_m2():.1f} m^2")


ALL_CHECKS = [
    check_matmul_oracle,
    check_correlation_oracle,
    check_gradients_finite_difference,
    check_group_algebra,
    check_stack_equivariance,
    check_blur_pool,
    check_sgpp,
    check_gap_invariance,
    check_critic_symmetries,
    check_shortest_path_oracle,
    check_frontier_oracle,
    check_returns_oracle,
    check_softmax_extended_precision,
    check_checkpoint_roundtrip,
    check_map_generation,
]


def run_selftest() -> list:
    return [fn() for fn in ALL_CHECKS]


def write_results_csv(path, results) -> None:
    with open(path, "w") as fh:
        fh.write("check,status,detail\n")
        for r in results:
            fh.write(f"{r.name},{'pass' if r.passed else 'FAIL'},{r.metric}\n")
