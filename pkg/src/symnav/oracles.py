"""Naive reference implementations used to cross-check the fast paths.

Everything here is written the slow, obvious way on purpose: nested loops,
heapq Dijkstra, extended-precision sums.  None of it may import the modules
it is used to verify beyond plain data types.
"""

from __future__ import annotations

import heapq
import math

import numpy as np


def loop_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def loop_correlate2d(x: np.ndarray, f: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    c_in, h, w = x.shape
    c_out, _, kh, kw = f.shape
    xp = np.zeros((c_in, h + 2 * padding, w + 2 * padding))
    xp[:, padding:padding + h, padding:padding + w] = x
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    for o in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                s = 0.0
                for c in range(c_in):
                    for a in range(kh):
                        for b in range(kw):
                            s += xp[c, i * stride + a, j * stride + b] * f[o, c, a, b]
                out[o, i, j] = s
    return out


def loop_max_pool(x: np.ndarray, window: int = 2, stride: int = 2) -> np.ndarray:
    h, w = x.shape[-2:]
    h_out = (h - window) // stride + 1
    w_out = (w - window) // stride + 1
    out = np.zeros(x.shape[:-2] + (h_out, w_out))
    for idx in np.ndindex(x.shape[:-2]):
        for i in range(h_out):
            for j in range(w_out):
                block = x[idx][i * stride:i * stride + window, j * stride:j * stride + window]
                out[idx][i, j] = block.max()
    return out


def extended_precision_softmax(values) -> np.ndarray:
    """Softmax via np.longdouble accumulation (80-bit on x86 linux)."""
    v = np.asarray(values, dtype=np.longdouble).reshape(-1)
    v = v - v.max()
    e = np.exp(v)
    return np.asarray(e / e.sum(), dtype=np.float64)


def extended_precision_mean(values) -> float:
    v = np.asarray(values, dtype=np.longdouble).reshape(-1)
    return float(v.sum() / len(v))


def p4_matrix(m: int, z1: int, z2: int) -> np.ndarray:
    """Homogeneous 3x3 matrix of a quarter-turn-plus-translation element."""
    ang = m * math.pi / 2.0
    return np.array([[math.cos(ang), -math.sin(ang), z1],
                     [math.sin(ang), math.cos(ang), z2],
                     [0.0, 0.0, 1.0]])


def p4_compose_by_matrix(a, b) -> tuple:
    """Compose two (m, z1, z2) triples by multiplying their matrices."""
    prod = p4_matrix(*a) @ p4_matrix(*b)
    m = round(math.atan2(prod[1, 0], prod[0, 0]) / (math.pi / 2.0)) % 4
    return (m, round(prod[0, 2]), round(prod[1, 2]))


def dijkstra_grid(cost_map: np.ndarray, start: tuple, goal: tuple):
    """Optimal 8-connected path cost via a plain heapq Dijkstra.

    ``cost_map`` holds per-cell entry multipliers (np.inf blocks a cell).
    Step cost is base length (1 or sqrt(2)) times the multiplier of the cell
    being entered; diagonal moves additionally require both orthogonal
    neighbours passable (no corner cutting).  Returns (cost to goal or None,
    dist array).
    """
    h, w = cost_map.shape
    dist = np.full((h, w), np.inf)
    dist[start] = 0.0
    heap = [(0.0, start)]
    moves = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if d > dist[r, c]:
            continue
        for dr, dc in moves:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w):
                continue
            mult = cost_map[nr, nc]
            if not np.isfinite(mult):
                continue
            if dr and dc and not (np.isfinite(cost_map[r + dr, c]) and np.isfinite(cost_map[r, c + dc])):
                continue
            base = math.sqrt(2.0) if dr and dc else 1.0
            nd = d + base * mult
            if nd < dist[nr, nc] - 1e-12:
                dist[nr, nc] = nd
                heapq.heappush(heap, (nd, (nr, nc)))
    goal_cost = dist[goal]
    return (None if not np.isfinite(goal_cost) else float(goal_cost)), dist


def discounted_returns_direct(rewards, dones, gamma: float, bootstrap: float) -> np.ndarray:
    """Returns by direct forward power sums, not the backward recursion."""
    n = len(rewards)
    out = np.zeros(n)
    for t in range(n):
        acc = 0.0
        power = 1.0
        terminated = False
        for j in range(t, n):
            acc += power * rewards[j]
            power *= gamma
            if dones[j]:
                terminated = True
                break
        if not terminated:
            acc += power * bootstrap
        out[t] = acc
    return out


def frontier_definition_check(obstacles: np.ndarray, explored: np.ndarray,
                              mask: np.ndarray, threshold: float = 0.5) -> bool:
    """Check every cell of a frontier mask against the textual definition:
    marked iff explored, free, and with at least one unexplored 4-neighbor."""
    h, w = mask.shape
    for r in range(h):
        for c in range(w):
            free = explored[r, c] >= threshold and obstacles[r, c] < threshold
            unexplored_neighbor = False
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                nr, nc = r + dr, c + dc
                if 0 <= nr < h and 0 <= nc < w and explored[nr, nc] < threshold:
                    unexplored_neighbor = True
                    break
            expected = free and unexplored_neighbor
            if bool(mask[r, c]) != expected:
                return False
    return True


def bilinear_sample_oracle(img: np.ndarray, row: float, col: float) -> float:
    """Direct four-neighbor bilinear interpolation at one point."""
    r0, c0 = int(math.floor(row)), int(math.floor(col))
    fr, fc = row - r0, col - c0
    h, w = img.shape
    r1, c1 = min(r0 + 1, h - 1), min(c0 + 1, w - 1)
    return ((1 - fr) * (1 - fc) * img[r0, c0] + (1 - fr) * fc * img[r0, c1]
            + fr * (1 - fc) * img[r1, c0] + fr * fc * img[r1, c1])
