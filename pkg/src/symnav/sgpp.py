"""Polar resampling and circumferential pooling for the critic head.

The Cartesian-to-polar resampler samples on rings confined to the inscribed
disk (corner content is not rotation-stable).  The angular grid is built one
quadrant at a time and tiled by exact sign/swap symmetry, so a quarter-turn
of the input permutes the sample set bitwise; averaging over angles is then
invariant to quarter turns up to summation-order rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, apply_op


@dataclass
class PolarFeatureMap:
    """Feature map resampled on rings: data [C, R, A], plus the sample grid."""

    data: Tensor
    radii: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        c, r, a = self.data.shape
        if len(self.radii) != r or len(self.angles) != a:
            raise ShapeError("grid extents do not match the data block")


@dataclass
class PooledRadialProfile:
    """Per-ring averages: data [C, R]."""

    data: Tensor

    def __post_init__(self):
        if not np.isfinite(self.data.data).all():
            raise FloatingPointError("radial profile contains non-finite values")


_GRID_CACHE: dict = {}


def _quarter_turn_closed_angles(a_bins: int):
    """cos/sin tables for A uniform angles, tiled so that a shift by A/4
    positions is an exact sign/swap permutation."""
    quarter = a_bins // 4
    base = 2.0 * np.pi * np.arange(quarter) / a_bins
    c, s = np.cos(base), np.sin(base)
    cos_t = np.concatenate([c, -s, -c, s])
    sin_t = np.concatenate([s, c, -s, -c])
    angles = 2.0 * np.pi * np.arange(a_bins) / a_bins
    return cos_t, sin_t, angles


def _sampling_grid(h: int, w: int, r_bins: int, a_bins: int):
    """Bilinear indices [R*A, 4] and weights [R*A, 4] for the ring samples."""
    key = (h, w, r_bins, a_bins)
    cached = _GRID_CACHE.get(key)
    if cached is not None:
        return cached

    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    r_max = (min(h, w) - 1) / 2.0
    radii = np.linspace(0.0, r_max, r_bins)
    cos_t, sin_t, angles = _quarter_turn_closed_angles(a_bins)

    rows = cy + radii[:, None] * sin_t[None, :]
    cols = cx + radii[:, None] * cos_t[None, :]
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr, fc = rows - r0, cols - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)

    idx = np.stack([r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1], axis=-1)
    wts = np.stack([(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc], axis=-1)
    entry = (idx.reshape(-1, 4), wts.reshape(-1, 4), radii, angles)
    _GRID_CACHE[key] = entry
    return entry


def cartesian_to_polar(x, r_bins: int, a_bins: int) -> PolarFeatureMap:
    """Resample a square [C,H,W] map onto R rings x A spokes, bilinearly.

    Differentiable: gradients flow back through the interpolation weights.
    A must be a multiple of 4 so the grid is closed under quarter turns.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if len(x.shape) != 3:
        raise ShapeError(f"expected a [C,H,W] map, got {x.shape}")
    c, h, w = x.shape
    if h != w:
        raise ShapeError(f"polar resampling is defined on square maps, got {h}x{w}")
    if r_bins < 1 or a_bins < 1:
        raise ShapeError(f"need at least one radial and one angular bin, got R={r_bins}, A={a_bins}")
    if a_bins % 4 != 0:
        raise ShapeError(f"angular bins must be a multiple of 4, got {a_bins}")

    idx, wts, radii, angles = _sampling_grid(h, w, r_bins, a_bins)
    wts_t = wts.astype(x.dtype)
    xf = x.data.reshape(c, h * w)
    out = (xf[:, idx] * wts_t).sum(axis=-1).reshape(c, r_bins, a_bins)

    def backward(g):
        gf = g.reshape(c, -1)
        gx = np.zeros((c, h * w), dtype=x.dtype)
        flat_idx = idx.reshape(-1)
        for ch in range(c):
            contrib = (gf[ch][:, None] * wts_t).reshape(-1)
            gx[ch] = np.bincount(flat_idx, weights=contrib, minlength=h * w)
        return (gx.reshape(x.shape).astype(x.dtype),)

    return PolarFeatureMap(apply_op(out, (x,), backward), radii, angles)


def circumferential_average(p: PolarFeatureMap) -> PooledRadialProfile:
    """Average each ring over its angular samples."""
    return PooledRadialProfile(T.reduce("mean", p.data, axis=2))


def sgpp(x, r_bins: int, a_bins: int) -> PooledRadialProfile:
    """Semi-global polar pooling: polar resampling, then circumferential
    averaging.  Invariant to quarter turns; sensitive to translation."""
    return circumferential_average(cartesian_to_polar(x, r_bins, a_bins))


def polar_profile_rows(x, r_bins: int, a_bins: int) -> Tensor:
    """Batched polar pooling: [B,C,H,W] -> [B,C,R] (training fast path; the
    public sgpp keeps the single-map contract and grid types)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if len(x.shape) != 4:
        raise ShapeError(f"expected [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    if h != w:
        raise ShapeError(f"polar resampling is defined on square maps, got {h}x{w}")
    if a_bins % 4 != 0:
        raise ShapeError(f"angular bins must be a multiple of 4, got {a_bins}")
    idx, wts, _, _ = _sampling_grid(h, w, r_bins, a_bins)
    wts_t = wts.astype(x.dtype)
    xf = x.data.reshape(b * c, h * w)
    samples = (xf[:, idx] * wts_t).sum(axis=-1)            # [B*C, R*A]
    out = samples.reshape(b, c, r_bins, a_bins).mean(axis=3)

    def backward(g):
        ga = np.broadcast_to(g[..., None] / a_bins,
                             (b, c, r_bins, a_bins)).reshape(b * c, -1)
        flat_idx = idx.reshape(-1)
        gx = np.zeros((b * c, h * w), dtype=x.dtype)
        for row in range(b * c):
            contrib = (ga[row][:, None] * wts_t).reshape(-1)
            gx[row] = np.bincount(flat_idx, weights=contrib, minlength=h * w)
        return (gx.reshape(x.shape).astype(x.dtype),)

    return apply_op(out.astype(x.dtype), (x,), backward)


def global_average_pool(x) -> Tensor:
    """Per-channel mean over everything but the channel axis.

    Uses correctly-rounded summation (math.fsum) so the result is bitwise
    invariant under any spatial permutation of the input, not merely close.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if len(x.shape) < 2:
        raise ShapeError(f"need at least [C, ...], got {x.shape}")
    c = x.shape[0]
    n = x.size // c
    flat = x.data.reshape(c, n)
    out = np.array([math.fsum(row) / n for row in flat.astype(np.float64)], dtype=x.dtype)

    def backward(g):
        return (np.broadcast_to((g / n)[:, None], (c, n)).reshape(x.shape).astype(x.dtype),)

    return apply_op(out, (x,), backward)
