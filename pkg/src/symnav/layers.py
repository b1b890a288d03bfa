"""Quarter-turn group algebra and the layer zoo for the policy networks.

Covers the four-fold rotation group acting on square maps (group elements,
filter lifting and group convolution), anti-aliased blur pooling, plain max
pooling, orientation pooling and fully connected layers.  All layers are pure
functions of (input, params) and differentiate through the tensor tape.

Exact equivariance notes, enforced by tests:
  * convolutions run at stride 1 with symmetric zero padding, so rotating the
    input permutes output indices exactly;
  * blur pooling uses an even-tap kernel, placing output cells on the
    half-integer grid, which is the only stride-2 grid on even extents that is
    closed under quarter turns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, apply_op


# --------------------------------------------------------------------------
# group elements
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class P4Element:
    """Rotation by m quarter turns followed by an integer translation."""

    m: int
    z1: int = 0
    z2: int = 0

    def __post_init__(self):
        object.__setattr__(self, "m", int(self.m) % 4)
        object.__setattr__(self, "z1", int(self.z1))
        object.__setattr__(self, "z2", int(self.z2))

    def matrix(self) -> np.ndarray:
        c, s = _COS[self.m], _SIN[self.m]
        return np.array([[c, -s, self.z1], [s, c, self.z2], [0, 0, 1]], dtype=float)

    def inverse(self) -> "P4Element":
        m_inv = (-self.m) % 4
        z1, z2 = _rotate_int(m_inv, -self.z1, -self.z2)
        return P4Element(m_inv, z1, z2)


IDENTITY = P4Element(0, 0, 0)

_COS = (1, 0, -1, 0)
_SIN = (0, 1, 0, -1)


def _rotate_int(m: int, z1: int, z2: int) -> tuple:
    c, s = _COS[m % 4], _SIN[m % 4]
    return (c * z1 - s * z2, s * z1 + c * z2)


def p4_compose(a: P4Element, b: P4Element) -> P4Element:
    """Group product: the element whose matrix is matrix(a) @ matrix(b)."""
    z1, z2 = _rotate_int(a.m, b.z1, b.z2)
    return P4Element(a.m + b.m, z1 + a.z1, z2 + a.z2)


def rot90_spatial(x, m: int) -> Tensor:
    """Counter-clockwise rotation of the two trailing axes by m quarter turns."""
    return T.rot90(x, m)


# --------------------------------------------------------------------------
# feature maps and parameters
# --------------------------------------------------------------------------

@dataclass
class P4FeatureMap:
    """Feature map carrying an explicit 4-way orientation axis: [C, 4, H, W]."""

    data: Tensor

    def __post_init__(self):
        shape = self.data.shape
        if len(shape) != 4 or shape[1] != 4:
            raise ShapeError(f"orientation-carrying maps are [C,4,H,W], got {shape}")
        if shape[2] < 1 or shape[3] < 1:
            raise ShapeError(f"spatial extents must be positive, got {shape}")

    @property
    def shape(self) -> tuple:
        return self.data.shape


def transform_p4(x, m: int):
    """Action of an m-quarter-turn on an orientation-carrying [C,4,H,W] map:
    rotate spatially, then cyclically shift the orientation axis by m."""
    data = x.data if isinstance(x, P4FeatureMap) else x
    out = T.roll(T.rot90(data, m), int(m) % 4, axis=1)
    return P4FeatureMap(out) if isinstance(x, P4FeatureMap) else out


@dataclass
class LayerParams:
    """Weight and bias tensors of one layer; shapes are fixed at construction.

    ``kind`` is one of conv / lifting / group / fc and controls how the
    weight tensor is interpreted by the layer functions.
    """

    kind: str
    weight: Tensor
    bias: Tensor

    def tensors(self):
        return (self.weight, self.bias)

    def param_count(self) -> int:
        return self.weight.size + self.bias.size


def init_layer(kind: str, rng: np.random.Generator, *, dtype=np.float64, **dims) -> LayerParams:
    """Uniform init in +-sqrt(1/fan_in); the orientation axis counts toward
    fan-in for group filters."""
    if kind == "conv":
        shape = (dims["c_out"], dims["c_in"], dims["k"], dims["k"])
        fan = dims["c_in"] * dims["k"] ** 2
        bias_n = dims["c_out"]
    elif kind == "lifting":
        shape = (dims["c_out"], dims["c_in"], dims["k"], dims["k"])
        fan = dims["c_in"] * dims["k"] ** 2
        bias_n = dims["c_out"]
    elif kind == "group":
        shape = (dims["c_out"], dims["c_in"], 4, dims["k"], dims["k"])
        fan = dims["c_in"] * 4 * dims["k"] ** 2
        bias_n = dims["c_out"]
    elif kind == "fc":
        shape = (dims["d_out"], dims["d_in"])
        fan = dims["d_in"]
        bias_n = dims["d_out"]
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    bound = float(np.sqrt(1.0 / fan))
    weight = Tensor.param(rng.uniform(-bound, bound, shape).astype(dtype))
    bias = Tensor.param(rng.uniform(-bound, bound, bias_n).astype(dtype))
    return LayerParams(kind, weight, bias)


# --------------------------------------------------------------------------
# group convolutions
# --------------------------------------------------------------------------

# expanded banks are pure functions of the weight array, so they are cached
# until the optimizer swaps the array in; in-place weight edits must replace
# ``params.weight.data`` rather than writing through it
_BANK_CACHE: dict = {}


def _cached_bank(f: Tensor, kind: str, build):
    key = (id(f), kind)
    hit = _BANK_CACHE.get(key)
    if hit is not None and hit[0] is f.data:
        return hit[1]
    bank = build(f.data)
    _BANK_CACHE[key] = (f.data, bank)
    return bank


def _lift_filter_bank(f: Tensor) -> Tensor:
    """[Co,Ci,k,k] -> [Co*4,Ci,k,k]: rows (o,m) hold the m-quarter-turn of f[o]."""
    co, ci, kh, kw = f.shape

    def build(data):
        bank = np.stack([np.rot90(data, m, axes=(-2, -1)) for m in range(4)], axis=1)
        return np.ascontiguousarray(bank).reshape(co * 4, ci, kh, kw)

    def backward(g):
        gb = g.reshape(co, 4, ci, kh, kw)
        acc = np.zeros_like(f.data)
        for m in range(4):
            acc += np.rot90(gb[:, m], -m, axes=(-2, -1))
        return (acc,)

    return apply_op(_cached_bank(f, "lift", build), (f,), backward)


def _group_filter_bank(f: Tensor) -> Tensor:
    """[Co,Ci,4,k,k] -> [Co*4,Ci*4,k,k] with rows (o,m), cols (i,r) holding the
    m-rotated filter whose orientation axis is cyclically shifted by m."""
    co, ci, four, kh, kw = f.shape
    if four != 4:
        raise ShapeError(f"group filters need an orientation extent of 4, got {f.shape}")

    def build(data):
        slabs = [np.rot90(np.roll(data, m, axis=2), m, axes=(-2, -1)) for m in range(4)]
        bank = np.stack(slabs, axis=1)                   # [Co,4,Ci,4,k,k]
        return np.ascontiguousarray(bank).reshape(co * 4, ci * 4, kh, kw)

    def backward(g):
        gb = g.reshape(co, 4, ci, 4, kh, kw)
        acc = np.zeros_like(f.data)
        for m in range(4):
            acc += np.roll(np.rot90(gb[:, m], -m, axes=(-2, -1)), -m, axis=2)
        return (acc,)

    return apply_op(_cached_bank(f, "group", build), (f,), backward)


def conv2d(x, params: LayerParams, stride: int = 1, padding: int = 0) -> Tensor:
    """Standard cross-correlation layer with per-channel bias.  Accepts an
    optional leading batch axis."""
    y = T.correlate2d(x, params.weight, stride=stride, padding=padding)
    return T.add_bias(y, params.bias, axis=len(y.shape) - 3)


def lifting_gconv(x, params: LayerParams, stride: int = 1, padding: int = 0):
    """Convolve a plain [C,H,W] map with the four rotations of one filter
    bank.  Batched [B,C,H,W] inputs return a plain [B,C,4,H',W'] tensor."""
    co = params.weight.shape[0]
    y = T.correlate2d(x, _lift_filter_bank(params.weight), stride=stride, padding=padding)
    batched = len(y.shape) == 4
    lead = (y.shape[0],) if batched else ()
    y = T.reshape(y, lead + (co, 4) + y.shape[-2:])
    y = T.add_bias(y, params.bias, axis=1 if batched else 0)
    return y if batched else P4FeatureMap(y)


def group_gconv(x, params: LayerParams, stride: int = 1, padding: int = 0):
    """Orientation-preserving convolution on [C,4,H,W] maps (optionally with
    a leading batch axis, returning a plain tensor)."""
    data = x.data if isinstance(x, P4FeatureMap) else x
    batched = len(data.shape) == 5
    ci, four, h, w = data.shape[-4:]
    co = params.weight.shape[0]
    lead = (data.shape[0],) if batched else ()
    flat = T.reshape(data, lead + (ci * 4, h, w))
    y = T.correlate2d(flat, _group_filter_bank(params.weight), stride=stride, padding=padding)
    y = T.reshape(y, lead + (co, 4) + y.shape[-2:])
    y = T.add_bias(y, params.bias, axis=1 if batched else 0)
    return y if batched else P4FeatureMap(y)


# --------------------------------------------------------------------------
# pooling
# --------------------------------------------------------------------------

# even-tap binomial; output cells sit on the half-integer grid so stride-2
# subsampling commutes with quarter turns on even extents
_BLUR_1D = np.array([1.0, 3.0, 3.0, 1.0]) / 8.0
_BLUR_KERNEL = np.outer(_BLUR_1D, _BLUR_1D)


def blur_pool(x, stride: int = 2) -> Tensor:
    """Low-pass filter with the binomial kernel (reflect padded), then
    subsample; acts on the two trailing axes of any-rank input."""
    x = x.data if isinstance(x, P4FeatureMap) else x
    x = x if isinstance(x, Tensor) else Tensor(x)
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise ShapeError(f"blur_pool needs spatial extents >= 2, got {x.shape}")
    if stride != 2:
        raise ShapeError("blur_pool supports stride 2 only")
    lead = x.data.ndim - 2
    pad = [(0, 0)] * lead + [(1, 1), (1, 1)]
    xp = np.pad(x.data, pad, mode="reflect")
    h_out, w_out = h // 2, w // 2
    taps = _BLUR_KERNEL.astype(x.data.dtype)
    out = np.zeros(x.shape[:-2] + (h_out, w_out), dtype=x.data.dtype)
    for a in range(4):
        for b in range(4):
            out += taps[a, b] * xp[..., a:a + 2 * h_out:2, b:b + 2 * w_out:2]

    def backward(g):
        gxp = np.zeros_like(xp)
        for a in range(4):
            for b in range(4):
                gxp[..., a:a + 2 * h_out:2, b:b + 2 * w_out:2] += taps[a, b] * g
        return (_reflect_unpad_grad(gxp),)

    return apply_op(out, (x,), backward)


def _reflect_unpad_grad(gxp: np.ndarray) -> np.ndarray:
    """Transpose of one-cell reflect padding: fold edge gradients back in."""
    core = gxp[..., 1:-1, 1:-1].copy()
    core[..., 1, :] += gxp[..., 0, 1:-1]
    core[..., -2, :] += gxp[..., -1, 1:-1]
    core[..., :, 1] += gxp[..., 1:-1, 0]
    core[..., :, -2] += gxp[..., 1:-1, -1]
    core[..., 1, 1] += gxp[..., 0, 0]
    core[..., 1, -2] += gxp[..., 0, -1]
    core[..., -2, 1] += gxp[..., -1, 0]
    core[..., -2, -2] += gxp[..., -1, -1]
    return core


def max_pool(x, window: int = 2, stride: int = 2) -> Tensor:
    """Windowed maximum with floor semantics for odd extents."""
    x = x.data if isinstance(x, P4FeatureMap) else x
    x = x if isinstance(x, Tensor) else Tensor(x)
    h, w = x.shape[-2:]
    if h < window or w < window:
        raise ShapeError(f"max_pool window {window} exceeds extents of {x.shape}")
    h_out = (h - window) // stride + 1
    w_out = (w - window) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, (window, window), axis=(-2, -1))
    win = win[..., ::stride, ::stride, :, :]
    flat_win = win.reshape(x.shape[:-2] + (h_out, w_out, window * window))
    arg = np.argmax(flat_win, axis=-1)  # first maximum in row-major window order
    out = np.take_along_axis(flat_win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        a, b = arg // window, arg % window
        ii = np.arange(h_out)[:, None] * stride
        jj = np.arange(w_out)[None, :] * stride
        flat = (ii + a) * w + (jj + b)              # into the trailing [H,W] block
        lead_n = int(np.prod(x.shape[:-2], dtype=int)) if x.data.ndim > 2 else 1
        gx = np.zeros((lead_n, h * w), dtype=x.data.dtype)
        rows = np.repeat(np.arange(lead_n), h_out * w_out)
        np.add.at(gx, (rows, flat.reshape(-1)), g.reshape(-1))
        return (gx.reshape(x.shape),)

    return apply_op(np.ascontiguousarray(out), (x,), backward)


def orientation_pool(x, mode: str = "mean") -> Tensor:
    """Collapse the orientation axis of a [C,4,H,W] (or batched [B,C,4,H,W])
    map to a plain spatial map."""
    data = x.data if isinstance(x, P4FeatureMap) else x
    if mode not in ("mean", "max"):
        raise ValueError(f"orientation_pool mode must be mean or max, got {mode!r}")
    return T.reduce(mode, data, axis=len(data.shape) - 3)


def fully_connected(x, params: LayerParams) -> Tensor:
    """Affine map w @ x + b on a rank-1 input."""
    if len(x.shape) != 1:
        raise ShapeError(f"fully_connected expects a flattened rank-1 input, got {x.shape}")
    d_out, d_in = params.weight.shape
    if x.shape[0] != d_in:
        raise ShapeError(f"input length {x.shape[0]} does not match weight extent {d_in}")
    y = T.matmul(params.weight, T.reshape(x, (d_in, 1)))
    return T.add(T.reshape(y, (d_out,)), params.bias)


def linear_rows(x, params: LayerParams) -> Tensor:
    """The same affine map applied to every row of a [B, D] batch."""
    return T.add_bias(T.matmul_t(x, params.weight), params.bias, axis=1)
