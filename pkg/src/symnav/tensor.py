"""Dense tensors with reverse-mode automatic differentiation.

The graph is a Wengert list: while a :class:`GradientTape` is active, every
primitive appends one node in execution order, so walking the list backwards
is already a valid reverse topological order.  Without an active tape the
primitives are plain numpy computations, which keeps rollout-time forward
passes cheap.

Tensors are immutable values once produced (nothing in this module writes to
``data`` after construction); a tape belongs to a single logical thread.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

# binary layout of one serialized tensor block (checkpoint format)
MAGIC = b"SYMNAV01"


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class TapeError(RuntimeError):
    """GradientTape misuse (double backward, nested tapes, ...)."""


class Tensor:
    """A dense n-dimensional array of real values.

    ``requires_grad`` marks leaf parameters; it propagates through ops so the
    tape can prune constant subgraphs.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    @staticmethod
    def param(data, dtype=None) -> "Tensor":
        return Tensor(data, requires_grad=True, dtype=dtype)

    @staticmethod
    def zeros(shape, dtype=None) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE))

    @staticmethod
    def ones(shape, dtype=None) -> "Tensor":
        return Tensor(np.ones(shape, dtype=dtype or DEFAULT_DTYPE))


_ACTIVE_TAPE: Optional["GradientTape"] = None


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class GradientTape:
    """Ordered record of primitive ops; maps parameters to gradients after backward.

    Use as a context manager around the forward pass.  ``backward`` may run
    once per recorded forward; a second call without a fresh forward raises
    :class:`TapeError`.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._grads: dict[int, np.ndarray] = {}
        self._consumed = False

    def __enter__(self) -> "GradientTape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeError("a GradientTape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def _record(self, out: Tensor, inputs: Sequence[Tensor], backward) -> None:
        self._nodes.append(_Node(out, tuple(inputs), backward))

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise TapeError("backward already ran on this tape; record a new forward pass first")
        if not self._nodes:
            raise TapeError("tape recorded no operations")
        self._consumed = True
        grads = self._grads
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            g_out = grads.get(id(node.out))
            if g_out is None:
                continue
            for inp, g in zip(node.inputs, node.backward(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                if g.shape != inp.data.shape:
                    raise ShapeError(
                        f"gradient shape {g.shape} does not match input shape {inp.data.shape}")
                acc = grads.get(id(inp))
                grads[id(inp)] = g if acc is None else acc + g

    def gradient(self, t: Tensor) -> Tensor:
        """Accumulated gradient of the last backward pass w.r.t. ``t``.

        Tensors not reached by the backward walk get a zero gradient.
        """
        g = self._grads.get(id(t))
        if g is None:
            g = np.zeros_like(t.data)
        return Tensor(g)


def apply_op(out_data: np.ndarray, inputs: Sequence[Tensor],
             backward: Callable[[np.ndarray], Iterable[Optional[np.ndarray]]]) -> Tensor:
    """Wrap a primitive's result, recording it on the active tape if any."""
    req = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req)
    if req and _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE._record(out, inputs, backward)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


def _binary_operands(a, b, op_name):
    a, b = _as_tensor(a), _as_tensor(b)
    # scalar (size-1) operands broadcast; anything else must match exactly
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op_name}: shapes {a.shape} and {b.shape} differ and neither is scalar")
    # keep scalar constants from upcasting float32 graphs
    if a.dtype != b.dtype:
        if a.size == 1 and not a.requires_grad:
            a = Tensor(a.data.astype(b.dtype))
        elif b.size == 1 and not b.requires_grad:
            b = Tensor(b.data.astype(a.dtype))
    return a, b


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape).astype(g.dtype)  # scalar operand


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    return apply_op(a.data + b.data, (a, b),
                    lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    return apply_op(a.data - b.data, (a, b),
                    lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")
    return apply_op(a.data * b.data, (a, b),
                    lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return apply_op(-a.data, (a,), lambda g: (-g,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return apply_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    if not np.isfinite(out).all():
        raise FloatingPointError("exp overflowed to a non-finite value")
    return apply_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise FloatingPointError("log requires strictly positive input")
    return apply_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a) -> Tensor:
    a = _as_tensor(a)
    return apply_op(a.data * a.data, (a,), lambda g: (g * (2.0 * a.data),))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu,
                "exp": exp, "log": log, "square": square}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise primitive by name (binary ops need ``b``)."""
    fn = _ELEMENTWISE.get(op_kind)
    if fn is None:
        raise ValueError(f"unknown elementwise op {op_kind!r}")
    if op_kind in ("add", "sub", "mul"):
        if b is None:
            raise ValueError(f"{op_kind} is binary and needs two operands")
        return fn(a, b)
    if b is not None:
        raise ValueError(f"{op_kind} is unary")
    return fn(a)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    return apply_op(a.data @ b.data, (a, b),
                    lambda g: (g @ b.data.T, a.data.T @ g))


def matmul_t(a, b) -> Tensor:
    """a @ b.T for rank-2 operands (row-major linear layers on batches)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"matmul_t needs [B,D] and [K,D], got {a.shape} and {b.shape}")
    return apply_op(a.data @ b.data.T, (a, b),
                    lambda g: (g @ b.data, g.T @ a.data))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    out = a.data.reshape(shape)
    return apply_op(out, (a,), lambda g: (g.reshape(old),))


def rot90(a, m: int) -> Tensor:
    """Counter-clockwise quarter turns of the two trailing axes."""
    a = _as_tensor(a)
    m = int(m) % 4
    out = np.ascontiguousarray(np.rot90(a.data, m, axes=(-2, -1)))
    return apply_op(out, (a,),
                    lambda g: (np.ascontiguousarray(np.rot90(g, -m, axes=(-2, -1))),))


def roll(a, shift: int, axis: int) -> Tensor:
    a = _as_tensor(a)
    return apply_op(np.roll(a.data, shift, axis=axis), (a,),
                    lambda g: (np.roll(g, -shift, axis=axis),))


def take_flat(a, index: int) -> Tensor:
    """Pick one element by flat row-major index; gradient scatters back."""
    a = _as_tensor(a)
    index = int(index)
    if not 0 <= index < a.size:
        raise ShapeError(f"flat index {index} out of range for {a.size} elements")

    def backward(g):
        ga = np.zeros_like(a.data)
        ga.reshape(-1)[index] = g
        return (ga,)

    return apply_op(np.asarray(a.data.reshape(-1)[index]), (a,), backward)


def add_bias(x, bias, axis: int = 0) -> Tensor:
    """Add a rank-1 bias along ``axis``, broadcast over every other axis."""
    x, bias = _as_tensor(x), _as_tensor(bias)
    if bias.data.ndim != 1 or bias.shape[0] != x.shape[axis]:
        raise ShapeError(f"bias shape {bias.shape} does not fit axis {axis} of {x.shape}")
    expand = [1] * x.data.ndim
    expand[axis] = bias.shape[0]
    other_axes = tuple(i for i in range(x.data.ndim) if i != axis)
    return apply_op(x.data + bias.data.reshape(expand), (x, bias),
                    lambda g: (g, np.sum(g, axis=other_axes)))


def reduce(op_kind: str, a, axis: Optional[int] = None) -> Tensor:
    a = _as_tensor(a)
    if a.size == 0:
        raise ShapeError("reduce of an empty tensor")
    if axis is not None and not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {a.data.ndim}")

    if op_kind == "sum":
        out = np.sum(a.data, axis=axis)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
            return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    elif op_kind == "mean":
        out = np.mean(a.data, axis=axis)
        n = a.size if axis is None else a.shape[axis]

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=True),)
            return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    elif op_kind == "max":
        out = np.max(a.data, axis=axis)

        def backward(g):
            ga = np.zeros_like(a.data)
            if axis is None:
                # ties break to the first element in row-major order
                ga.reshape(-1)[int(np.argmax(a.data))] = g
            else:
                idx = np.argmax(a.data, axis=axis)  # first argmax along the axis
                np.put_along_axis(ga, np.expand_dims(idx, axis),
                                  np.expand_dims(g, axis), axis=axis)
            return (ga,)

    else:
        raise ValueError(f"unknown reduce op {op_kind!r}")
    return apply_op(out, (a,), backward)


def softmax_flat(a) -> Tensor:
    """Softmax over all elements, computed with max-subtraction for stability."""
    a = _as_tensor(a)
    if a.size == 0:
        raise ShapeError("softmax of an empty tensor")
    z = a.data - np.max(a.data)
    e = np.exp(z)
    p = e / np.sum(e)

    def backward(g):
        dot = np.sum(g * p)
        return (p * (g - dot),)

    return apply_op(p, (a,), backward)


def log_softmax_flat(a) -> Tensor:
    """Log of softmax_flat without the underflow of composing log(exp(...))."""
    a = _as_tensor(a)
    if a.size == 0:
        raise ShapeError("softmax of an empty tensor")
    z = a.data - np.max(a.data)
    lse = np.log(np.sum(np.exp(z)))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * np.sum(g),)

    return apply_op(out, (a,), backward)


def log_softmax_rows(a) -> Tensor:
    """Row-wise stable log-softmax of a [B, K] tensor."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"log_softmax_rows expects [B, K], got {a.shape}")
    z = a.data - np.max(a.data, axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * np.sum(g, axis=1, keepdims=True),)

    return apply_op(out, (a,), backward)


def take_rows(a, indices) -> Tensor:
    """Pick one element per row of a [B, K] tensor: out[i] = a[i, idx[i]]."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=int)
    if a.data.ndim != 2 or idx.ndim != 1 or idx.size != a.shape[0]:
        raise ShapeError(f"take_rows expects [B, K] with B indices, got {a.shape} and {idx.shape}")
    rows = np.arange(a.shape[0])

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[rows, idx] = g
        return (ga,)

    return apply_op(a.data[rows, idx], (a,), backward)


def correlate2d(x, filters, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a [C_in,H,W] map with a [C_out,C_in,k,k] bank.

    Zero padding, no filter flip.  Output extent is
    ``floor((H + 2*padding - k) / stride) + 1`` per spatial axis.  A leading
    batch axis ([B,C_in,H,W] -> [B,C_out,H',W']) is accepted as an extension.
    """
    x, filters = _as_tensor(x), _as_tensor(filters)
    if x.data.ndim not in (3, 4) or filters.data.ndim != 4:
        raise ShapeError(f"correlate2d expects [C,H,W] or [B,C,H,W] and [Co,Ci,k,k], "
                         f"got {x.shape}, {filters.shape}")
    batched = x.data.ndim == 4
    b = x.shape[0] if batched else 1
    c_in, h, w = x.shape[-3:]
    c_out, c_f, kh, kw = filters.shape
    if c_f != c_in:
        raise ShapeError(f"filter input channels {c_f} != input channels {c_in}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride {stride} / padding {padding}")
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if kh > h + 2 * padding or kw > w + 2 * padding or h_out <= 0 or w_out <= 0:
        raise ShapeError(f"degenerate output {h_out}x{w_out} for input {x.shape}, "
                         f"filter {filters.shape}, stride {stride}, padding {padding}")

    x4 = x.data if batched else x.data[None]
    pad_spec = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.pad(x4, pad_spec) if padding else x4
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                    # [B, C, Ho, Wo, k, k]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h_out * w_out, c_in * kh * kw)
    fmat = filters.data.reshape(c_out, c_in * kh * kw)
    y = cols @ fmat.T                                      # [B*HoWo, Co]
    out = np.ascontiguousarray(
        y.reshape(b, h_out, w_out, c_out).transpose(0, 3, 1, 2))
    if not batched:
        out = out[0]

    def backward(g):
        g4 = g if batched else g[None]
        gmat = g4.transpose(0, 2, 3, 1).reshape(b * h_out * w_out, c_out)
        g_filters = (gmat.T @ cols).reshape(filters.shape)
        gcols = gmat @ fmat                                # [B*HoWo, C*k*k]
        gwin = gcols.reshape(b, h_out, w_out, c_in, kh, kw)
        gxp = np.zeros_like(xp)
        for ka in range(kh):
            for kb in range(kw):
                gxp[:, :, ka:ka + h_out * stride:stride, kb:kb + w_out * stride:stride] += \
                    gwin[:, :, :, :, ka, kb].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        gx = gx if batched else gx[0]
        return (np.ascontiguousarray(gx), g_filters)

    return apply_op(out, (x, filters), backward)


def finite_difference_gradient(f: Callable[[Tensor], float], x: Tensor, h: float = 1e-4) -> Tensor:
    """Central-difference gradient estimate of a scalar function, per element.

    The oracle against which every tape gradient is checked; it never touches
    the tape machinery.
    """
    x = _as_tensor(x)
    base = x.data.astype(np.float64).copy()
    flat = base.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = _scalar_value(f(Tensor(base.copy())))
        flat[i] = orig - h
        dn = _scalar_value(f(Tensor(base.copy())))
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(dn)):
            raise FloatingPointError(f"function returned a non-finite value at coordinate {i}")
        grad[i] = (up - dn) / (2.0 * h)
    return Tensor(grad.reshape(x.shape))


def _scalar_value(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)


def save_tensor(fh, arr) -> None:
    """Write one tensor block: magic, u32 rank, u32 extents, f64 row-major."""
    data = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
    fh.write(MAGIC)
    fh.write(struct.pack("<I", data.ndim))
    for extent in data.shape:
        fh.write(struct.pack("<I", extent))
    fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_tensor(fh) -> np.ndarray:
    magic = fh.read(8)
    if magic != MAGIC:
        raise ValueError(f"bad tensor block magic {magic!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack("<I", fh.read(4))
    shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    buf = fh.read(8 * count)
    if len(buf) != 8 * count:
        raise ValueError("truncated tensor block")
    return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
