"""Minimal dense-tensor engine with reverse-mode differentiation.

Conventions, fixed once and used everywhere:

- double precision (float64) throughout
- conv2d is cross-correlation: kernels are applied as stored, never flipped
- broadcasting is restricted to scalar-vs-tensor and exact same-shape;
  anything richer must go through an explicit ``broadcast_to``
- tensors are immutable once created except for gradient accumulation,
  which is confined to a single backward pass

The engine is eager: every operation on a gradient-requiring tensor records
its backward closure immediately. There is no graph optimization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class Tensor:
    """Dense float64 array of rank <= 4 with optional gradient tracking.

    Rank-4 tensors are interpreted as (batch, channel, height, width).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} > 4 not supported")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- graph plumbing ------------------------------------------------------

    def detach(self) -> "Tensor":
        """Same data, cut off from the graph."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root.

        Gradients accumulate additively across multiple uses of a node.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar root, got size {self.data.size}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(_coerce(other), -1.0))

    def __rsub__(self, other):
        return add(_coerce(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def relu(self):
        return relu(self)

    def leaky_relu(self, slope: float = 0.2):
        return leaky_relu(self, slope)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return absval(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(
        f"shapes {a.shape} and {b.shape} are neither equal nor scalar"
    )


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # grad of a scalar operand broadcast against a tensor: sum everything
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape) if np.prod(shape, dtype=int) == 1 else g


# -- pointwise ops -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b)
    data = a.data + b.data

    def bwd(g):
        a._accum(_reduce_to(g, a.shape))
        b._accum(_reduce_to(g, b.shape))

    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b)
    data = a.data * b.data

    def bwd(g):
        a._accum(_reduce_to(g * b.data, a.shape))
        b._accum(_reduce_to(g * a.data, b.shape))

    return _make(data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b)
    data = a.data / b.data

    def bwd(g):
        a._accum(_reduce_to(g / b.data, a.shape))
        b._accum(_reduce_to(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), bwd)


def power(a, p: float) -> Tensor:
    """Elementwise a**p for a scalar exponent; caller guarantees a > 0 when
    p is non-integral."""
    a = _coerce(a)
    p = float(p)
    data = a.data ** p

    def bwd(g):
        a._accum(g * p * a.data ** (p - 1.0))

    return _make(data, (a,), bwd)


def relu(a) -> Tensor:
    a = _coerce(a)
    mask = (a.data > 0).astype(np.float64)

    def bwd(g):
        a._accum(g * mask)

    return _make(a.data * mask, (a,), bwd)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _coerce(a)
    fac = np.where(a.data > 0, 1.0, slope)

    def bwd(g):
        a._accum(g * fac)

    return _make(a.data * fac, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    s = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        a._accum(g * s * (1.0 - s))

    return _make(s, (a,), bwd)


def tanh(a) -> Tensor:
    a = _coerce(a)
    t = np.tanh(a.data)

    def bwd(g):
        a._accum(g * (1.0 - t * t))

    return _make(t, (a,), bwd)


def exp(a) -> Tensor:
    a = _coerce(a)
    e = np.exp(a.data)

    def bwd(g):
        a._accum(g * e)

    return _make(e, (a,), bwd)


def log(a) -> Tensor:
    a = _coerce(a)

    def bwd(g):
        a._accum(g / a.data)

    return _make(np.log(a.data), (a,), bwd)


def absval(a) -> Tensor:
    a = _coerce(a)
    s = np.sign(a.data)

    def bwd(g):
        a._accum(g * s)

    return _make(np.abs(a.data), (a,), bwd)


def clip_min(a, lo: float) -> Tensor:
    """max(a, lo) elementwise; gradient is zero where the floor is active."""
    a = _coerce(a)
    mask = (a.data > lo).astype(np.float64)

    def bwd(g):
        a._accum(g * mask)

    return _make(np.maximum(a.data, lo), (a,), bwd)


def elementwise(kind: str, *inputs, slope: float = 0.2, c: float | None = None) -> Tensor:
    """Dispatcher over the supported pointwise kinds.

    kind in {add, mul, relu, leaky_relu, sigmoid, tanh, scale}; ``scale``
    multiplies its single input by the constant ``c``.
    """
    if kind == "add":
        return add(*inputs)
    if kind == "mul":
        return mul(*inputs)
    if kind == "relu":
        return relu(*inputs)
    if kind == "leaky_relu":
        return leaky_relu(inputs[0], slope)
    if kind == "sigmoid":
        return sigmoid(*inputs)
    if kind == "tanh":
        return tanh(*inputs)
    if kind == "scale":
        if c is None:
            raise ValueError("scale requires c")
        return mul(inputs[0], float(c))
    raise ValueError(f"unknown elementwise kind {kind!r}")


# -- reductions --------------------------------------------------------------

def tsum(a) -> Tensor:
    a = _coerce(a)

    def bwd(g):
        a._accum(np.full_like(a.data, float(g.reshape(()))))

    return _make(np.asarray(a.data.sum()), (a,), bwd)


def tmean(a) -> Tensor:
    a = _coerce(a)
    n = a.data.size

    def bwd(g):
        a._accum(np.full_like(a.data, float(g.reshape(())) / n))

    return _make(np.asarray(a.data.mean()), (a,), bwd)


def spatial_mean(a) -> Tensor:
    """Mean over H and W of a rank-4 tensor, keeping (B, C, 1, 1)."""
    a = _coerce(a)
    if a.data.ndim != 4:
        raise ShapeError("spatial_mean expects rank 4")
    _, _, h, w = a.shape
    data = a.data.mean(axis=(2, 3), keepdims=True)

    def bwd(g):
        a._accum(np.broadcast_to(g / (h * w), a.shape).copy())

    return _make(data, (a,), bwd)


# -- structural ops ----------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(int(s) for s in shape)
    old = a.shape

    def bwd(g):
        a._accum(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), bwd)


def broadcast_to(a, shape) -> Tensor:
    """Explicit broadcast along size-1 axes (general broadcasting is
    deliberately not supported by the pointwise ops)."""
    a = _coerce(a)
    shape = tuple(int(s) for s in shape)
    if len(shape) != a.data.ndim:
        raise ShapeError(f"broadcast_to rank mismatch: {a.shape} -> {shape}")
    axes = []
    for i, (s0, s1) in enumerate(zip(a.shape, shape)):
        if s0 == s1:
            continue
        if s0 == 1:
            axes.append(i)
        else:
            raise ShapeError(f"cannot broadcast {a.shape} to {shape}")
    axes_t = tuple(axes)

    def bwd(g):
        a._accum(g.sum(axis=axes_t, keepdims=True) if axes_t else g)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref):
            raise ShapeError("concat rank mismatch")
        for i, (s0, s1) in enumerate(zip(ref, t.shape)):
            if i != axis and s0 != s1:
                raise ShapeError(f"concat shape mismatch on axis {i}")
    sizes = [t.shape[axis] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def bwd(g):
        off = 0
        for t, s in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(off, off + s)
            t._accum(g[tuple(sl)])
            off += s

    return _make(data, tuple(tensors), bwd)


def subsample2(a, oi: int, oj: int) -> Tensor:
    """Every second pixel of a rank-4 tensor starting at offset (oi, oj)."""
    a = _coerce(a)
    if a.data.ndim != 4:
        raise ShapeError("subsample2 expects rank 4")
    data = a.data[:, :, oi::2, oj::2].copy()

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, :, oi::2, oj::2] = g
        a._accum(full)

    return _make(data, (a,), bwd)


def interleave2(a, b, c, d) -> Tensor:
    """Inverse of the four subsample2 phases: a->(even,even), b->(even,odd),
    c->(odd,even), d->(odd,odd)."""
    a, b, c, d = map(_coerce, (a, b, c, d))
    if not (a.shape == b.shape == c.shape == d.shape):
        raise ShapeError("interleave2 requires four equal shapes")
    if a.data.ndim != 4:
        raise ShapeError("interleave2 expects rank 4")
    bn, ch, h, w = a.shape
    data = np.empty((bn, ch, 2 * h, 2 * w), dtype=np.float64)
    data[:, :, 0::2, 0::2] = a.data
    data[:, :, 0::2, 1::2] = b.data
    data[:, :, 1::2, 0::2] = c.data
    data[:, :, 1::2, 1::2] = d.data

    def bwd(g):
        a._accum(g[:, :, 0::2, 0::2])
        b._accum(g[:, :, 0::2, 1::2])
        c._accum(g[:, :, 1::2, 0::2])
        d._accum(g[:, :, 1::2, 1::2])

    return _make(data, (a, b, c, d), bwd)


def reflect_pad_rb(a, pad_h: int, pad_w: int) -> Tensor:
    """Reflect-pad the bottom and right edges of a rank-4 tensor."""
    a = _coerce(a)
    if a.data.ndim != 4:
        raise ShapeError("reflect_pad_rb expects rank 4")
    data = np.pad(a.data, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)),
                  mode="reflect")
    _, _, h, w = a.shape

    def bwd(g):
        gi = g[:, :, :h, :w].copy()
        for k in range(1, pad_h + 1):
            gi[:, :, h - 1 - k, :] += g[:, :, h - 1 + k, :w]
        for k in range(1, pad_w + 1):
            gi[:, :, :, w - 1 - k] += g[:, :, :h, w - 1 + k]
        # corner contributions reflect in both axes
        for ki in range(1, pad_h + 1):
            for kj in range(1, pad_w + 1):
                gi[:, :, h - 1 - ki, w - 1 - kj] += g[:, :, h - 1 + ki, w - 1 + kj]
        a._accum(gi)

    return _make(data, (a,), bwd)


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation of a (B, Cin, H, W) input with a
    (Cout, Cin, kh, kw) kernel; zero padding.

    Output spatial size is floor((H + 2*padding - kh)/stride) + 1 and
    analogously for width.
    """
    x, kernel = _coerce(x), _coerce(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects rank-4 input and kernel, got {x.shape}, {kernel.shape}"
        )
    bn, cin, h, w = x.shape
    cout, ck, kh, kw = kernel.shape
    if ck != cin:
        raise ShapeError(f"kernel expects {ck} input channels, input has {cin}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError("input smaller than kernel after padding")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    # im2col: one contiguous copy, then plain matmuls
    col = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)) \
        .reshape(bn * ho * wo, cin * kh * kw)
    kmat = kernel.data.reshape(cout, cin * kh * kw)
    data = (col @ kmat.T).reshape(bn, ho, wo, cout).transpose(0, 3, 1, 2)

    def bwd(g):
        gflat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)) \
            .reshape(bn * ho * wo, cout)
        if kernel.requires_grad:
            kernel._accum((gflat.T @ col).reshape(cout, cin, kh, kw))
        if x.requires_grad:
            # one contiguous copy so each (i, j) slab is a flat block
            gcol = np.ascontiguousarray(
                (gflat @ kmat).reshape(bn, ho, wo, cin, kh, kw)
                .transpose(4, 5, 0, 3, 1, 2))
            gx = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + stride * ho:stride,
                       j:j + stride * wo:stride] += gcol[i, j]
            if padding:
                gx = gx[:, :, padding:padding + h, padding:padding + w]
            x._accum(gx)

    return _make(data, (x, kernel), bwd)


def pixel_shuffle(x, r: int) -> Tensor:
    """Depth-to-space: (B, C, H, W) -> (B, C/r^2, H*r, W*r).

    Element mapping (the standard sub-pixel rearrangement):
        out[b, c, h*r + i, w*r + j] = in[b, c*r^2 + i*r + j, h, w]
    """
    x = _coerce(x)
    if x.data.ndim != 4:
        raise ShapeError("pixel_shuffle expects rank 4")
    bn, c, h, w = x.shape
    if r < 1:
        raise ValueError("r must be positive")
    if c % (r * r) != 0:
        raise ShapeError(f"channels {c} not divisible by r^2 = {r * r}")
    co = c // (r * r)
    data = (x.data.reshape(bn, co, r, r, h, w)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(bn, co, h * r, w * r))

    def bwd(g):
        x._accum(g.reshape(bn, co, h, r, w, r)
                 .transpose(0, 1, 3, 5, 2, 4)
                 .reshape(bn, c, h, w))

    return _make(data, (x,), bwd)


def pixel_unshuffle(x, r: int) -> Tensor:
    """Space-to-depth; exact inverse of pixel_shuffle with the same r."""
    x = _coerce(x)
    if x.data.ndim != 4:
        raise ShapeError("pixel_unshuffle expects rank 4")
    bn, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by r={r}")
    ho, wo = h // r, w // r
    data = (x.data.reshape(bn, c, ho, r, wo, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(bn, c * r * r, ho, wo))

    def bwd(g):
        x._accum(g.reshape(bn, c, r, r, ho, wo)
                 .transpose(0, 1, 4, 2, 5, 3)
                 .reshape(bn, c, h, w))

    return _make(data, (x,), bwd)


def avg_pool2(x) -> Tensor:
    """2x2 mean pooling with stride 2; requires even spatial dims."""
    x = _coerce(x)
    if x.data.ndim != 4:
        raise ShapeError("avg_pool2 expects rank 4")
    bn, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even dims, got {h}x{w}")
    data = x.data.reshape(bn, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bwd(g):
        x._accum(np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0)

    return _make(data, (x,), bwd)


# -- gradient verification ---------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
               tol: float = 1e-4) -> GradCheckReport:
    """Compare the analytic gradient of a scalar-valued f against central
    differences, coordinate by coordinate.

    rel err per coordinate = |a - n| / max(|a|, |n|, 1e-8).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    xt = Tensor(x.data.copy(), requires_grad=True)
    out = f(xt)
    out.backward()
    analytic = (xt.grad if xt.grad is not None else np.zeros_like(xt.data)).copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.copy().reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(flat.reshape(x.data.shape))).item()
        flat[i] = orig - h
        fm = f(Tensor(flat.reshape(x.data.shape))).item()
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    max_rel = float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
    return GradCheckReport(max_rel_err=max_rel, passed=max_rel < tol)


# -- serialization -----------------------------------------------------------

_MAGIC = b"DWT0"


def save_tensor(path, t: Tensor) -> None:
    """Flat binary format: magic "DWT0", u32 rank, u32 extents,
    little-endian f64 payload."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        for s in arr.shape:
            fh.write(struct.pack("<I", s))
        fh.write(arr.astype("<f8").tobytes())


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(rank))
        n = int(np.prod(shape)) if shape else 1
        payload = fh.read(8 * n)
        if len(payload) != 8 * n:
            raise ValueError(f"truncated payload: got {len(payload)} of {8 * n} bytes")
        arr = np.frombuffer(payload, dtype="<f8").reshape(shape)
    return Tensor(arr.copy())
