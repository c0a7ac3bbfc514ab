"""2D Haar discrete wavelet transform on (B, C, H, W) tensors.

The four 2x2 filters are unnormalized (entries +-1, sums not averages), so
the forward transform scales energy by 4 and the inverse carries a 1/4
factor. Filters are applied per channel with the cross-correlation
convention and stride 2, which for the LL band gives

    ll(i, j) = x(2i, 2j) + x(2i, 2j+1) + x(2i+1, 2j) + x(2i+1, 2j+1)

(0-based). All transforms are differentiable through the tensor engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, interleave2, reflect_pad_rb, subsample2

# The four fixed analysis filters (low-low, low-high, high-low, high-high).
F_LL = np.array([[1.0, 1.0], [1.0, 1.0]])
F_LH = np.array([[-1.0, -1.0], [1.0, 1.0]])
F_HL = np.array([[-1.0, 1.0], [-1.0, 1.0]])
F_HH = np.array([[1.0, -1.0], [-1.0, 1.0]])

HAAR_FILTERS = {"ll": F_LL, "lh": F_LH, "hl": F_HL, "hh": F_HH}


@dataclass
class Subbands:
    """One level of decomposition: four tensors of equal (B, C, H/2, W/2)."""

    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {t.shape for t in (self.ll, self.lh, self.hl, self.hh)}
        if len(shapes) != 1:
            raise ShapeError(f"subband shapes differ: {shapes}")

    def as_tuple(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.ll, self.lh, self.hl, self.hh


def dwt2(x: Tensor, pad: bool = False) -> Subbands:
    """One-level Haar decomposition of a rank-4 tensor.

    Odd spatial extents are an error unless ``pad=True``, in which case the
    bottom/right edge is reflect-padded to even first.
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"dwt2 expects rank 4, got {x.shape}")
    _, _, h, w = x.shape
    if h % 2 or w % 2:
        if not pad:
            raise ShapeError(f"odd spatial extent {h}x{w}; pass pad=True")
        x = reflect_pad_rb(x, h % 2, w % 2)
    a = subsample2(x, 0, 0)  # x(2i,   2j)
    b = subsample2(x, 0, 1)  # x(2i,   2j+1)
    c = subsample2(x, 1, 0)  # x(2i+1, 2j)
    d = subsample2(x, 1, 1)  # x(2i+1, 2j+1)
    ll = a + b + c + d
    lh = -a - b + c + d
    hl = -a + b - c + d
    hh = a - b - c + d
    return Subbands(ll=ll, lh=lh, hl=hl, hh=hh)


def idwt2(s: Subbands) -> Tensor:
    """Exact left-inverse of dwt2: the transpose transform scaled by 1/4.

    Phase formulas, e.g. x(2i, 2j) = (ll - lh - hl + hh) / 4.
    """
    ll, lh, hl, hh = s.as_tuple()
    a = (ll - lh - hl + hh) * 0.25
    b = (ll - lh + hl - hh) * 0.25
    c = (ll + lh - hl - hh) * 0.25
    d = (ll + lh + hl + hh) * 0.25
    return interleave2(a, b, c, d)


def dwt_multi(x: Tensor, levels: int, pad: bool = False) -> list[Subbands]:
    """Cascaded decomposition: level k+1 transforms level k's LL band.

    Returns per-level subbands, coarsest last. Without padding, H and W
    must be divisible by 2**levels.
    """
    if levels < 1:
        raise ValueError("levels must be positive")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if not pad:
        _, _, h, w = x.shape
        if h % (1 << levels) or w % (1 << levels):
            raise ShapeError(
                f"{h}x{w} not divisible by 2^{levels}; pass pad=True"
            )
    out: list[Subbands] = []
    cur = x
    for _ in range(levels):
        s = dwt2(cur, pad=pad)
        out.append(s)
        cur = s.ll
    return out


def idwt_multi(pyramid: list[Subbands]) -> Tensor:
    """Reconstruct from a dwt_multi pyramid (coarsest last)."""
    if not pyramid:
        raise ValueError("empty pyramid")
    cur = idwt2(pyramid[-1])
    for s in reversed(pyramid[:-1]):
        cur = idwt2(Subbands(ll=cur, lh=s.lh, hl=s.hl, hh=s.hh))
    return cur
