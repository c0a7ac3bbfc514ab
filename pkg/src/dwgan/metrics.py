"""Image-quality metrics: PSNR, SSIM, MS-SSIM and gray-level statistics.

SSIM uses an 11x11 Gaussian window (sigma 1.5) with the usual stabilizers
C1 = (0.01*L)^2, C2 = (0.03*L)^2 and is computed over the valid region
(no padding), per channel, then averaged. MS-SSIM multiplies per-level
contrast/structure terms over a dyadic pyramid (2x2 mean pooling between
levels) and applies the luminance term only at the coarsest level.

The SSIM/MS-SSIM cores run on the autodiff tensor engine so the loss
module can differentiate through them; the public functions here accept
tensors or arrays and return plain floats.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .tensor import (ShapeError, Tensor, avg_pool2, clip_min, conv2d, power,
                     reshape)

logger = logging.getLogger(__name__)

# Community-default per-level MS-SSIM exponents (coarsest last); the
# luminance exponent equals the last entry.
DEFAULT_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass
class SsimConfig:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


@dataclass
class MsSsimConfig:
    weights: tuple[float, ...] = DEFAULT_MSSSIM_WEIGHTS
    ssim: SsimConfig = field(default_factory=SsimConfig)
    auto_reduce: bool = True

    @property
    def levels(self) -> int:
        return len(self.weights)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """2D Gaussian kernel normalized to sum 1."""
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _as_tensor4(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.data.ndim == 3:
        t = reshape(t, (1,) + t.shape)
    if t.data.ndim != 4:
        raise ShapeError(f"expected rank 3 or 4 image tensor, got {t.shape}")
    return t


def _window_filter(x: Tensor, win_col: Tensor, win_row: Tensor) -> Tensor:
    # per-channel valid convolution; the Gaussian window is separable, so
    # apply the (k,1) and (1,k) factors in sequence
    b, c, h, w = x.shape
    flat = reshape(x, (b * c, 1, h, w))
    out = conv2d(conv2d(flat, win_col), win_row)
    return reshape(out, (b, c) + out.shape[2:])


def ssim_components(a: Tensor, b: Tensor,
                    cfg: SsimConfig | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Mean luminance term, mean contrast/structure term, and the SSIM map.

    All three are differentiable tensors; the map has the valid-region
    spatial extent.
    """
    cfg = cfg or SsimConfig()
    a = _as_tensor4(a)
    b = _as_tensor4(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    _, _, h, w = a.shape
    if h < cfg.window_size or w < cfg.window_size:
        raise ShapeError(
            f"image {h}x{w} smaller than window {cfg.window_size}"
        )
    ax = np.arange(cfg.window_size) - (cfg.window_size - 1) / 2.0
    g1 = np.exp(-(ax ** 2) / (2.0 * cfg.sigma ** 2))
    g1 = g1 / g1.sum()
    win_col = Tensor(g1.reshape(1, 1, -1, 1))
    win_row = Tensor(g1.reshape(1, 1, 1, -1))
    mu_a = _window_filter(a, win_col, win_row)
    mu_b = _window_filter(b, win_col, win_row)
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = _window_filter(a * a, win_col, win_row) - mu_aa
    var_b = _window_filter(b * b, win_col, win_row) - mu_bb
    cov = _window_filter(a * b, win_col, win_row) - mu_ab
    c1, c2 = cfg.c1, cfg.c2
    lum = (mu_ab * 2.0 + c1) / (mu_aa + mu_bb + c1)
    cs = (cov * 2.0 + c2) / (var_a + var_b + c2)
    return lum.mean(), cs.mean(), lum * cs


def ssim(a, b, cfg: SsimConfig | None = None) -> tuple[float, np.ndarray]:
    """Mean SSIM over the valid region plus the per-pixel SSIM map."""
    _, _, smap = ssim_components(a, b, cfg)
    return float(smap.data.mean()), smap.data


def ms_ssim_tensor(a, b, cfg: MsSsimConfig | None = None) -> Tensor:
    """Differentiable MS-SSIM value.

    The level count is reduced (with a warning and renormalized weights)
    when the image is too small for the full pyramid; contrast/structure
    bases are floored at 1e-6 before the fractional powers.
    """
    cfg = cfg or MsSsimConfig()
    a = _as_tensor4(a)
    b = _as_tensor4(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    _, _, h, w = a.shape
    win = cfg.ssim.window_size
    levels = cfg.levels
    # each pooling halves dims; level m needs min dim >= window * 2^(m-1)
    max_levels = 0
    m = min(h, w)
    while m >= win:
        max_levels += 1
        m //= 2
    if max_levels < 1:
        raise ShapeError(f"image {h}x{w} smaller than window {win}")
    if max_levels < levels:
        if not cfg.auto_reduce:
            raise ShapeError(
                f"image {h}x{w} supports only {max_levels} of {levels} levels"
            )
        logger.warning("ms_ssim: reducing levels %d -> %d for %dx%d input",
                       levels, max_levels, h, w)
        levels = max_levels
    weights = np.asarray(cfg.weights[:levels], dtype=np.float64)
    weights = weights / weights.sum()

    # Coarser levels contribute their mean contrast/structure term raised
    # to the level weight; the coarsest level uses the per-pixel l*cs map
    # so that a single level with weight 1 collapses exactly to SSIM.
    result: Tensor | None = None
    cur_a, cur_b = a, b
    for m in range(levels):
        lum, cs, smap = ssim_components(cur_a, cur_b, cfg.ssim)
        if m == levels - 1:
            # weight 1 needs no flooring, keeping the single-level case
            # identical to plain SSIM even for negative map values
            if weights[m] == 1.0:
                term = smap.mean()
            else:
                term = power(clip_min(smap, 1e-6), float(weights[m])).mean()
        else:
            term = power(clip_min(cs, 1e-6), float(weights[m]))
        result = term if result is None else result * term
        if m < levels - 1:
            _, _, ch, cw = cur_a.shape
            if ch % 2 or cw % 2:
                raise ShapeError(
                    f"odd extent {ch}x{cw} at pyramid level {m}; "
                    "use even input dims"
                )
            cur_a = avg_pool2(cur_a)
            cur_b = avg_pool2(cur_b)
    assert result is not None
    return result


def ms_ssim(a, b, cfg: MsSsimConfig | None = None) -> float:
    return ms_ssim_tensor(a, b, cfg).item()


def psnr(a, b, dynamic_range: float = 1.0, cap_db: float = 100.0) -> float:
    """10*log10(L^2 / MSE), capped at 100 dB when the images are identical."""
    ad = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    bd = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    if ad.shape != bd.shape:
        raise ShapeError(f"shape mismatch {ad.shape} vs {bd.shape}")
    if not (np.all(np.isfinite(ad)) and np.all(np.isfinite(bd))):
        raise ValueError("psnr requires finite inputs")
    mse = float(np.mean((ad - bd) ** 2))
    if mse == 0.0:
        return cap_db
    return min(cap_db, 10.0 * np.log10(dynamic_range ** 2 / mse))


def gray_stats(images) -> tuple[float, float]:
    """Pooled mean and standard deviation of gray values on the 0-255 scale.

    Gray value per pixel is (R + G + B) / 3 scaled by 255. The dispersion
    is reported as a standard deviation (the magnitude conventionally
    quoted for dataset brightness), pooled over all pixels of all images.
    """
    images = list(images)
    if not images:
        raise ValueError("empty image collection")
    grays = []
    for img in images:
        arr = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ShapeError(f"expected (3, H, W) image, got {arr.shape}")
        grays.append((arr.mean(axis=0) * 255.0).reshape(-1))
    pooled = np.concatenate(grays)
    return float(pooled.mean()), float(pooled.std())
