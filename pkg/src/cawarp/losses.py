"""Training objectives and image-quality metrics.

All reductions are means over valid pixels (and channels), so loss magnitudes
do not depend on the patch size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor, absolute, as_tensor, matmul, tsum
from .errors import ConfigurationError, DimensionError, UnsupervisableError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PSNR_CAP = 99.0


def _mask_tensor(mask, shape, dtype) -> tuple[Tensor, float]:
    """Broadcast an ``H x W`` mask over channels; returns the mask and its element count."""
    m = np.ones(shape[-2:], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != tuple(shape[-2:]):
        raise DimensionError(f"mask {m.shape} does not match image {shape}")
    count = float(m.sum()) * (shape[0] if len(shape) == 3 else 1)
    if count == 0:
        raise UnsupervisableError("valid mask is empty")
    return Tensor(np.broadcast_to(m, shape), dtype=dtype), count


def masked_l1(pred, gt, mask=None) -> Tensor:
    pred = as_tensor(pred)
    m, count = _mask_tensor(mask, pred.shape, pred.dtype)
    return tsum(absolute(pred - Tensor(gt, dtype=pred.dtype)) * m) * (1.0 / count)


def recon_loss(final, intermediate, warped, gt, valid_mask=None) -> Tensor:
    """Sum of masked mean absolute errors of the final, blended and each warped view."""
    total = masked_l1(final, gt, valid_mask) + masked_l1(intermediate, gt, valid_mask)
    for w in warped:
        total = total + masked_l1(w, gt, valid_mask)
    return total


# -- SSIM ------------------------------------------------------------------------------


def _gaussian_band(n: int, size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """``(n - size + 1) x n`` matrix whose rows are shifted normalized Gaussian windows."""
    if n < size:
        raise ConfigurationError(f"SSIM window {size} larger than image extent {n}")
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    band = np.zeros((n - size + 1, n))
    for i in range(n - size + 1):
        band[i, i : i + size] = g
    return band


def _blur(x: Tensor, rows: Tensor, cols: Tensor) -> Tensor:
    return matmul(matmul(rows, x), cols)


def ssim_map(a, b) -> Tensor:
    """Per-window SSIM over valid window positions: ``C x (H-10) x (W-10)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"ssim operands differ in shape: {a.shape} vs {b.shape}")
    H, W = a.shape[-2:]
    rows = Tensor(_gaussian_band(H), dtype=a.dtype)
    cols = Tensor(_gaussian_band(W).T, dtype=a.dtype)
    mu_a, mu_b = _blur(a, rows, cols), _blur(b, rows, cols)
    var_a = _blur(a * a, rows, cols) - mu_a * mu_a
    var_b = _blur(b * b, rows, cols) - mu_b * mu_b
    cov = _blur(a * b, rows, cols) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def _window_mask(mask) -> np.ndarray | None:
    """Window positions whose whole footprint lies in ``mask`` (window centres as fallback)."""
    if mask is None:
        return None
    m = np.asarray(mask, dtype=np.float64)
    H, W = m.shape
    full = sliding_window_view(m, (SSIM_WINDOW, SSIM_WINDOW)).min(axis=(-2, -1)) > 0.5
    if not full.any():
        k = SSIM_WINDOW // 2
        full = m[k : H - k, k : W - k] > 0.5
    return full


def ssim_tensor(a, b, mask=None) -> Tensor:
    s = ssim_map(a, b)
    wm = _window_mask(mask)
    m, count = _mask_tensor(wm, s.shape, s.dtype)
    return tsum(s * m) * (1.0 / count)


def ssim(a, b, mask=None) -> float:
    """Mean windowed SSIM of two images in [0, 1] (11x11 Gaussian window, sigma 1.5)."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[None], b[None]
    return float(ssim_tensor(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64), mask).data)


def ssim_loss(pred, gt, mask=None) -> Tensor:
    pred = as_tensor(pred)
    return (1.0 - ssim_tensor(pred, Tensor(gt, dtype=pred.dtype), mask)) * 0.5


# -- weight smoothness -----------------------------------------------------------------


def weight_smoothness(volumes) -> Tensor:
    """Sum over sources and slices of the mean absolute forward difference in x plus in y.

    Differences are only taken between two pixels that are both valid for the
    slice; slices without any valid pair contribute 0.
    """
    total = None
    for vol in volumes:
        w, valid = vol.weights, vol.validity
        for axis in (2, 1):
            n = w.shape[axis]
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis], hi[axis] = slice(0, n - 1), slice(1, n)
            pair = valid[tuple(lo)] & valid[tuple(hi)]
            counts = pair.sum(axis=(1, 2))
            inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0).reshape(-1, 1, 1)
            diff = absolute(w[tuple(hi)] - w[tuple(lo)])
            term = tsum(diff * Tensor(pair * inv, dtype=w.dtype))
            total = term if total is None else total + term
    if total is None:
        return Tensor(np.zeros(()))
    return total


# -- composite -------------------------------------------------------------------------


@dataclass
class LossReport:
    recon: float
    ssim_loss: float
    weight_smooth: float
    perceptual: float | None
    total: float
    lam: float
    tensor: Tensor | None = None

    def as_row(self) -> dict:
        return {
            "recon": self.recon,
            "ssim_loss": self.ssim_loss,
            "weight_smooth": self.weight_smooth,
            "total": self.total,
        }


def _value(x) -> float:
    return float(x.data) if isinstance(x, Tensor) else float(x)


def total_loss(parts, lam: float = 0.01) -> LossReport:
    """Combine ``(recon, perceptual, ssim_loss, weight_smooth)`` into a :class:`LossReport`.

    ``parts`` is a mapping or a 4-tuple in that order; ``perceptual`` may be
    ``None`` when no feature extractor is configured.  Tensor parts keep the
    graph so the returned ``tensor`` can be back-propagated.
    """
    if lam < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam}")
    if isinstance(parts, dict):
        recon, perceptual = parts["recon"], parts.get("perceptual")
        ssim_l, smooth = parts["ssim_loss"], parts["weight_smooth"]
    else:
        recon, perceptual, ssim_l, smooth = parts
    terms = [recon, ssim_l] + ([perceptual] if perceptual is not None else [])
    if lam > 0:
        terms.append(smooth * lam if isinstance(smooth, Tensor) else lam * _value(smooth))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return LossReport(
        recon=_value(recon),
        ssim_loss=_value(ssim_l),
        weight_smooth=_value(smooth),
        perceptual=None if perceptual is None else _value(perceptual),
        total=_value(total),
        lam=lam,
        tensor=total if isinstance(total, Tensor) else None,
    )


def perceptual_loss(extractor: Callable[[Tensor], list] | None, pred, gt) -> Tensor | None:
    """Sum of mean absolute feature differences under a host-supplied extractor.

    Returns ``None`` when no extractor is configured (the default).
    """
    if extractor is None:
        return None
    pred = as_tensor(pred)
    total = None
    for fp, fg in zip(extractor(pred), extractor(Tensor(gt, dtype=pred.dtype))):
        fg = fg.data if isinstance(fg, Tensor) else fg
        term = tsum(absolute(fp - Tensor(fg, dtype=pred.dtype))) * (1.0 / fg.size)
        total = term if total is None else total + term
    return total


# -- metrics ---------------------------------------------------------------------------


def psnr(a, b, mask=None) -> float:
    """``10 log10(1 / MSE)`` on [0, 1] images, capped at 99 dB."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr operands differ in shape: {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), sq.shape)
        if not m.any():
            raise UnsupervisableError("psnr mask is empty")
        sq = sq[m]
    mse = float(np.mean(sq))
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return 10.0 * np.log10(1.0 / mse)
