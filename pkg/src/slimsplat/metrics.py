"""Image quality metrics: PSNR and SSIM (reference 2D window + fast separable).

The fast SSIM computes its local statistics with two 1D Gaussian passes
instead of one 11x11 2D convolution and returns the exact analytic gradient
of the mean SSIM w.r.t. the first image, including the symmetric-padding
boundary terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import correlate, correlate1d

from .errors import ContractViolationError


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 3:
            raise ContractViolationError("SSIM window must be odd and >= 3")
        if self.sigma <= 0:
            raise ContractViolationError("SSIM sigma must be > 0")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


PSNR_IDENTICAL = float("inf")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) in dB; inf sentinel for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolationError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_taps(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    taps = np.exp(-0.5 * (x / sigma) ** 2)
    return taps / taps.sum()


@lru_cache(maxsize=32)
def _pad_index_map(height: int, width: int, radius: int) -> np.ndarray:
    """Flat source index of each pixel of the symmetric-padded image."""
    idx = np.arange(height * width, dtype=np.int64).reshape(height, width)
    return np.pad(idx, radius, mode="symmetric")


def _as_channels(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[:, :, None]
    if img.ndim == 3:
        return img
    raise ContractViolationError("images must be (H, W) or (H, W, C)")


def _check_pair(a: np.ndarray, b: np.ndarray, params: SsimParams):
    if a.shape != b.shape:
        raise ContractViolationError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] < params.window or a.shape[1] < params.window:
        raise ContractViolationError("image smaller than the SSIM window")


def _ssim_map(mu_a, mu_b, s_aa, s_bb, s_ab, params: SsimParams):
    """SSIM map and its four building blocks from raw windowed sums."""
    var_a = s_aa - mu_a * mu_a
    var_b = s_bb - mu_b * mu_b
    cov = s_ab - mu_a * mu_b
    a1 = 2 * mu_a * mu_b + params.c1
    a2 = 2 * cov + params.c2
    b1 = mu_a * mu_a + mu_b * mu_b + params.c1
    b2 = var_a + var_b + params.c2
    return (a1 * a2) / (b1 * b2), a1, a2, b1, b2


def ssim_reference(a: np.ndarray, b: np.ndarray, params: SsimParams = SsimParams()) -> float:
    """Mean SSIM with a full 2D Gaussian window and symmetric-padded borders."""
    a = _as_channels(a)
    b = _as_channels(b)
    _check_pair(a, b, params)
    taps = gaussian_taps(params.window, params.sigma)
    kernel = np.outer(taps, taps)
    r = params.window // 2
    total = 0.0
    for c in range(a.shape[2]):
        ap = np.pad(a[:, :, c], r, mode="symmetric")
        bp = np.pad(b[:, :, c], r, mode="symmetric")

        def win(img):
            return correlate(img, kernel, mode="constant")[r:-r, r:-r]

        smap, *_ = _ssim_map(win(ap), win(bp), win(ap * ap), win(bp * bp), win(ap * bp), params)
        total += float(np.mean(smap))
    return total / a.shape[2]


def _sep_win(padded: np.ndarray, taps: np.ndarray, r: int) -> np.ndarray:
    out = correlate1d(padded, taps, axis=0, mode="constant")
    out = correlate1d(out, taps, axis=1, mode="constant")
    return out[r:-r, r:-r]


def _sep_adjoint(upstream: np.ndarray, taps: np.ndarray, idx_map: np.ndarray, r: int) -> np.ndarray:
    """Exact adjoint of `_sep_win`, folding padded pixels onto their sources."""
    h, w = upstream.shape
    canvas = np.zeros((h + 2 * r, w + 2 * r))
    canvas[r : r + h, r : r + w] = upstream
    canvas = correlate1d(canvas, taps, axis=0, mode="constant")
    canvas = correlate1d(canvas, taps, axis=1, mode="constant")
    out = np.zeros(h * w)
    np.add.at(out, idx_map.ravel(), canvas.ravel())
    return out.reshape(h, w)


def ssim_fast(
    a: np.ndarray,
    b: np.ndarray,
    params: SsimParams = SsimParams(),
    compute_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    """Separable-window SSIM; returns (value, d(mean SSIM)/d(a) or None).

    The value matches `ssim_reference` up to floating-point reassociation
    (a Gaussian window is exactly separable).
    """
    orig_ndim = np.asarray(a).ndim
    a = _as_channels(a)
    b = _as_channels(b)
    _check_pair(a, b, params)
    taps = gaussian_taps(params.window, params.sigma)
    r = params.window // 2
    h, w, channels = a.shape
    idx_map = _pad_index_map(h, w, r)
    inv_count = 1.0 / (h * w * channels)

    total = 0.0
    grad = np.zeros((h, w, channels)) if compute_grad else None
    for c in range(channels):
        ac = a[:, :, c]
        bc = b[:, :, c]
        ap = ac.ravel()[idx_map]
        bp = bc.ravel()[idx_map]
        mu_a = _sep_win(ap, taps, r)
        mu_b = _sep_win(bp, taps, r)
        s_aa = _sep_win(ap * ap, taps, r)
        s_bb = _sep_win(bp * bp, taps, r)
        s_ab = _sep_win(ap * bp, taps, r)
        smap, a1, a2, b1, b2 = _ssim_map(mu_a, mu_b, s_aa, s_bb, s_ab, params)
        total += float(smap.sum()) * inv_count
        if not compute_grad:
            continue
        # partials of the SSIM map w.r.t. the raw windowed sums
        denom = b1 * b2
        d_saa = -smap / b2
        d_sab = 2 * a1 / denom
        d_mu_a = 2 * mu_b * (a2 - a1) / denom - 2 * mu_a * smap * (1.0 / b1 - 1.0 / b2)
        grad[:, :, c] = (
            _sep_adjoint(d_mu_a, taps, idx_map, r)
            + 2 * ac * _sep_adjoint(d_saa, taps, idx_map, r)
            + bc * _sep_adjoint(d_sab, taps, idx_map, r)
        ) * inv_count

    if compute_grad and orig_ndim == 2:
        grad = grad[:, :, 0]
    return total, grad
