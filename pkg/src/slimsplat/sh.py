"""Real spherical-harmonic color evaluation with per-band masking.

Coefficient layout follows the common splatting convention: band 0 is a
separate diffuse block, bands 1..3 live in a (15, 3) block ordered band-major.
The rendered color is `clamp(eval + 0.5, 0)`.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolationError

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

# index ranges of bands 1..3 inside the 15-coefficient rest block
BAND_SLICES = {1: slice(0, 3), 2: slice(3, 8), 3: slice(8, 15)}
BAND_SIZES = (3, 5, 7)


def rgb_to_dc(rgb: np.ndarray) -> np.ndarray:
    """Band-0 coefficients reproducing `rgb` under the +0.5 offset."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def dc_to_rgb(dc: np.ndarray) -> np.ndarray:
    return np.asarray(dc, dtype=np.float64) * SH_C0 + 0.5


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values for bands 0..degree, shape (N, (degree+1)^2)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out = np.empty((n, (degree + 1) ** 2))
    out[:, 0] = SH_C0
    if degree >= 1:
        out[:, 1] = -SH_C1 * y
        out[:, 2] = SH_C1 * z
        out[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = SH_C2[0] * x * y
        out[:, 5] = SH_C2[1] * y * z
        out[:, 6] = SH_C2[2] * (2 * zz - xx - yy)
        out[:, 7] = SH_C2[3] * x * z
        out[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 9] = SH_C3[0] * y * (3 * xx - yy)
        out[:, 10] = SH_C3[1] * x * y * z
        out[:, 11] = SH_C3[2] * y * (4 * zz - xx - yy)
        out[:, 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[:, 13] = SH_C3[4] * x * (4 * zz - xx - yy)
        out[:, 14] = SH_C3[5] * z * (xx - yy)
        out[:, 15] = SH_C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(dir), shape (N, (degree+1)^2, 3)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    g = np.zeros((n, (degree + 1) ** 2, 3))
    if degree >= 1:
        g[:, 1, 1] = -SH_C1
        g[:, 2, 2] = SH_C1
        g[:, 3, 0] = -SH_C1
    if degree >= 2:
        g[:, 4, 0] = SH_C2[0] * y
        g[:, 4, 1] = SH_C2[0] * x
        g[:, 5, 1] = SH_C2[1] * z
        g[:, 5, 2] = SH_C2[1] * y
        g[:, 6, 0] = SH_C2[2] * (-2 * x)
        g[:, 6, 1] = SH_C2[2] * (-2 * y)
        g[:, 6, 2] = SH_C2[2] * (4 * z)
        g[:, 7, 0] = SH_C2[3] * z
        g[:, 7, 2] = SH_C2[3] * x
        g[:, 8, 0] = SH_C2[4] * (2 * x)
        g[:, 8, 1] = SH_C2[4] * (-2 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        g[:, 9, 0] = SH_C3[0] * 6 * x * y
        g[:, 9, 1] = SH_C3[0] * (3 * xx - 3 * yy)
        g[:, 10, 0] = SH_C3[1] * y * z
        g[:, 10, 1] = SH_C3[1] * x * z
        g[:, 10, 2] = SH_C3[1] * x * y
        g[:, 11, 0] = SH_C3[2] * (-2 * x * y)
        g[:, 11, 1] = SH_C3[2] * (4 * zz - xx - 3 * yy)
        g[:, 11, 2] = SH_C3[2] * (8 * y * z)
        g[:, 12, 0] = SH_C3[3] * (-6 * x * z)
        g[:, 12, 1] = SH_C3[3] * (-6 * y * z)
        g[:, 12, 2] = SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)
        g[:, 13, 0] = SH_C3[4] * (4 * zz - 3 * xx - yy)
        g[:, 13, 1] = SH_C3[4] * (-2 * x * y)
        g[:, 13, 2] = SH_C3[4] * (8 * x * z)
        g[:, 14, 0] = SH_C3[5] * (2 * x * z)
        g[:, 14, 1] = SH_C3[5] * (-2 * y * z)
        g[:, 14, 2] = SH_C3[5] * (xx - yy)
        g[:, 15, 0] = SH_C3[6] * (3 * xx - 3 * yy)
        g[:, 15, 1] = SH_C3[6] * (-6 * x * y)
    return g


def _band_mask_per_coeff(band_masks: np.ndarray, degree: int) -> np.ndarray:
    """Expand per-band hard masks (N, 3) to per-rest-coefficient (N, K)."""
    n = band_masks.shape[0]
    k = (degree + 1) ** 2 - 1
    out = np.ones((n, k))
    for l in (1, 2, 3):
        if l > degree:
            break
        out[:, BAND_SLICES[l]] = band_masks[:, l - 1 : l]
    return out


def sh_to_color(
    sh_dc: np.ndarray,
    sh_rest: np.ndarray,
    view_dirs: np.ndarray,
    active_degree: int,
    band_masks: np.ndarray | None = None,
) -> np.ndarray:
    """View-dependent RGB from SH coefficients, masked per band.

    band_masks: (N, 3) hard masks for bands 1..3 (band 0 is never masked);
    None means all bands enabled. Colors are offset by +0.5 and clamped at 0.
    """
    if not 0 <= active_degree <= 3:
        raise ContractViolationError("active_degree must be in 0..3")
    sh_dc = np.atleast_2d(np.asarray(sh_dc, dtype=np.float64))
    n = sh_dc.shape[0]
    if n == 0:
        return np.zeros((0, 3))
    color = SH_C0 * sh_dc + 0.5
    if active_degree > 0:
        basis = sh_basis(view_dirs, active_degree)[:, 1:]
        k = basis.shape[1]
        rest = np.asarray(sh_rest, dtype=np.float64).reshape(n, -1, 3)[:, :k]
        if band_masks is not None:
            rest = rest * _band_mask_per_coeff(np.asarray(band_masks, dtype=np.float64), active_degree)[:, :, None]
        color = color + np.einsum("nk,nkc->nc", basis, rest)
    return np.maximum(color, 0.0)


def sh_color_backward(
    sh_dc: np.ndarray,
    sh_rest: np.ndarray,
    view_dirs: np.ndarray,
    active_degree: int,
    band_masks: np.ndarray | None,
    dcolor: np.ndarray,
    compute_rest: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Backward of `sh_to_color`.

    Returns (d_dc, d_rest, d_band_mask, d_dirs); d_rest/d_band_mask are zeros
    when `compute_rest` is False (decimated higher-band updates) or the
    active degree is 0.
    """
    sh_dc = np.atleast_2d(np.asarray(sh_dc, dtype=np.float64))
    n = sh_dc.shape[0]
    rest = np.asarray(sh_rest, dtype=np.float64).reshape(n, -1, 3)

    # clamp subgradient: no flow where the pre-clamp color was negative
    pre = SH_C0 * sh_dc + 0.5
    if active_degree > 0:
        basis_full = sh_basis(view_dirs, active_degree)
        basis = basis_full[:, 1:]
        k = basis.shape[1]
        mask_pc = (
            _band_mask_per_coeff(np.asarray(band_masks, dtype=np.float64), active_degree)
            if band_masks is not None
            else np.ones((n, k))
        )
        masked_rest = rest[:, :k] * mask_pc[:, :, None]
        pre = pre + np.einsum("nk,nkc->nc", basis, masked_rest)
    dcolor = np.where(pre > 0.0, dcolor, 0.0)

    d_dc = SH_C0 * dcolor
    d_rest = np.zeros_like(rest)
    d_band = np.zeros((n, 3))
    d_dirs = np.zeros((n, 3))
    if active_degree > 0:
        # d(color)/d(dir) flows through the masked coefficients
        bg = sh_basis_grad(view_dirs, active_degree)[:, 1:]
        d_dirs = np.einsum("nkd,nkc,nc->nd", bg, masked_rest, dcolor)
        if compute_rest:
            d_masked = np.einsum("nk,nc->nkc", basis, dcolor)
            d_rest[:, :k] = d_masked * mask_pc[:, :, None]
            if band_masks is not None:
                per_coeff = np.einsum("nkc,nkc->nk", d_masked, rest[:, :k])
                for l in (1, 2, 3):
                    if l > active_degree:
                        break
                    d_band[:, l - 1] = per_coeff[:, BAND_SLICES[l]].sum(axis=1)
    return d_dc, d_rest, d_band, d_dirs
