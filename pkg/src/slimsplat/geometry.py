"""Gaussian parameterization, covariance construction, and perspective projection.

All functions are batched over N Gaussians and pure; backward companions
return exact analytic derivatives for the chain the rasterizer needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import Camera
from .errors import ContractViolationError, DegenerateRotationError, SingularCovarianceError

NEAR_PLANE = 0.01


def normalize_quaternions(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit quaternions and their original norms; rejects zero-norm input."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    norms = np.linalg.norm(q, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateRotationError("quaternion with (near-)zero norm")
    return q / norms[:, None], norms


def quat_to_rotmat(q_unit: np.ndarray) -> np.ndarray:
    """Rotation matrices (N, 3, 3) from unit quaternions (w, x, y, z)."""
    w, x, y, z = q_unit[:, 0], q_unit[:, 1], q_unit[:, 2], q_unit[:, 3]
    R = np.empty((q_unit.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_backward(q_raw: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. raw (unnormalized) quaternions given dL/dR."""
    q_unit, norms = normalize_quaternions(q_raw)
    w, x, y, z = q_unit[:, 0], q_unit[:, 1], q_unit[:, 2], q_unit[:, 3]
    dq_unit = np.empty_like(q_unit)
    dq_unit[:, 0] = 2 * (
        x * (dR[:, 2, 1] - dR[:, 1, 2])
        + y * (dR[:, 0, 2] - dR[:, 2, 0])
        + z * (dR[:, 1, 0] - dR[:, 0, 1])
    )
    dq_unit[:, 1] = (
        2 * (y * (dR[:, 0, 1] + dR[:, 1, 0]) + z * (dR[:, 0, 2] + dR[:, 2, 0]))
        + 2 * w * (dR[:, 2, 1] - dR[:, 1, 2])
        - 4 * x * (dR[:, 1, 1] + dR[:, 2, 2])
    )
    dq_unit[:, 2] = (
        2 * (x * (dR[:, 0, 1] + dR[:, 1, 0]) + z * (dR[:, 1, 2] + dR[:, 2, 1]))
        + 2 * w * (dR[:, 0, 2] - dR[:, 2, 0])
        - 4 * y * (dR[:, 0, 0] + dR[:, 2, 2])
    )
    dq_unit[:, 3] = (
        2 * (x * (dR[:, 0, 2] + dR[:, 2, 0]) + y * (dR[:, 1, 2] + dR[:, 2, 1]))
        + 2 * w * (dR[:, 1, 0] - dR[:, 0, 1])
        - 4 * z * (dR[:, 0, 0] + dR[:, 1, 1])
    )
    # through the normalization q_unit = q / |q|
    inner = np.sum(dq_unit * q_unit, axis=1, keepdims=True)
    return (dq_unit - q_unit * inner) / norms[:, None]


def covariance_from_scale_rot(scales: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Sigma = R S S^T R^T with S = diag(scales); batched (N, 3, 3)."""
    L = R * scales[:, None, :]
    return L @ np.transpose(L, (0, 2, 1))


def covariance_backward(
    scales: np.ndarray, R: np.ndarray, q_raw: np.ndarray, dSigma: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(dL/dscales, dL/dq_raw) for Sigma = (R diag(s)) (R diag(s))^T."""
    L = R * scales[:, None, :]
    dL = (dSigma + np.transpose(dSigma, (0, 2, 1))) @ L
    dscales = np.einsum("nrk,nrk->nk", dL, R)
    dR = dL * scales[:, None, :]
    dq = quat_backward(q_raw, dR)
    return dscales, dq


def build_covariance(log_scale: np.ndarray, q: np.ndarray) -> np.ndarray:
    """3D covariance from log-scales and quaternions (normalized internally).

    Returns (3, 3) for single inputs and (N, 3, 3) for batches.
    """
    log_scale = np.atleast_2d(np.asarray(log_scale, dtype=np.float64))
    q_unit, _ = normalize_quaternions(q)
    cov = covariance_from_scale_rot(np.exp(log_scale), quat_to_rotmat(q_unit))
    return cov[0] if cov.shape[0] == 1 and np.asarray(q).ndim == 1 else cov


def eval_gaussian_2d(mean2d, cov2d, x) -> np.ndarray | float:
    """Unnormalized 2D Gaussian exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)).

    `cov2d` is a 2x2 matrix; `x` one point (2,) or a batch (M, 2).
    """
    mean2d = np.asarray(mean2d, dtype=np.float64).reshape(2)
    cov2d = np.asarray(cov2d, dtype=np.float64).reshape(2, 2)
    det = cov2d[0, 0] * cov2d[1, 1] - cov2d[0, 1] * cov2d[1, 0]
    if det <= 0 or not np.isfinite(det):
        raise SingularCovarianceError(f"2D covariance not positive definite (det={det})")
    inv = np.array([[cov2d[1, 1], -cov2d[0, 1]], [-cov2d[1, 0], cov2d[0, 0]]]) / det
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64)) - mean2d
    e = -0.5 * np.einsum("mi,ij,mj->m", pts, inv, pts)
    out = np.exp(e)
    return float(out[0]) if np.asarray(x).ndim == 1 else out


@dataclass
class Projection:
    """Screen-space quantities for the visible subset of a cloud.

    Index arrays refer to rows of the cloud that survived the near-plane cull;
    `valid` maps back to cloud rows.
    """

    valid: np.ndarray       # (V,) int indices into the cloud
    t_cam: np.ndarray       # (V, 3) camera-space positions
    depths: np.ndarray      # (V,)
    means2d: np.ndarray     # (V, 2) pixel coordinates
    cov2d: np.ndarray       # (V, 3) packed symmetric (c00, c01, c11), low-pass added
    conics: np.ndarray      # (V, 3) packed inverse covariance
    radii: np.ndarray       # (V,) 3-sigma screen radius in pixels
    areas: np.ndarray       # (V,) screen footprint 9*pi*sqrt(det(cov2d))


def project_gaussians(
    positions: np.ndarray,
    cov3d: np.ndarray,
    cam: Camera,
    lowpass_s: float,
    near: float = NEAR_PLANE,
) -> Projection:
    """EWA projection of 3D Gaussians to pixel space.

    Culls Gaussians at camera-space depth <= `near`. The low-pass value is
    added to the diagonal of the projected covariance (Sigma' + sI).
    """
    if lowpass_s < 0:
        raise ContractViolationError("lowpass_s must be >= 0")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    t = positions @ cam.R.T + cam.t
    valid = np.flatnonzero(t[:, 2] > near)
    t = t[valid]
    tz = t[:, 2]

    means2d = np.stack([cam.fx * t[:, 0] / tz + cam.cx, cam.fy * t[:, 1] / tz + cam.cy], axis=1)

    # Jacobian of the pinhole map at t, rows (du, dv), columns (dtx, dty, dtz)
    V = t.shape[0]
    J = np.zeros((V, 2, 3))
    J[:, 0, 0] = cam.fx / tz
    J[:, 0, 2] = -cam.fx * t[:, 0] / tz**2
    J[:, 1, 1] = cam.fy / tz
    J[:, 1, 2] = -cam.fy * t[:, 1] / tz**2

    M = J @ cam.R
    cov_full = M @ np.asarray(cov3d, dtype=np.float64)[valid] @ np.transpose(M, (0, 2, 1))
    c00 = cov_full[:, 0, 0] + lowpass_s
    c01 = cov_full[:, 0, 1]
    c11 = cov_full[:, 1, 1] + lowpass_s

    det = c00 * c11 - c01 * c01
    # with lowpass_s possibly 0, protect against numerically flat Gaussians
    ok = det > 1e-300
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    conics = np.stack([c11 * inv_det, -c01 * inv_det, c00 * inv_det], axis=1)

    mid = 0.5 * (c00 + c11)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radii = 3.0 * np.sqrt(np.maximum(lam_max, 0.0))
    areas = 9.0 * np.pi * np.sqrt(np.maximum(det, 0.0))

    keep = ok
    return Projection(
        valid=valid[keep],
        t_cam=t[keep],
        depths=tz[keep],
        means2d=means2d[keep],
        cov2d=np.stack([c00, c01, c11], axis=1)[keep],
        conics=conics[keep],
        radii=radii[keep],
        areas=areas[keep],
    )


def project_backward(
    proj: Projection,
    cov3d: np.ndarray,
    cam: Camera,
    dmeans2d: np.ndarray,
    dcov2d: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward of `project_gaussians` for the visible subset.

    `dcov2d` is packed (g00, g01, g11) where g01 already sums both symmetric
    slots. Returns (dL/dpositions_world (V, 3), dL/dcov3d (V, 3, 3)); the
    low-pass addition has zero derivative w.r.t. the inputs.
    """
    t = proj.t_cam
    tz = t[:, 2]
    fx, fy = cam.fx, cam.fy

    V = t.shape[0]
    J = np.zeros((V, 2, 3))
    J[:, 0, 0] = fx / tz
    J[:, 0, 2] = -fx * t[:, 0] / tz**2
    J[:, 1, 1] = fy / tz
    J[:, 1, 2] = -fy * t[:, 1] / tz**2
    M = J @ cam.R

    G = np.empty((V, 2, 2))
    G[:, 0, 0] = dcov2d[:, 0]
    G[:, 0, 1] = 0.5 * dcov2d[:, 1]
    G[:, 1, 0] = 0.5 * dcov2d[:, 1]
    G[:, 1, 1] = dcov2d[:, 2]

    sigma = np.asarray(cov3d, dtype=np.float64)[proj.valid]
    dcov3d = np.transpose(M, (0, 2, 1)) @ G @ M
    dM = 2.0 * (G @ M @ sigma)
    dJ = dM @ cam.R.T

    # camera-space position gradient through the Jacobian entries
    dt = np.zeros((V, 3))
    dt[:, 0] = dJ[:, 0, 2] * (-fx / tz**2)
    dt[:, 1] = dJ[:, 1, 2] * (-fy / tz**2)
    dt[:, 2] = (
        dJ[:, 0, 0] * (-fx / tz**2)
        + dJ[:, 1, 1] * (-fy / tz**2)
        + dJ[:, 0, 2] * (2 * fx * t[:, 0] / tz**3)
        + dJ[:, 1, 2] * (2 * fy * t[:, 1] / tz**3)
    )

    # ... and through the projected mean itself
    dt[:, 0] += dmeans2d[:, 0] * fx / tz
    dt[:, 1] += dmeans2d[:, 1] * fy / tz
    dt[:, 2] += -(dmeans2d[:, 0] * fx * t[:, 0] + dmeans2d[:, 1] * fy * t[:, 1]) / tz**2

    dpos = dt @ cam.R
    return dpos, dcov3d
