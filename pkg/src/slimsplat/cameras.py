"""Pinhole camera model and pose helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError


@dataclass(eq=False)
class Camera:
    """Pinhole camera: intrinsics in pixels, world-to-camera pose, image size.

    The camera looks down +z of its own frame (COLMAP convention) and pixel
    centers sit on integer coordinates, so the principal point of a centered
    W x H sensor is ((W - 1) / 2, (H - 1) / 2).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray  # (3, 3) world -> camera rotation
    t: np.ndarray  # (3,) translation, x_cam = R @ x_world + t
    width: int
    height: int
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.width < 1 or self.height < 1:
            raise ContractViolationError("camera image size must be >= 1x1")
        ortho_err = np.abs(self.R @ self.R.T - np.eye(3)).max()
        if ortho_err > 1e-6:
            raise ContractViolationError(
                f"camera rotation is not orthonormal (max |R R^T - I| = {ortho_err:.3e})"
            )

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.R.T @ self.t

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def resized(self, width: int, height: int) -> "Camera":
        """Same pose, intrinsics rescaled to a new pixel grid."""
        sx = width / self.width
        sy = height / self.height
        return Camera(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=(self.cx + 0.5) * sx - 0.5,
            cy=(self.cy + 0.5) * sy - 0.5,
            R=self.R.copy(),
            t=self.t.copy(),
            width=width,
            height=height,
            name=self.name,
        )


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (R, t) for a camera at `position` looking at `target`.

    Uses the COLMAP axes: +z forward, +x right, +y down.
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ContractViolationError("look_at target coincides with camera position")
    forward /= norm
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, upv)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:
        # forward parallel to up; pick an arbitrary perpendicular
        upv = np.array([1.0, 0.0, 0.0]) if abs(forward[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, upv)
        rnorm = np.linalg.norm(right)
    right /= rnorm
    down = np.cross(forward, right)
    R = np.stack([right, down, forward], axis=0)
    t = -R @ position
    return R, t
