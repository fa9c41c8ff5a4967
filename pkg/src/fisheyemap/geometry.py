"""Rigid-body poses, the unified projective fisheye camera model, and camera rigs.

Conventions used throughout the package:

* Camera frame: x right, y down, z along the optical axis.
* A ``Pose`` is the map ``X_out = R @ X_in + t``.
* Continuous pixel coordinates have their origin at the top-left corner of
  the top-left pixel; the center of pixel ``(col i, row j)`` is at
  ``(i + 0.5, j + 0.5)``.
* Depth maps store the *range along the back-projected ray*, not the
  z-coordinate. With fisheye fields of view beyond 90 degrees the
  z-coordinate of a valid scene point can be zero or negative, so range is
  the only well-behaved per-pixel distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "Pose",
    "FisheyeCamera",
    "CameraRig",
    "camera_rays",
]

_ORTHO_TOL = 1e-9
_PROJ_EPS = 1e-9


def _quat_to_matrix(qx: float, qy: float, qz: float, qw: float) -> np.ndarray:
    """Rotation matrix from a unit quaternion in (x, y, z, w) order."""
    n = math.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
    if n < 1e-12:
        raise ValueError("zero-norm quaternion")
    qx, qy, qz, qw = qx / n, qy / n, qz / n, qw / n
    return np.array(
        [
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ],
        dtype=np.float64,
    )


def _matrix_to_quat(R: np.ndarray) -> tuple[float, float, float, float]:
    """Unit quaternion (x, y, z, w) from a rotation matrix, w >= 0."""
    m = np.asarray(R, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        qw = 0.25 * s
        qx = (m[2, 1] - m[1, 2]) / s
        qy = (m[0, 2] - m[2, 0]) / s
        qz = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        qw = (m[2, 1] - m[1, 2]) / s
        qx = 0.25 * s
        qy = (m[0, 1] + m[1, 0]) / s
        qz = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        qw = (m[0, 2] - m[2, 0]) / s
        qx = (m[0, 1] + m[1, 0]) / s
        qy = 0.25 * s
        qz = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        qw = (m[1, 0] - m[0, 1]) / s
        qx = (m[0, 2] + m[2, 0]) / s
        qy = (m[1, 2] + m[2, 1]) / s
        qz = 0.25 * s
    if qw < 0:
        qx, qy, qz, qw = -qx, -qy, -qz, -qw
    return (qx, qy, qz, qw)


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``X_out = rotation @ X_in + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        R = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64)).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        err = np.abs(R @ R.T - np.eye(3)).max()
        if err > _ORTHO_TOL:
            raise ValueError(f"rotation is not orthonormal (max |R R^T - I| = {err:.2e})")
        if np.linalg.det(R) < 0:
            raise ValueError("rotation has negative determinant")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quaternion(t: np.ndarray, qx: float, qy: float, qz: float, qw: float) -> "Pose":
        return Pose(_quat_to_matrix(qx, qy, qz, qw), np.asarray(t, dtype=np.float64))

    def to_quaternion(self) -> tuple[float, float, float, float]:
        return _matrix_to_quat(self.rotation)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Apply the transform to one point or an array of points (..., 3)."""
        X = np.asarray(X, dtype=np.float64)
        return X @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """Transform that applies ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M


def se3_apply(pose: Pose, X: np.ndarray) -> np.ndarray:
    """``R @ X + t`` for one point or an array of points."""
    return pose.apply(X)


@dataclass(frozen=True)
class FisheyeCamera:
    """Unified projective (mirror-parameter) fisheye camera.

    Projection maps a camera-frame point onto the unit sphere, shifts the
    sphere point by ``xi`` along z, and applies a perspective divide followed
    by the pinhole intrinsics. ``xi = 0`` degenerates to a plain pinhole.
    """

    xi: float
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.xi <= 3.0):
            raise ValueError(f"xi must be in [0, 3], got {self.xi}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if self.xi > 1.0:
            # Valid normalized radius shrinks as 1/sqrt(xi^2-1); an image that
            # contains no valid pixel at all is a configuration error.
            rad_max = 1.0 / math.sqrt(self.xi**2 - 1.0)
            corner = min(self.cx, self.width - self.cx) / self.fx
            if corner > 10 * rad_max:
                raise ValueError("xi leaves an empty valid-pixel domain")

    def project(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project camera-frame points (..., 3) to continuous pixel coords.

        Returns ``(uv, valid)``. Invalid entries (perspective denominator too
        small or pixel outside ``[0, width) x [0, height)``) hold NaN.
        """
        X = np.asarray(X, dtype=np.float64)
        rho = np.linalg.norm(X, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            denom = X[..., 2] / rho + self.xi
            u = self.fx * (X[..., 0] / rho) / denom + self.cx
            v = self.fy * (X[..., 1] / rho) / denom + self.cy
        valid = (
            np.isfinite(rho)
            & (rho > 0)
            & (denom > _PROJ_EPS)
            & (u >= 0.0)
            & (u < self.width)
            & (v >= 0.0)
            & (v < self.height)
        )
        uv = np.stack([u, v], axis=-1)
        uv[~valid] = np.nan
        return uv, valid

    def back_project(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unit ray directions for continuous pixel coords (..., 2).

        Returns ``(rays, valid)``; rays are unit length. Pixels whose
        normalized radius falls outside the model's valid domain (possible
        only for ``xi > 1``) are invalid and hold NaN.
        """
        p = np.asarray(p, dtype=np.float64)
        x = (p[..., 0] - self.cx) / self.fx
        y = (p[..., 1] - self.cy) / self.fy
        r2 = x * x + y * y
        radicand = 1.0 + (1.0 - self.xi**2) * r2
        valid = radicand >= 0.0
        with np.errstate(invalid="ignore"):
            eta = (self.xi + np.sqrt(np.where(valid, radicand, np.nan))) / (r2 + 1.0)
            ray = np.stack([eta * x, eta * y, eta - self.xi], axis=-1)
            ray /= np.linalg.norm(ray, axis=-1, keepdims=True)
        ray[~valid] = np.nan
        return ray, valid

    def downsampled(self, factor: int = 2) -> "FisheyeCamera":
        """Camera of the image downsampled by an integer box filter.

        With the half-pixel-origin convention, continuous coordinates scale
        exactly by ``1/factor``, so intrinsics divide by the factor.
        """
        if self.width % factor or self.height % factor:
            raise ValueError("image size must be divisible by the factor")
        return FisheyeCamera(
            xi=self.xi,
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=self.cx / factor,
            cy=self.cy / factor,
            width=self.width // factor,
            height=self.height // factor,
        )

    def cropped(self, x0: int, y0: int, w: int, h: int) -> "FisheyeCamera":
        """Camera of the ``w x h`` sub-image whose top-left pixel is (x0, y0)."""
        if x0 < 0 or y0 < 0 or x0 + w > self.width or y0 + h > self.height:
            raise ValueError("crop outside image bounds")
        return FisheyeCamera(
            xi=self.xi,
            fx=self.fx,
            fy=self.fy,
            cx=self.cx - x0,
            cy=self.cy - y0,
            width=w,
            height=h,
        )


@lru_cache(maxsize=64)
def camera_rays(cam: FisheyeCamera) -> np.ndarray:
    """Unit back-projected rays through every pixel center, shape (H, W, 3).

    Pixels outside the model's valid domain hold NaN. The result is cached
    and read-only.
    """
    u = np.arange(cam.width, dtype=np.float64) + 0.5
    v = np.arange(cam.height, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    rays, _ = cam.back_project(np.stack([uu, vv], axis=-1))
    rays.setflags(write=False)
    return rays


@dataclass(frozen=True)
class CameraRig:
    """Ordered set of cameras with rig-to-camera extrinsics.

    ``extrinsics[i]`` maps rig/body-frame points into camera ``i``'s frame.
    """

    cameras: tuple[FisheyeCamera, ...]
    extrinsics: tuple[Pose, ...]
    reference_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "extrinsics", tuple(self.extrinsics))
        if len(self.cameras) == 0:
            raise ValueError("rig needs at least one camera")
        if len(self.cameras) != len(self.extrinsics):
            raise ValueError("one extrinsic per camera required")
        if not (0 <= self.reference_index < len(self.cameras)):
            raise ValueError("reference_index out of range")

    def __len__(self) -> int:
        return len(self.cameras)

    @property
    def reference_camera(self) -> FisheyeCamera:
        return self.cameras[self.reference_index]

    def ref_to_cam(self, i: int) -> Pose:
        """Transform from the reference camera frame to camera ``i``'s frame."""
        return self.extrinsics[i].compose(self.extrinsics[self.reference_index].inverse())

    def cam_from_world(self, i: int, body_in_world: Pose) -> Pose:
        """World-to-camera transform given the body's world pose."""
        return self.extrinsics[i].compose(body_in_world.inverse())

    def subset(self, indices: list[int]) -> "CameraRig":
        """Rig restricted to the given camera indices (must keep the reference)."""
        if self.reference_index not in indices:
            raise ValueError("camera subset must include the reference camera")
        return CameraRig(
            cameras=tuple(self.cameras[i] for i in indices),
            extrinsics=tuple(self.extrinsics[i] for i in indices),
            reference_index=indices.index(self.reference_index),
        )
