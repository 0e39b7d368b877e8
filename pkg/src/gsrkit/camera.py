"""Pinhole camera parameters and rotation helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidCameraError(ValueError):
    pass


def rodrigues(omega) -> np.ndarray:
    """Rotation matrix for the axis-angle vector ``omega``."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    K = np.array([[0.0, -omega[2], omega[1]], [omega[2], 0.0, -omega[0]], [-omega[1], omega[0], 0.0]])
    if theta < 1e-8:
        # second-order series keeps the result orthonormal to ~1e-24
        return np.eye(3) + K + 0.5 * K @ K
    K /= theta
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def nearest_rotation(M) -> np.ndarray:
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def chordal_distance(R1, R2) -> float:
    return float(np.linalg.norm(np.asarray(R1) - np.asarray(R2)))


def look_at(center, target, roll: float = 0.0) -> np.ndarray:
    """World-to-camera rotation for a camera at ``center`` looking at ``target``.

    Camera axes follow the image convention: x right, y down, z forward.
    """
    center = np.asarray(center, dtype=float)
    fwd = np.asarray(target, dtype=float) - center
    fwd /= np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    n = np.linalg.norm(right)
    if n < 1e-12:
        raise InvalidCameraError("viewing direction is vertical; roll is undefined")
    right /= n
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    if roll:
        R = rodrigues([0.0, 0.0, roll]) @ R
    return R


def pan_tilt_rotation(pan: float, tilt: float, roll: float = 0.0) -> np.ndarray:
    """Rotation for a camera whose optical axis has heading ``pan`` from +y
    (positive toward +x) and elevation ``tilt`` (negative looks down)."""
    fwd = np.array([np.sin(pan) * np.cos(tilt), np.cos(pan) * np.cos(tilt), np.sin(tilt)])
    return look_at(np.zeros(3), fwd, roll)


@dataclass(frozen=True, eq=False)
class CameraParams:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    skew: float = 0.0

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        for name in ("fx", "fy", "cx", "cy", "skew"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def from_center(cls, f, cx, cy, R, center, fy=None) -> "CameraParams":
        R = np.asarray(R, dtype=float)
        t = -R @ np.asarray(center, dtype=float)
        return cls(f, f if fy is None else fy, cx, cy, R, t)

    @classmethod
    def from_K_Rt(cls, K, Rt) -> "CameraParams":
        K = np.asarray(K, dtype=float)
        Rt = np.asarray(Rt, dtype=float)
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2], Rt[:, :3], Rt[:, 3], skew=K[0, 1])

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def Rt(self) -> np.ndarray:
        return np.hstack([self.R, self.t[:, None]])

    @property
    def P(self) -> np.ndarray:
        return self.K @ self.Rt

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def ground_homography(self) -> np.ndarray:
        """3x3 map from pitch-plane (X, Y, 1) to homogeneous pixels."""
        return self.K @ np.column_stack([self.R[:, 0], self.R[:, 1], self.t])

    def scaled(self, s: float) -> "CameraParams":
        """Same pose with intrinsics for an image resized by ``s``."""
        return CameraParams(self.fx * s, self.fy * s, self.cx * s, self.cy * s, self.R, self.t, self.skew * s)

    def with_focal(self, f: float) -> "CameraParams":
        return CameraParams(f, f * self.fy / self.fx, self.cx, self.cy, self.R, self.t, self.skew)

    def problems(self, tol: float = 1e-8) -> list[str]:
        out = []
        if not (self.fx > 0 and self.fy > 0):
            out.append("focal lengths must be positive")
        if not np.all(np.isfinite(self.R)) or not np.all(np.isfinite(self.t)):
            out.append("non-finite pose")
            return out
        if np.abs(self.R.T @ self.R - np.eye(3)).max() > tol:
            out.append("R is not orthonormal")
        if abs(np.linalg.det(self.R) - 1.0) > tol:
            out.append("det(R) != 1")
        if not self.center[2] > 0:
            out.append("camera centre is not above the ground plane")
        return out

    def validate(self) -> "CameraParams":
        issues = self.problems()
        if issues:
            raise InvalidCameraError("; ".join(issues))
        return self

    def __eq__(self, other):
        if not isinstance(other, CameraParams):
            return NotImplemented
        return (
            (self.fx, self.fy, self.cx, self.cy, self.skew) == (other.fx, other.fy, other.cx, other.cy, other.skew)
            and np.array_equal(self.R, other.R)
            and np.array_equal(self.t, other.t)
        )

    __hash__ = None
