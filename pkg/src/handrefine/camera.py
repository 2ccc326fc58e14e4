"""Weak-perspective cameras and camera transfer across a stereo rig."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class WeakPerspectiveCamera:
    """``u = t + delta * xy``; image and camera frames are both y-down."""

    t: tuple[float, float]
    delta: float  # pixels per meter

    def __post_init__(self):
        t = tuple(float(v) for v in self.t)
        if len(t) != 2:
            raise ValueError("camera t must have 2 entries")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "delta", float(self.delta))
        if not (np.all(np.isfinite(t)) and np.isfinite(self.delta)):
            raise ValueError("camera parameters must be finite")
        if self.delta <= 0:
            raise ValueError(f"camera scale must be positive, got {self.delta}")

    def as_array(self) -> np.ndarray:
        return np.array([self.t[0], self.t[1], self.delta])

    @classmethod
    def from_array(cls, c) -> "WeakPerspectiveCamera":
        c = np.asarray(c, dtype=np.float64)
        return cls((c[0], c[1]), c[2])

    def offset(self, d_camera) -> "WeakPerspectiveCamera":
        return WeakPerspectiveCamera.from_array(self.as_array() + np.asarray(d_camera))


@dataclass(frozen=True, eq=False)
class StereoRig:
    """Maps left-camera-frame points to the right camera frame: ``X_R = R X_L + T``."""

    rotation: np.ndarray
    translation: np.ndarray
    focal: float
    principal_point: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        T = np.array(self.translation, dtype=np.float64).reshape(3)
        pp = np.array(self.principal_point, dtype=np.float64).reshape(2)
        if not np.allclose(R.T @ R, np.eye(3), rtol=0, atol=1e-9) or np.linalg.det(R) <= 0:
            raise ValueError("rig rotation must be orthonormal with det +1")
        if not self.focal > 0:
            raise ValueError("rig focal length must be positive")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)
        object.__setattr__(self, "principal_point", pp)
        object.__setattr__(self, "focal", float(self.focal))

    @classmethod
    def identity(cls, focal: float = 500.0, principal_point=(0.0, 0.0)) -> "StereoRig":
        return cls(np.eye(3), np.zeros(3), focal, np.asarray(principal_point, dtype=np.float64))

    def inverse(self) -> "StereoRig":
        Rt = self.rotation.T
        return StereoRig(Rt, -Rt @ self.translation, self.focal, self.principal_point)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.rotation, np.eye(3)) and not np.any(self.translation))


def project(cam: WeakPerspectiveCamera, points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(points)):
        raise ValueError("project: non-finite input points")
    return np.asarray(cam.t) + cam.delta * points[..., :2]


def transfer_camera(rig: StereoRig, cam_left: WeakPerspectiveCamera, root_left) -> WeakPerspectiveCamera:
    """Express a left-view weak-perspective camera in the right view.

    The root joint (model coordinates) is lifted to depth ``focal / delta``
    at its projected pixel, moved through the rig, and re-projected.
    """
    root = np.asarray(root_left, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(root)):
        raise ValueError("transfer_camera: root must be finite")
    if rig.is_identity():
        return cam_left
    f = rig.focal
    c = rig.principal_point
    z_left = f / cam_left.delta
    root_px = np.asarray(cam_left.t) + cam_left.delta * root[:2]
    X_left = np.array([*((root_px - c) / f * z_left), z_left])
    X_right = rig.rotation @ X_left + rig.translation
    z_right = X_right[2]
    if z_right <= 0:
        raise ValueError("transfer_camera: root behind camera")
    delta_right = f / z_right
    px_right = c + f * X_right[:2] / z_right
    return WeakPerspectiveCamera(tuple(px_right - delta_right * root[:2]), delta_right)


def average_camera(a: WeakPerspectiveCamera, b: WeakPerspectiveCamera) -> WeakPerspectiveCamera:
    return WeakPerspectiveCamera.from_array(0.5 * (a.as_array() + b.as_array()))
