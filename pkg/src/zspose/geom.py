"""Rotations, rigid and similarity transforms, camera intrinsics.

All transforms act on points as ``x' = scale * R @ x + t`` with points stored
row-wise, so ``apply`` takes an (n, 3) array. Value types are frozen
dataclasses over read-only float64 arrays; operations return new objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ORTHONORMAL_TOL = 1e-6
# dets inside this band around +1 are treated as float noise and repaired
DET_REPAIR_BAND = 1e-3


def _readonly(a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    if out.shape != shape:
        raise ValueError(f"expected shape {shape}, got {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Rotation3:
    """Proper rotation in 3-D, stored as a 3x3 matrix.

    The constructor rejects matrices that are not orthonormal with det +1
    within ORTHONORMAL_TOL. Use :func:`project_to_rotation` to repair a
    near-rotation read from a file before constructing.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = _readonly(self.matrix, (3, 3))
        err = np.abs(m @ m.T - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise ValueError(f"matrix is not orthonormal (max deviation {err:.3g})")
        det = float(np.linalg.det(m))
        if abs(det - 1.0) > ORTHONORMAL_TOL:
            raise ValueError(f"matrix is not a proper rotation (det {det:.6f})")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(np.eye(3))

    @classmethod
    def from_axis_angle(cls, axis: np.ndarray, angle: float) -> "Rotation3":
        """Rodrigues' formula; ``axis`` need not be unit length."""
        axis = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise ValueError("zero rotation axis")
        k = axis / n
        kx = np.array([
            [0.0, -k[2], k[1]],
            [k[2], 0.0, -k[0]],
            [-k[1], k[0], 0.0],
        ])
        m = np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)
        return cls(m)


def project_to_rotation(m: np.ndarray) -> Rotation3:
    """Nearest proper rotation to ``m`` in Frobenius norm (SVD projection)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return Rotation3(r)


@dataclass(frozen=True)
class RigidTransformSE3:
    """Rigid motion: ``x' = R @ x + t``."""

    rotation: Rotation3
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "translation", _readonly(self.translation, (3,)))

    @classmethod
    def identity(cls) -> "RigidTransformSE3":
        return cls(Rotation3.identity(), np.zeros(3))

    def to_sim3(self) -> "RigidTransformSim3":
        return RigidTransformSim3(self.rotation, self.translation, 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.matrix.T + self.translation

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 form."""
        out = np.eye(4)
        out[:3, :3] = self.rotation.matrix
        out[:3, 3] = self.translation
        return out


@dataclass(frozen=True)
class RigidTransformSim3:
    """Similarity transform: ``x' = scale * R @ x + t`` with scale > 0."""

    rotation: Rotation3
    translation: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "translation", _readonly(self.translation, (3,)))
        object.__setattr__(self, "scale", float(self.scale))
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")

    @classmethod
    def identity(cls) -> "RigidTransformSim3":
        return cls(Rotation3.identity(), np.zeros(3), 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * (points @ self.rotation.matrix.T) + self.translation

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 form (rotation block pre-multiplied by scale)."""
        out = np.eye(4)
        out[:3, :3] = self.scale * self.rotation.matrix
        out[:3, 3] = self.translation
        return out


def compose(a: RigidTransformSim3, b: RigidTransformSim3) -> RigidTransformSim3:
    """Transform applying ``b`` first, then ``a``: (a o b)(x) = a(b(x))."""
    rot = Rotation3(a.rotation.matrix @ b.rotation.matrix)
    t = a.scale * (a.rotation.matrix @ b.translation) + a.translation
    return RigidTransformSim3(rot, t, a.scale * b.scale)


def invert(t: RigidTransformSim3) -> RigidTransformSim3:
    inv_scale = 1.0 / t.scale
    rt = t.rotation.matrix.T
    return RigidTransformSim3(Rotation3(rt), -inv_scale * (rt @ t.translation), inv_scale)


def geodesic_rotation_error(r1: Rotation3, r2: Rotation3) -> float:
    """Angle in radians of the rotation taking ``r1`` to ``r2``.

    The argument of arccos is clamped to [-1, 1] so float noise near identity
    or a half turn cannot produce NaN. Symmetric in its arguments; range
    [0, pi].
    """
    c = (np.trace(r1.matrix.T @ r2.matrix) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, c))))


def relative_gt_pose(
    t0a: RigidTransformSim3,
    t0b: RigidTransformSim3,
    cam_ai: RigidTransformSE3,
    cam_bj: RigidTransformSE3,
) -> RigidTransformSim3:
    """Ground-truth camera-to-camera transform between two labelled sequences.

    ``t0a`` and ``t0b`` align a shared canonical frame to each sequence's
    world frame; ``cam_ai`` and ``cam_bj`` are world-to-view extrinsics of the
    two frames being compared. The result maps points in the first frame's
    camera coordinates into the second frame's camera coordinates:

        cam_bj o t0b o t0a^-1 o cam_ai^-1
    """
    out = invert(cam_ai.to_sim3())
    out = compose(invert(t0a), out)
    out = compose(t0b, out)
    return compose(cam_bj.to_sim3(), out)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
