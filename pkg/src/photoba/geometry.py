"""Rigid-body geometry: twists, SE(3) exp/log, pinhole projection, stereo.

Conventions
-----------
* A twist is a 6-vector ``(v, w)``: translational part first, rotation
  (axis-angle, radians) second.
* A :class:`Pose` maps world points into the camera frame,
  ``X_cam = R @ X_world + t``.  Trajectory files store the inverse
  (camera-to-world); see :mod:`photoba.io`.
* Pose increments are left-multiplicative, ``T <- exp(dtheta) @ T``, so the
  projection Jacobians below are expressed in the camera frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-8
MIN_DEPTH = 1e-3
MIN_DISPARITY = 0.5


class GeometryError(ValueError):
    pass


class BehindCameraError(GeometryError):
    pass


class NearPiRotationError(GeometryError):
    pass


class TooDistantError(GeometryError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.baseline < 0:
            raise ValueError("baseline must be non-negative")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> Pose:
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def inverse(self) -> Pose:
        return Pose(self.R.T, -self.R.T @ self.t)

    def __matmul__(self, other: Pose) -> Pose:
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def apply(self, X) -> np.ndarray:
        """Transform point(s) of shape (3,) or (N, 3)."""
        X = np.asarray(X, dtype=float)
        return X @ self.R.T + self.t

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def is_valid(self, tol: float = 1e-9) -> bool:
        ortho = np.linalg.norm(self.R.T @ self.R - np.eye(3))
        return bool(ortho < tol and abs(np.linalg.det(self.R) - 1.0) < tol
                    and np.all(np.isfinite(self.t)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t))

    def __repr__(self) -> str:
        w = so3_log(self.R)
        return f"Pose(rotvec={np.round(w, 6).tolist()}, t={np.round(self.t, 6).tolist()})"


def hat(w) -> np.ndarray:
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def _so3_coeffs(theta: float):
    # A = sin(t)/t, B = (1 - cos t)/t^2, C = (t - sin t)/t^3
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    A = np.sin(theta) / theta
    half = np.sin(0.5 * theta) / theta
    B = 2.0 * half * half
    if theta < 1e-3:
        # (t - sin t)/t^3 cancels catastrophically here; the series is exact to 1e-20
        t2 = theta * theta
        C = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        C = (theta - np.sin(theta)) / theta**3
    return A, B, C


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    A, B, _ = _so3_coeffs(theta)
    W = hat(w)
    return np.eye(3) + A * W + B * (W @ W)


def so3_log(R) -> np.ndarray:
    """Rotation vector of ``R``; raises :class:`NearPiRotationError` near pi."""
    R = np.asarray(R, dtype=float)
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * np.linalg.norm(axis)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = float(np.arctan2(s, c))
    if np.pi - theta < 1e-6:
        raise NearPiRotationError(f"rotation angle {theta!r} is within 1e-6 of pi")
    if theta < SMALL_ANGLE:
        return 0.5 * axis
    return theta / (2.0 * np.sin(theta)) * axis


def _left_jacobian(w) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    _, B, C = _so3_coeffs(theta)
    W = hat(w)
    return np.eye(3) + B * W + C * (W @ W)


def se3_exp(twist) -> Pose:
    """Exponential map of a twist ``(v, w)`` to a :class:`Pose`."""
    twist = np.asarray(twist, dtype=float).reshape(6)
    if not np.all(np.isfinite(twist)):
        raise ValueError("twist components must be finite")
    v, w = twist[:3], twist[3:]
    return Pose(so3_exp(w), _left_jacobian(w) @ v)


def se3_log(pose: Pose) -> np.ndarray:
    w = so3_log(pose.R)
    v = np.linalg.solve(_left_jacobian(w), pose.t)
    return np.concatenate([v, w])


def rotation_angle(R) -> float:
    """Angle of a rotation matrix in [0, pi], stable at both ends."""
    R = np.asarray(R, dtype=float)
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.arctan2(0.5 * np.linalg.norm(axis), 0.5 * (np.trace(R) - 1.0)))


def retract(pose: Pose, delta) -> Pose:
    """Apply a left-multiplied twist increment."""
    return se3_exp(delta) @ pose


# --- projection --------------------------------------------------------------

def project_points(pose: Pose, K: Intrinsics, X):
    """Vectorised pinhole projection.

    Returns ``(uv, z)`` with ``uv`` of shape (N, 2) and camera depths ``z``
    of shape (N,).  No depth check is made; callers compare ``z`` against
    ``MIN_DEPTH`` themselves.
    """
    Xc = pose.apply(np.atleast_2d(X))
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * Xc[:, 0] / z + K.cx
        v = K.fy * Xc[:, 1] / z + K.cy
    return np.stack([u, v], axis=1), z


def project(pose: Pose, K: Intrinsics, X, min_depth: float = MIN_DEPTH):
    """Project one world point; returns ``(u, v, z_cam)``."""
    uv, z = project_points(pose, K, np.asarray(X, dtype=float).reshape(1, 3))
    if not z[0] > min_depth:
        raise BehindCameraError(f"point has camera depth {z[0]:.6g} <= {min_depth}")
    return float(uv[0, 0]), float(uv[0, 1]), float(z[0])


def projection_jacobians(pose: Pose, K: Intrinsics, X):
    """Partials of the projected pixel w.r.t. pose twist and world point.

    Vectorised over N points: returns arrays of shape (N, 2, 6) and
    (N, 2, 3).  The pose derivative is for ``exp(dtheta) @ pose`` at
    ``dtheta = 0``.
    """
    Xc = pose.apply(np.atleast_2d(X))
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    iz = 1.0 / z
    n = len(Xc)
    du_dXc = np.zeros((n, 2, 3))
    du_dXc[:, 0, 0] = K.fx * iz
    du_dXc[:, 0, 2] = -K.fx * x * iz * iz
    du_dXc[:, 1, 1] = K.fy * iz
    du_dXc[:, 1, 2] = -K.fy * y * iz * iz

    # d(Xc)/d(v, w) = [I, -hat(Xc)]
    dXc_dtheta = np.zeros((n, 3, 6))
    dXc_dtheta[:, 0, 0] = dXc_dtheta[:, 1, 1] = dXc_dtheta[:, 2, 2] = 1.0
    dXc_dtheta[:, 0, 4] = z
    dXc_dtheta[:, 0, 5] = -y
    dXc_dtheta[:, 1, 3] = -z
    dXc_dtheta[:, 1, 5] = x
    dXc_dtheta[:, 2, 3] = y
    dXc_dtheta[:, 2, 4] = -x

    J_pose = du_dXc @ dXc_dtheta
    J_point = du_dXc @ pose.R
    return J_pose, J_point


def projection_jacobian(pose: Pose, K: Intrinsics, X, min_depth: float = MIN_DEPTH):
    """Single-point version of :func:`projection_jacobians`: (2x6, 2x3)."""
    X = np.asarray(X, dtype=float).reshape(1, 3)
    project(pose, K, X[0], min_depth)
    J_pose, J_point = projection_jacobians(pose, K, X)
    return J_pose[0], J_point[0]


# --- stereo ------------------------------------------------------------------

def backproject(K: Intrinsics, u, v, z) -> np.ndarray:
    """Camera-frame points at pixel(s) ``(u, v)`` with depth(s) ``z``."""
    u, v, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (u, v, z)))
    return np.stack([(u - K.cx) / K.fx * z, (v - K.cy) / K.fy * z, z], axis=-1)


def disparity_to_depth(disparity, K: Intrinsics):
    if K.baseline <= 0:
        raise ValueError("intrinsics carry no stereo baseline")
    return K.fx * K.baseline / np.asarray(disparity, dtype=float)


def triangulate_stereo(px, disparity: float, K: Intrinsics, pose: Pose | None = None,
                       min_disparity: float = MIN_DISPARITY) -> np.ndarray:
    """Point from a rectified stereo match at left-image pixel ``px``.

    Without ``pose`` the point is returned in left-camera coordinates;
    with a (world-to-camera) ``pose`` it is mapped to world coordinates.
    """
    if not disparity > min_disparity:
        raise TooDistantError(f"disparity {disparity!r} <= {min_disparity}")
    z = disparity_to_depth(disparity, K)
    Xc = backproject(K, px[0], px[1], z)
    if pose is None:
        return Xc
    return pose.inverse().apply(Xc)
