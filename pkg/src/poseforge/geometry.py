"""Rigid poses, pinhole cameras, triangle meshes and projection.

Conventions used throughout the package:

* Keypoint sets are plain float64 arrays, ``(N, 2)`` in pixels or ``(N, 3)``
  in model units; row ``n`` of a 2D set corresponds to row ``n`` of its 3D set.
* Pixel ``(i, j)`` (row, column) has its center at ``(j + 0.5, i + 0.5)`` in
  continuous image coordinates.
* Pose parameters for optimization are ``[rx, ry, rz, tx, ty, tz]`` where
  ``r`` is an axis-angle (Rodrigues) vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateFace, EmptyMesh, IndexOutOfRange, InvalidBBox, PointBehindCamera

Z_NEAR = 1e-4

_SMALL_ANGLE = 1e-6


def skew(v):
    """Cross-product matrix ``[v]x`` such that ``skew(v) @ w == cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotvec_to_matrix(r):
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r)
    K = skew(r)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def matrix_to_rotvec(R):
    return Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_rotvec()


def rotvec_derivatives(r):
    """Return ``dR[i] = dR/dr_i`` as a ``(3, 3, 3)`` array.

    Uses the closed form of Gallego and Yezzi for the Rodrigues map, with a
    second-order series near the identity.
    """
    r = np.asarray(r, dtype=np.float64)
    theta2 = float(r @ r)
    E = np.eye(3)
    out = np.empty((3, 3, 3))
    if theta2 < _SMALL_ANGLE**2:
        K = skew(r)
        for i in range(3):
            Ei = skew(E[i])
            out[i] = Ei + 0.5 * (Ei @ K + K @ Ei)
        return out
    R = rotvec_to_matrix(r)
    K = skew(r)
    IR = np.eye(3) - R
    for i in range(3):
        out[i] = (r[i] * K + skew(np.cross(r, IR[:, i]))) @ R / theta2
    return out


def left_jacobian_inverse(r):
    """Inverse left Jacobian of SO(3): maps a left tangent increment to ``dr``.

    If ``exp(r + dr) ~= exp(d) exp(r)`` then ``dr = left_jacobian_inverse(r) @ d``.
    """
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r)
    K = skew(r)
    if theta < 1e-4:
        return np.eye(3) - 0.5 * K + K @ K / 12.0
    c = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * K + c * K @ K


def geodesic_angle(Ra, Rb):
    """Angle (radians) of the relative rotation ``Ra^T Rb``."""
    M = np.asarray(Ra).T @ np.asarray(Rb)
    return float(np.linalg.norm(matrix_to_rotvec(M)))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self):
        return (self.height, self.width)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R x + t`` from model frame to camera frame.

    Build with :meth:`from_rotvec`, :meth:`from_matrix` or :meth:`from_params`;
    both the matrix and the axis-angle vector are kept so neither has to be
    recomputed during optimization.
    """

    rotation: np.ndarray
    rotvec: np.ndarray
    translation: np.ndarray

    @classmethod
    def from_rotvec(cls, rotvec, translation):
        r = np.array(rotvec, dtype=np.float64).reshape(3)
        return cls(rotvec_to_matrix(r), r, np.array(translation, dtype=np.float64).reshape(3))

    @classmethod
    def from_matrix(cls, R, translation):
        R = np.array(R, dtype=np.float64).reshape(3, 3)
        return cls(R, matrix_to_rotvec(R), np.array(translation, dtype=np.float64).reshape(3))

    @classmethod
    def from_params(cls, params):
        params = np.asarray(params, dtype=np.float64)
        return cls.from_rotvec(params[:3], params[3:])

    @classmethod
    def identity(cls):
        return cls.from_rotvec(np.zeros(3), np.zeros(3))

    @property
    def params(self):
        return np.concatenate([self.rotvec, self.translation])

    def transform(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other: Pose) -> Pose:
        """``self o other``: apply ``other`` first."""
        return Pose.from_matrix(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose.from_matrix(Rt, -Rt @ self.translation)

    def __repr__(self):
        return f"Pose(rotvec={self.rotvec.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    area_tol: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if len(f) == 0 or len(v) == 0:
            raise EmptyMesh("mesh has no faces")
        bad = np.flatnonzero((f < 0).any(axis=1) | (f >= len(v)).any(axis=1))
        if bad.size:
            raise IndexOutOfRange(int(bad[0]))
        tri = v[f]
        twice_area = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        bad = np.flatnonzero(twice_area <= self.area_tol)
        if bad.size:
            raise DegenerateFace(int(bad[0]))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box, half-open: ``[x_min, x_max) x [y_min, y_max)``."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(np.isfinite(vals)) or self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise InvalidBBox(f"invalid bbox {vals}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def longest_side(self):
        return max(self.width, self.height)

    def contains(self, other: BBox) -> bool:
        return (self.x_min <= other.x_min and self.y_min <= other.y_min
                and self.x_max >= other.x_max and self.y_max >= other.y_max)

    def pixel_mask(self, shape):
        """Boolean mask of pixels whose centers fall inside the box."""
        h, w = shape
        xs = np.arange(w) + 0.5
        ys = np.arange(h) + 0.5
        inx = (xs >= self.x_min) & (xs < self.x_max)
        iny = (ys >= self.y_min) & (ys < self.y_max)
        return iny[:, None] & inx[None, :]

    @classmethod
    def from_mask(cls, mask):
        """Tightest box containing all non-zero pixels (pixel-edge aligned)."""
        rows = np.flatnonzero(np.asarray(mask).any(axis=1))
        cols = np.flatnonzero(np.asarray(mask).any(axis=0))
        if rows.size == 0:
            raise InvalidBBox("empty mask")
        return cls(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def pixel_centers(shape):
    """``(xs, ys)`` grids of pixel-center coordinates for an image of ``shape``."""
    h, w = shape
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    return xs, ys


def _camera_points(pose, points, z_near):
    P = pose.transform(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    bad = np.flatnonzero(~(P[:, 2] > z_near))
    if bad.size:
        raise PointBehindCamera(int(bad[0]))
    return P


def project_points(pose: Pose, points, cam: CameraIntrinsics, z_near=Z_NEAR):
    """Pinhole projection of model-frame ``points`` (N, 3) to pixels (N, 2)."""
    P = _camera_points(pose, points, z_near)
    u = cam.fx * P[:, 0] / P[:, 2] + cam.cx
    v = cam.fy * P[:, 1] / P[:, 2] + cam.cy
    return np.stack([u, v], axis=1)


def projection_derivative(P, cam):
    """d(u, v)/d(X, Y, Z) for camera-frame points, shape (N, 2, 3)."""
    X, Y, Z = P[:, 0], P[:, 1], P[:, 2]
    out = np.zeros((len(P), 2, 3))
    out[:, 0, 0] = cam.fx / Z
    out[:, 0, 2] = -cam.fx * X / Z**2
    out[:, 1, 1] = cam.fy / Z
    out[:, 1, 2] = -cam.fy * Y / Z**2
    return out


def project_jacobian(pose: Pose, points, cam: CameraIntrinsics, z_near=Z_NEAR):
    """Per-point (N, 2, 6) Jacobian of the projection w.r.t. pose params.

    Columns are ordered ``[rx, ry, rz, tx, ty, tz]``.
    """
    X = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    P = _camera_points(pose, X, z_near)
    dproj = projection_derivative(P, cam)
    dR = rotvec_derivatives(pose.rotvec)
    # dP/dr_i = dR_i @ x
    dP_dr = np.einsum("iab,nb->nai", dR, X)
    J = np.empty((len(X), 2, 6))
    J[:, :, :3] = dproj @ dP_dr
    J[:, :, 3:] = dproj
    return J
