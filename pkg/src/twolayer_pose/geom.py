"""Camera model, rotation/translation parameterizations and mesh bookkeeping.

Conventions (OpenCV-style):
- camera frame: X right, Y down, Z forward; the camera looks along +Z
- pixel coordinates: u right, v down; a point projects to
  u = fx*X/Z + cx, v = fy*Y/Z + cy
- poses map object-frame points into the camera frame: X_cam = R @ X_obj + t
- units are meters and pixels throughout
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, DegenerateParamError, InvalidMeshError

EPS_Z = 1e-9      # minimum depth for projection [m]
EPS_DEGEN = 1e-9  # degeneracy threshold for parameterizations

_ORTHO_TOL = 1e-9


def _as_vec(x, n, name):
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.shape != (n,):
        raise ValueError(f"{name} must be a {n}-vector, got shape {np.shape(x)}")
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; K is upper triangular with unit bottom-right entry."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def check_rotation(R: np.ndarray, tol: float = _ORTHO_TOL) -> np.ndarray:
    """Assert R is a proper rotation (R^T R = I, det = +1) within tol."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    if np.abs(R.T @ R - np.eye(3)).max() > tol:
        raise ValueError("matrix is not orthonormal within tolerance")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("matrix determinant is not +1 within tolerance")
    return R


@dataclass(frozen=True)
class RigidPose:
    """Object-to-camera rigid transform: X_cam = R @ X_obj + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", check_rotation(self.R))
        t = _as_vec(self.t, 3, "t")
        if t[2] <= 0:
            raise ValueError("t_z must be positive (object in front of camera)")
        object.__setattr__(self, "t", t)

    def transform(self, pts: np.ndarray) -> np.ndarray:
        """Apply the pose to (..., 3) object-frame points."""
        return np.asarray(pts, dtype=float) @ self.R.T + self.t


@dataclass(frozen=True)
class PoseParam:
    """Solver unknowns: allocentric 6D rotation, projected centroid, distance."""

    r6d: np.ndarray
    uv: np.ndarray
    dist: float

    def __post_init__(self):
        object.__setattr__(self, "r6d", _as_vec(self.r6d, 6, "r6d"))
        object.__setattr__(self, "uv", _as_vec(self.uv, 2, "uv"))
        if not self.dist > 0:
            raise ValueError("dist must be positive")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r6d, self.uv, [self.dist]])

    @staticmethod
    def from_vector(theta: np.ndarray) -> "PoseParam":
        theta = _as_vec(theta, 9, "theta")
        return PoseParam(theta[:6], theta[6:8], float(theta[8]))


@dataclass(frozen=True)
class BoundingCuboid:
    """Axis-aligned min/max bounds in the object frame."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = _as_vec(self.min, 3, "min")
        hi = _as_vec(self.max, 3, "max")
        if np.any(lo > hi):
            raise ValueError("cuboid min must be <= max componentwise")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def inflated(self, margin: float) -> "BoundingCuboid":
        """Scale the cuboid about its center by `margin` (>= 1 grows it)."""
        c = 0.5 * (self.min + self.max)
        h = 0.5 * (self.max - self.min)
        return BoundingCuboid(c - margin * h, c + margin * h)

    def contains(self, pts: np.ndarray, slack: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.all((pts >= self.min - slack) & (pts <= self.max + slack), axis=-1)


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle mesh in the object frame with cached diameter and cuboid."""

    vertices: np.ndarray
    faces: np.ndarray
    diameter: float = field(default=0.0)
    cuboid: BoundingCuboid = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if v.shape[0] < 2:
            raise InvalidMeshError("mesh needs at least 2 vertices")
        if f.size and (f.min() < 0 or f.max() >= v.shape[0]):
            raise InvalidMeshError("face indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        diameter, cuboid = mesh_stats_raw(v)
        if self.diameter:
            if abs(self.diameter - diameter) > 1e-9 * max(1.0, diameter):
                raise InvalidMeshError("provided diameter disagrees with the vertices")
        else:
            object.__setattr__(self, "diameter", diameter)
        if self.cuboid is not None:
            if not self.cuboid.contains(v).all():
                raise InvalidMeshError("provided cuboid does not contain every vertex")
        else:
            object.__setattr__(self, "cuboid", cuboid)

    @property
    def triangles(self) -> np.ndarray:
        """(n_faces, 3, 3) corner coordinates."""
        return self.vertices[self.faces]


def mesh_stats_raw(vertices: np.ndarray) -> tuple[float, BoundingCuboid]:
    """Diameter (max pairwise vertex distance) and axis-aligned cuboid.

    Uses the convex-hull reduction when the vertex count makes the dense
    pairwise distance matrix expensive; identical result either way.
    """
    v = np.asarray(vertices, dtype=float).reshape(-1, 3)
    if v.shape[0] < 2:
        raise InvalidMeshError("need at least 2 vertices")
    pts = v
    if v.shape[0] > 600:
        try:
            from scipy.spatial import ConvexHull

            pts = v[ConvexHull(v).vertices]
        except Exception:
            pts = v  # degenerate (flat/collinear) clouds: fall back to dense
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    diameter = float(np.sqrt(d2.max()))
    cuboid = BoundingCuboid(v.min(axis=0), v.max(axis=0))
    return diameter, cuboid


def mesh_stats(mesh: TriangleMesh) -> tuple[float, BoundingCuboid]:
    return mesh_stats_raw(mesh.vertices)


def project(K: CameraIntrinsics, P: np.ndarray) -> np.ndarray:
    """Project camera-frame point(s) (..., 3) to pixel(s) (..., 2).

    Raises BehindCameraError if any Z <= EPS_Z.
    """
    P = np.asarray(P, dtype=float)
    Z = P[..., 2]
    if np.any(Z <= EPS_Z):
        raise BehindCameraError("point behind camera (Z <= eps)")
    u = K.fx * P[..., 0] / Z + K.cx
    v = K.fy * P[..., 1] / Z + K.cy
    return np.stack([u, v], axis=-1)


def backproject_ray(K: CameraIntrinsics, rho: np.ndarray) -> np.ndarray:
    """Unit direction of the viewing ray through pixel(s) rho (..., 2)."""
    d = backproject_dir(K, rho)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def backproject_dir(K: CameraIntrinsics, rho: np.ndarray) -> np.ndarray:
    """K^-1 (u, v, 1): ray direction normalized to unit Z (not unit length)."""
    rho = np.asarray(rho, dtype=float)
    x = (rho[..., 0] - K.cx) / K.fx
    y = (rho[..., 1] - K.cy) / K.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def r6d_to_rotation(r6d: np.ndarray) -> np.ndarray:
    """Gram-Schmidt decode of the continuous 6D rotation representation.

    The two 3-vectors give the first two columns; the third is their cross
    product. Invariant to positive rescaling of either input column.
    """
    r6d = _as_vec(r6d, 6, "r6d")
    a, b = r6d[:3], r6d[3:]
    na = np.linalg.norm(a)
    if na < EPS_DEGEN:
        raise DegenerateParamError("first r6d column has near-zero norm")
    c1 = a / na
    w = b - (c1 @ b) * c1
    nw = np.linalg.norm(w)
    if nw < EPS_DEGEN * max(1.0, np.linalg.norm(b)):
        raise DegenerateParamError("r6d columns are parallel")
    c2 = w / nw
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def rotation_to_r6d(R: np.ndarray) -> np.ndarray:
    """First two columns of R, flattened; r6d_to_rotation inverts this."""
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[:, 0], R[:, 1]])


def _optical_alignment(t: np.ndarray) -> np.ndarray:
    """Minimal rotation taking the optical axis (0,0,1) to t/||t||."""
    t = np.asarray(t, dtype=float)
    nt = np.linalg.norm(t)
    if nt < EPS_DEGEN:
        raise DegenerateParamError("translation norm too small for alignment")
    u = t / nt
    c = u[2]
    if c < -1.0 + 1e-12:
        raise DegenerateParamError("translation anti-parallel to optical axis")
    a = np.array([-u[1], u[0], 0.0])  # (0,0,1) x u
    ax = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + ax + (ax @ ax) / (1.0 + c)


def allo_to_ego(R_allo: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Egocentric rotation from the allocentric one at translation t."""
    return _optical_alignment(t) @ np.asarray(R_allo, dtype=float)


def ego_to_allo(R_ego: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Inverse of allo_to_ego for the same translation."""
    return _optical_alignment(t).T @ np.asarray(R_ego, dtype=float)


def param_to_pose(p: PoseParam, K: CameraIntrinsics) -> RigidPose:
    """Decode solver parameters to a rigid pose.

    The translation is the point on the backprojected ray through uv whose
    depth (Z component) equals dist, so project(K, t) == uv and t_z == dist.
    """
    t = p.dist * backproject_dir(K, p.uv)
    R = allo_to_ego(r6d_to_rotation(p.r6d), t)
    return RigidPose(R, t)


def pose_to_param(pose: RigidPose, K: CameraIntrinsics) -> PoseParam:
    """Encode a rigid pose; param_to_pose inverts this within 1e-9."""
    uv = project(K, pose.t)
    r6d = rotation_to_r6d(ego_to_allo(pose.R, pose.t))
    return PoseParam(r6d, uv, float(pose.t[2]))


# ---------------------------------------------------------------------------
# Tangents of the parameterization, used for analytic residual Jacobians.
# ---------------------------------------------------------------------------


def _skew(a):
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def _gram_schmidt_with_tangents(r6d):
    """Rotation plus dR/d(r6d): (6, 3, 3) array of directional derivatives."""
    a, b = r6d[:3], r6d[3:]
    na = np.linalg.norm(a)
    if na < EPS_DEGEN:
        raise DegenerateParamError("first r6d column has near-zero norm")
    c1 = a / na
    P1 = (np.eye(3) - np.outer(c1, c1)) / na  # dc1/da
    w = b - (c1 @ b) * c1
    nw = np.linalg.norm(w)
    if nw < EPS_DEGEN * max(1.0, np.linalg.norm(b)):
        raise DegenerateParamError("r6d columns are parallel")
    c2 = w / nw
    Pw = (np.eye(3) - np.outer(c2, c2)) / nw  # dc2/dw
    dw_da = -((c1 @ b) * np.eye(3) + np.outer(c1, b)) @ P1
    dw_db = np.eye(3) - np.outer(c1, c1)

    dR = np.zeros((6, 3, 3))
    for i in range(3):
        dc1 = P1[:, i]
        dc2 = Pw @ dw_da[:, i]
        dc3 = np.cross(dc1, c2) + np.cross(c1, dc2)
        dR[i] = np.stack([dc1, dc2, dc3], axis=-1)
    for i in range(3):
        dc2 = Pw @ dw_db[:, i]
        dc3 = np.cross(c1, dc2)
        dR[3 + i] = np.stack([np.zeros(3), dc2, dc3], axis=-1)
    R = np.stack([c1, c2, np.cross(c1, c2)], axis=-1)
    return R, dR


def _alignment_with_tangents(t):
    """R_corr(t) plus dR_corr/dt: (3, 3, 3) directional derivatives."""
    nt = np.linalg.norm(t)
    if nt < EPS_DEGEN:
        raise DegenerateParamError("translation norm too small for alignment")
    u = t / nt
    c = u[2]
    if c < -1.0 + 1e-12:
        raise DegenerateParamError("translation anti-parallel to optical axis")
    a = np.array([-u[1], u[0], 0.0])
    ax = _skew(a)
    R_corr = np.eye(3) + ax + (ax @ ax) / (1.0 + c)
    du_dt = (np.eye(3) - np.outer(u, u)) / nt
    dR = np.zeros((3, 3, 3))
    for i in range(3):
        du = du_dt[:, i]
        da = np.array([-du[1], du[0], 0.0])
        dax = _skew(da)
        dc = du[2]
        dR[i] = dax + (dax @ ax + ax @ dax) / (1.0 + c) - (ax @ ax) * dc / (1.0 + c) ** 2
    return R_corr, dR


def param_to_pose_with_tangents(p: PoseParam, K: CameraIntrinsics):
    """Decode p and return (pose, dR, dt) with dR (9,3,3), dt (9,3).

    Parameter order matches PoseParam.as_vector(): r6d[0:6], uv[0:2], dist.
    """
    ray = backproject_dir(K, p.uv)
    t = p.dist * ray
    dt = np.zeros((9, 3))
    dt[6] = p.dist * np.array([1.0 / K.fx, 0.0, 0.0])
    dt[7] = p.dist * np.array([0.0, 1.0 / K.fy, 0.0])
    dt[8] = ray

    R_allo, dR_allo = _gram_schmidt_with_tangents(p.r6d)
    R_corr, dR_corr_dt = _alignment_with_tangents(t)
    R = R_corr @ R_allo

    dR = np.zeros((9, 3, 3))
    for i in range(6):
        dR[i] = R_corr @ dR_allo[i]
    # uv moves the ray, hence the alignment; dist only scales t (direction fixed)
    for j in (6, 7):
        dRc = np.einsum("kab,k->ab", dR_corr_dt, dt[j])
        dR[j] = dRc @ R_allo
    return RigidPose(R, t), dR, dt
