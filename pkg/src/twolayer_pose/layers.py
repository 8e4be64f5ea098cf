"""Two-layer map generation: visible-surface correspondences and the
per-pixel intersections of the viewing ray with the three object
coordinate planes (o-yz, o-xz, o-xy).

Maps are stored diameter-normalized. Pixel (row r, col c) samples the
ray through its center (c + 0.5, r + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidMeshError
from .geom import CameraIntrinsics, RigidPose, TriangleMesh, backproject_dir

EPS_PAR = 1e-9        # parallel-ray threshold for plane intersections
OMEGA_SLACK = 1e-7    # cuboid containment slack, in units of diameter

# free (stored) coordinate indices for each suppressed plane-normal axis
FREE_AXES = ((1, 2), (0, 2), (0, 1))

_RAY_CHUNK = 1 << 22  # max pixel*triangle pairs held at once


@dataclass(frozen=True)
class RenderConfig:
    resolution: tuple[int, int] = (64, 64)  # (width, height)
    near: float = 1e-3
    far: float = 1e3
    omega_margin: float = 1.0

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if self.omega_margin < 1.0:
            raise ValueError("omega_margin must be >= 1")


@dataclass(frozen=True)
class TwoLayerMaps:
    """Per-pixel two-layer representation.

    mask    (H, W) bool      visible-surface coverage
    depth   (H, W) float     camera-frame Z of the visible point, 0 off-mask
    p0      (H, W, 3)        object-frame visible point / diameter
    q0      (H, W, 3, 2)     in-plane coordinates of the three coordinate-plane
                             intersections / diameter (free axes per FREE_AXES)
    q_valid (H, W, 3) bool   intersection exists, is in front of the camera
                             and inside the (inflated) bounding cuboid
    """

    width: int
    height: int
    mask: np.ndarray
    depth: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    q_valid: np.ndarray

    def __post_init__(self):
        h, w = self.height, self.width
        if self.mask.shape != (h, w) or self.depth.shape != (h, w):
            raise ValueError("mask/depth shape mismatch")
        if self.p0.shape != (h, w, 3) or self.q0.shape != (h, w, 3, 2):
            raise ValueError("p0/q0 shape mismatch")
        if self.q_valid.shape != (h, w, 3):
            raise ValueError("q_valid shape mismatch")

    def pixel_centers(self) -> np.ndarray:
        """(H, W, 2) array of pixel-center coordinates (u, v)."""
        u = np.arange(self.width) + 0.5
        v = np.arange(self.height) + 0.5
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv], axis=-1)


def lift_q0(q0_flat: np.ndarray, axis: int) -> np.ndarray:
    """Insert the suppressed (exactly zero) coordinate for plane `axis`.

    q0_flat: (..., 2) stored in-plane coordinates -> (..., 3).
    """
    out = np.zeros(q0_flat.shape[:-1] + (3,), dtype=q0_flat.dtype)
    i, j = FREE_AXES[axis]
    out[..., i] = q0_flat[..., 0]
    out[..., j] = q0_flat[..., 1]
    return out


def _moller_trumbore_nearest(origins_dir, tris, near, far):
    """Nearest positive ray parameter per ray against all triangles.

    origins_dir: (N, 3) ray directions from the camera center (unit-Z scaled,
    so the ray parameter equals camera-frame depth). Returns (hit, s) with
    hit (N,) bool and s (N,) the depth of the nearest intersection; ties are
    broken by the lowest triangle index (argmin picks the first minimum).
    """
    n = origins_dir.shape[0]
    t_count = tris.shape[0]
    best = np.full(n, np.inf)
    if t_count == 0 or n == 0:
        return best < np.inf, best

    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    eps = 1e-12

    chunk = max(1, int(_RAY_CHUNK // max(t_count, 1)))
    for lo in range(0, n, chunk):
        d = origins_dir[lo : lo + chunk]  # (m, 3)
        p = np.cross(d[:, None, :], e2[None, :, :])          # (m, T, 3)
        det = np.einsum("tk,mtk->mt", e1, p)                 # (m, T)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            # ray origin is the camera center: tvec = -v0 for every ray
            u = np.einsum("tk,mtk->mt", -v0, p) * inv
            q = np.cross(-v0, e1)                            # (T, 3)
            v = np.einsum("mk,tk->mt", d, q) * inv
            s = np.einsum("tk,tk->t", e2, q)[None, :] * inv  # (m, T)
            ok = (
                (np.abs(det) > eps)
                & (u >= -eps)
                & (v >= -eps)
                & (u + v <= 1.0 + eps)
                & (s >= near)
                & (s <= far)
            )
        s = np.where(ok, s, np.inf)
        idx = np.argmin(s, axis=1)
        best[lo : lo + chunk] = s[np.arange(s.shape[0]), idx]
    return np.isfinite(best), best


def rasterize_visible(
    mesh: TriangleMesh, pose: RigidPose, K: CameraIntrinsics, cfg: RenderConfig
):
    """Ray-cast the mesh: per-pixel mask, depth and normalized p0 field.

    An object fully outside the frustum yields an all-false mask.
    """
    w, h = cfg.resolution
    mask = np.zeros((h, w), dtype=bool)
    depth = np.zeros((h, w))
    p0 = np.zeros((h, w, 3))

    tris_obj = mesh.triangles
    if tris_obj.shape[0] == 0:
        return mask, depth, p0
    tris_cam = tris_obj @ pose.R.T + pose.t

    # candidate pixels: projected bounding box of the in-front geometry
    v_cam = mesh.vertices @ pose.R.T + pose.t
    zs = v_cam[:, 2]
    if np.all(zs <= cfg.near):
        return mask, depth, p0
    z_safe = np.maximum(zs, cfg.near)
    us = K.fx * v_cam[:, 0] / z_safe + K.cx
    vs = K.fy * v_cam[:, 1] / z_safe + K.cy
    if np.any(zs <= cfg.near):
        # geometry crosses the near plane: give up on culling
        c0, c1, r0, r1 = 0, w, 0, h
    else:
        c0 = max(0, int(np.floor(us.min() - 0.5)))
        c1 = min(w, int(np.ceil(us.max() + 0.5)) + 1)
        r0 = max(0, int(np.floor(vs.min() - 0.5)))
        r1 = min(h, int(np.ceil(vs.max() + 0.5)) + 1)
        if c0 >= c1 or r0 >= r1:
            return mask, depth, p0

    cols, rows = np.meshgrid(np.arange(c0, c1), np.arange(r0, r1))
    cols = cols.ravel()
    rows = rows.ravel()
    rho = np.stack([cols + 0.5, rows + 0.5], axis=-1)
    dirs = backproject_dir(K, rho)  # unit-Z: ray parameter == depth

    hit, s = _moller_trumbore_nearest(dirs, tris_cam, cfg.near, cfg.far)
    if not np.any(hit):
        return mask, depth, p0

    hr, hc = rows[hit], cols[hit]
    sh = s[hit]
    mask[hr, hc] = True
    depth[hr, hc] = sh
    p_cam = dirs[hit] * sh[:, None]
    p_obj = (p_cam - pose.t) @ pose.R
    p0[hr, hc] = p_obj / mesh.diameter
    return mask, depth, p0


def intersect_coordinate_plane(
    pose: RigidPose, K: CameraIntrinsics, rho, axis: int
):
    """Camera-frame intersection of the viewing ray through pixel rho with
    the object coordinate plane whose normal is object axis `axis` (0=x:
    plane o-yz, 1=y: o-xz, 2=z: o-xy).

    Returns None when the ray is parallel to the plane (|denominator| <
    EPS_PAR); the sign of the ray scale is not checked here.
    """
    d = backproject_dir(K, np.asarray(rho, dtype=float))
    m = pose.R[:, axis]  # R @ n_axis
    den = float(m @ d)
    if abs(den) < EPS_PAR:
        return None
    return (float(m @ pose.t) / den) * d


def gen_self_occlusion(
    pose: RigidPose,
    K: CameraIntrinsics,
    mask: np.ndarray,
    mesh: TriangleMesh,
    cfg: RenderConfig,
):
    """Self-occlusion fields (q0, q_valid) for every masked pixel.

    For each masked pixel and coordinate plane: intersect the viewing ray
    with the plane, transform to the object frame (suppressed coordinate
    set exactly to 0), keep the intersection iff the ray is not parallel,
    the scale is positive (in front of the camera) and the point lies in
    the omega_margin-inflated bounding cuboid.
    """
    h, w = mask.shape
    q0 = np.zeros((h, w, 3, 2))
    q_valid = np.zeros((h, w, 3), dtype=bool)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return q0, q_valid

    rho = np.stack([cols + 0.5, rows + 0.5], axis=-1)
    dirs = backproject_dir(K, rho)  # (N, 3)
    box = mesh.cuboid.inflated(cfg.omega_margin)
    slack = OMEGA_SLACK * mesh.diameter

    for axis in range(3):
        m = pose.R[:, axis]
        num = float(m @ pose.t)
        den = dirs @ m
        ok = np.abs(den) >= EPS_PAR
        scale = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
        ok &= scale > 0
        q_cam = scale[:, None] * dirs
        q_obj = (q_cam - pose.t) @ pose.R
        q_obj[:, axis] = 0.0  # exact: the point lies on this plane by construction
        ok &= box.contains(q_obj, slack=slack)

        i, j = FREE_AXES[axis]
        vals = np.where(ok[:, None], q_obj[:, [i, j]] / mesh.diameter, 0.0)
        q0[rows, cols, axis] = vals
        q_valid[rows, cols, axis] = ok
    return q0, q_valid


def render_maps(
    mesh: TriangleMesh, pose: RigidPose, K: CameraIntrinsics, cfg: RenderConfig
) -> TwoLayerMaps:
    """Full two-layer map generation (rasterize + self-occlusion)."""
    w, h = cfg.resolution
    mask, depth, p0 = rasterize_visible(mesh, pose, K, cfg)
    q0, q_valid = gen_self_occlusion(pose, K, mask, mesh, cfg)
    return TwoLayerMaps(w, h, mask, depth, p0, q0, q_valid)


def _scaled(maps: TwoLayerMaps, factor: float) -> TwoLayerMaps:
    return replace(maps, p0=maps.p0 * factor, q0=maps.q0 * factor)


def normalize_maps(maps: TwoLayerMaps, diameter: float) -> TwoLayerMaps:
    """Divide the coordinate fields by the diameter; inverse of denormalize."""
    if diameter <= 0:
        raise InvalidMeshError("diameter must be positive")
    return _scaled(maps, 1.0 / diameter)


def denormalize_maps(maps: TwoLayerMaps, diameter: float) -> TwoLayerMaps:
    """Multiply the coordinate fields by the diameter (back to meters)."""
    if diameter <= 0:
        raise InvalidMeshError("diameter must be positive")
    return _scaled(maps, diameter)
