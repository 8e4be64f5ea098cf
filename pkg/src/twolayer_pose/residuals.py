"""Residual terms tying two-layer maps to a 6D pose, with analytic
Jacobians with respect to the 9 pose parameters (r6d, uv, dist).

Families and their units:
  corr   reprojection of the visible-surface correspondences     [px]
  cl2d   cross-layer consistency on the image plane (e_PQ, e_Qr) [px]
  cl3d   cross-layer ray identity in 3D                          [m^2]
  q1     self-occlusion coordinates vs reference maps            [normalized]
  q2     reprojection of self-occlusion points onto their pixel  [px]

All functions return signed residual vectors; L1 is applied by the
reporting layer (mean_abs) and by the solver's IRLS weighting. Rows whose
evaluation would divide by a near-zero depth are zeroed in place and
counted in `excluded`, keeping the row layout fixed across poses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import EPS_Z, CameraIntrinsics, PoseParam, RigidPose, TriangleMesh, param_to_pose_with_tangents
from .layers import TwoLayerMaps, lift_q0


@dataclass(frozen=True)
class Weights:
    """Loss weights; defaults follow {l1, l2, l3} = {1/f, 10, 1}."""

    lambda1: float
    lambda2: float
    lambda3: float
    f: float

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("weights must be nonnegative")

    @staticmethod
    def default(f: float) -> "Weights":
        return Weights(1.0 / f, 10.0, 1.0, f)


@dataclass
class Residual:
    """Stacked signed residuals for one family.

    values: (n_rows, k); count: the averaging normalizer (number of valid
    intersections, or masked pixels for corr); excluded: rows zeroed
    because a transformed point fell behind the camera.
    """

    values: np.ndarray
    count: int
    excluded: int = 0
    jac: np.ndarray | None = None  # (n_rows, k, 9)

    @property
    def sum_abs(self) -> float:
        return float(np.abs(self.values).sum())

    @property
    def mean_abs(self) -> float:
        return self.sum_abs / self.count if self.count else 0.0


@dataclass
class ResidualReport:
    """All families at one pose plus the weighted total objective."""

    blocks: dict[str, Residual]
    weights: Weights
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.recompute_total()

    def recompute_total(self) -> float:
        b, w = self.blocks, self.weights
        return (
            b["corr"].mean_abs
            + w.lambda1 * b["cl2d"].mean_abs
            + w.lambda2 * b["cl3d"].mean_abs
            + w.lambda3 * (b["q1"].mean_abs + b["q2"].mean_abs)
        )


@dataclass
class PixelBundle:
    """Per-pixel data gathered from maps, denormalized to meters.

    rho, p0 are per masked pixel; ipix/axis/q0 describe the valid
    coordinate-plane intersections (axis-major, pixel order within).
    """

    rho: np.ndarray    # (N, 2)
    p0: np.ndarray     # (N, 3) [m]
    ipix: np.ndarray   # (M,) indices into rho/p0
    axis: np.ndarray   # (M,) in {0, 1, 2}
    q0: np.ndarray     # (M, 3) [m], suppressed coordinate exactly 0

    @property
    def n_px(self) -> int:
        return self.rho.shape[0]

    @property
    def n_isect(self) -> int:
        return self.ipix.shape[0]


def gather_bundle(maps: TwoLayerMaps, diameter: float) -> PixelBundle:
    rows, cols = np.nonzero(maps.mask)
    rho = np.stack([cols + 0.5, rows + 0.5], axis=-1).astype(float)
    p0 = maps.p0[rows, cols] * diameter
    valid = maps.q_valid[rows, cols]  # (N, 3)
    ipix_list, axis_list, q0_list = [], [], []
    for k in range(3):
        idx = np.nonzero(valid[:, k])[0]
        ipix_list.append(idx)
        axis_list.append(np.full(idx.shape[0], k, dtype=np.int64))
        q0_list.append(lift_q0(maps.q0[rows, cols][idx, k] * diameter, k))
    ipix = np.concatenate(ipix_list) if ipix_list else np.zeros(0, dtype=np.int64)
    axis = np.concatenate(axis_list) if axis_list else np.zeros(0, dtype=np.int64)
    q0 = np.concatenate(q0_list) if q0_list else np.zeros((0, 3))
    return PixelBundle(rho, p0, ipix, axis, q0)


def _project_rows(K, X):
    """Rows of pi(K, X) with a validity mask; invalid rows are zeroed later."""
    Z = X[:, 2]
    good = Z > EPS_Z
    Zs = np.where(good, Z, 1.0)
    u = K.fx * X[:, 0] / Zs + K.cx
    v = K.fy * X[:, 1] / Zs + K.cy
    return np.stack([u, v], axis=-1), good, Zs


def _dproject(K, X, dX, Zs):
    """Directional derivative of the projection rows for perturbation dX."""
    du = K.fx * (dX[:, 0] - X[:, 0] * dX[:, 2] / Zs) / Zs
    dv = K.fy * (dX[:, 1] - X[:, 1] * dX[:, 2] / Zs) / Zs
    return np.stack([du, dv], axis=-1)


def _corr_eval(pose, bundle, K, tangents=None):
    X = bundle.p0 @ pose.R.T + pose.t
    pix, good, Zs = _project_rows(K, X)
    r = pix - bundle.rho
    r[~good] = 0.0
    jac = None
    if tangents is not None:
        dR, dt = tangents
        jac = np.zeros((bundle.n_px, 2, 9))
        for i in range(9):
            dX = bundle.p0 @ dR[i].T + dt[i]
            jac[:, :, i] = _dproject(K, X, dX, Zs)
        jac[~good] = 0.0
    return Residual(r, bundle.n_px, int((~good).sum()), jac)


def _isect_points(pose, bundle):
    P = bundle.p0[bundle.ipix] @ pose.R.T + pose.t  # (M, 3)
    Q = bundle.q0 @ pose.R.T + pose.t
    m = pose.R[:, bundle.axis].T                    # (M, 3) rotated plane normals
    return P, Q, m


def _cl3d_eval(pose, bundle, K, tangents=None):
    P, Q, m = _isect_points(pose, bundle)
    alpha = m @ pose.t                     # (M,)
    beta = np.einsum("mk,mk->m", m, P)
    r = alpha[:, None] * P - beta[:, None] * Q
    jac = None
    if tangents is not None:
        dR, dt = tangents
        p0 = bundle.p0[bundle.ipix]
        jac = np.zeros((bundle.n_isect, 3, 9))
        for i in range(9):
            dm = dR[i][:, bundle.axis].T
            dP = p0 @ dR[i].T + dt[i]
            dQ = bundle.q0 @ dR[i].T + dt[i]
            dalpha = dm @ pose.t + m @ dt[i]
            dbeta = np.einsum("mk,mk->m", dm, P) + np.einsum("mk,mk->m", m, dP)
            jac[:, :, i] = (
                dalpha[:, None] * P
                + alpha[:, None] * dP
                - dbeta[:, None] * Q
                - beta[:, None] * dQ
            )
    return Residual(r, bundle.n_isect, 0, jac)


def _cl2d_eval(pose, bundle, K, tangents=None):
    P, Q, _ = _isect_points(pose, bundle)
    pixP, goodP, ZsP = _project_rows(K, P)
    pixQ, goodQ, ZsQ = _project_rows(K, Q)
    good = goodP & goodQ
    rho = bundle.rho[bundle.ipix]
    r = np.concatenate([pixQ - pixP, pixQ - rho], axis=1)  # (M, 4)
    r[~good] = 0.0
    jac = None
    if tangents is not None:
        dR, dt = tangents
        p0 = bundle.p0[bundle.ipix]
        jac = np.zeros((bundle.n_isect, 4, 9))
        for i in range(9):
            dP = p0 @ dR[i].T + dt[i]
            dQ = bundle.q0 @ dR[i].T + dt[i]
            dpixP = _dproject(K, P, dP, ZsP)
            dpixQ = _dproject(K, Q, dQ, ZsQ)
            jac[:, :2, i] = dpixQ - dpixP
            jac[:, 2:, i] = dpixQ
        jac[~good] = 0.0
    return Residual(r, bundle.n_isect, int((~good).sum()), jac)


def _q2_eval(pose, bundle, K, tangents=None):
    """Reprojection of the self-occlusion points under `pose`.

    In training this uses the reference pose; the solver substitutes its
    current iterate, which is why the tangent path exists.
    """
    Q = bundle.q0 @ pose.R.T + pose.t
    pixQ, good, Zs = _project_rows(K, Q)
    r = pixQ - bundle.rho[bundle.ipix]
    r[~good] = 0.0
    jac = None
    if tangents is not None:
        dR, dt = tangents
        jac = np.zeros((bundle.n_isect, 2, 9))
        for i in range(9):
            dQ = bundle.q0 @ dR[i].T + dt[i]
            jac[:, :, i] = _dproject(K, Q, dQ, Zs)
        jac[~good] = 0.0
    return Residual(r, bundle.n_isect, int((~good).sum()), jac)


# ---------------------------------------------------------------------------
# Public, maps-level API
# ---------------------------------------------------------------------------


def res_corr(pose: RigidPose, maps: TwoLayerMaps, K: CameraIntrinsics, mesh: TriangleMesh) -> Residual:
    """Per masked pixel: project(K, R p0 d + t) - pixel center."""
    return _corr_eval(pose, gather_bundle(maps, mesh.diameter), K)


def res_cl3d(pose: RigidPose, maps: TwoLayerMaps, mesh: TriangleMesh, K: CameraIntrinsics) -> Residual:
    """Per valid intersection: (Rn)^T t (RP0+t) - (Rn)^T (RP0+t) (RQ0+t)."""
    return _cl3d_eval(pose, gather_bundle(maps, mesh.diameter), K)


def res_cl2d(pose: RigidPose, maps: TwoLayerMaps, mesh: TriangleMesh, K: CameraIntrinsics) -> Residual:
    """Per valid intersection: [pi(Q)-pi(P), pi(Q)-rho] pixel components."""
    return _cl2d_eval(pose, gather_bundle(maps, mesh.diameter), K)


def res_q1(pred_maps: TwoLayerMaps, gt_maps: TwoLayerMaps) -> Residual:
    """Difference of stored (normalized) self-occlusion coordinates.

    Requires identical resolution and validity layout.
    """
    if (pred_maps.width, pred_maps.height) != (gt_maps.width, gt_maps.height):
        raise ValueError("map resolutions differ")
    if not np.array_equal(pred_maps.mask, gt_maps.mask) or not np.array_equal(
        pred_maps.q_valid, gt_maps.q_valid
    ):
        raise ValueError("map validity layouts differ")
    sel = gt_maps.q_valid
    r = (pred_maps.q0 - gt_maps.q0)[sel]  # (M, 2), axis-mixed but count is what matters
    return Residual(r, int(sel.sum()), 0, None)


def res_q2(pred_maps: TwoLayerMaps, gt_pose: RigidPose, K: CameraIntrinsics, mesh: TriangleMesh) -> Residual:
    """Per valid intersection: pi(K, R_hat Q0 + t_hat) - rho."""
    return _q2_eval(gt_pose, gather_bundle(pred_maps, mesh.diameter), K)


def res_fixed_rotation(
    gt_rotation: np.ndarray,
    pose_translation: np.ndarray,
    maps: TwoLayerMaps,
    K: CameraIntrinsics,
    mesh: TriangleMesh,
) -> tuple[Residual, Residual]:
    """Fixed-rotation variant: cl3d and cl2d with R replaced by the
    reference rotation while keeping the predicted translation."""
    pose = RigidPose(gt_rotation, pose_translation)
    bundle = gather_bundle(maps, mesh.diameter)
    return _cl3d_eval(pose, bundle, K), _cl2d_eval(pose, bundle, K)


def total_objective(
    pose: RigidPose,
    pred_maps: TwoLayerMaps,
    gt_maps: TwoLayerMaps,
    gt_pose: RigidPose,
    K: CameraIntrinsics,
    mesh: TriangleMesh,
    w: Weights,
) -> tuple[float, ResidualReport]:
    """Weighted sum of all residual families.

    total = mean|corr| + l1 mean|cl2d| + l2 mean|cl3d| + l3 (mean|q1| + mean|q2|)
    """
    bundle = gather_bundle(pred_maps, mesh.diameter)
    blocks = {
        "corr": _corr_eval(pose, bundle, K),
        "cl2d": _cl2d_eval(pose, bundle, K),
        "cl3d": _cl3d_eval(pose, bundle, K),
        "q1": res_q1(pred_maps, gt_maps),
        "q2": _q2_eval(gt_pose, bundle, K),
    }
    report = ResidualReport(blocks, w)
    return report.total, report


SOLVER_FAMILIES = ("corr", "cl2d", "cl3d", "q2")

_EVALS = {"corr": _corr_eval, "cl2d": _cl2d_eval, "cl3d": _cl3d_eval, "q2": _q2_eval}


def eval_families(
    p: PoseParam,
    bundle: PixelBundle,
    K: CameraIntrinsics,
    families=SOLVER_FAMILIES,
    with_jacobian: bool = False,
) -> dict[str, Residual]:
    """Evaluate residual families at parameter p, optionally with the
    analytic Jacobian w.r.t. (r6d, uv, dist). The q2 family uses p's pose
    in place of the reference pose (self-consistency form)."""
    pose, dR, dt = param_to_pose_with_tangents(p, K)
    tangents = (dR, dt) if with_jacobian else None
    return {name: _EVALS[name](pose, bundle, K, tangents) for name in families}


def jacobian(
    p: PoseParam,
    maps: TwoLayerMaps,
    K: CameraIntrinsics,
    mesh: TriangleMesh,
    families=SOLVER_FAMILIES,
) -> dict[str, Residual]:
    """Residuals plus analytic Jacobian blocks (rows x 9) at parameter p.

    q1 has no pose dependence; when requested its block is identically zero.
    """
    bundle = gather_bundle(maps, mesh.diameter)
    out = {}
    for name in families:
        if name == "q1":
            r = Residual(np.zeros((bundle.n_isect, 2)), bundle.n_isect)
            r.jac = np.zeros((bundle.n_isect, 2, 9))
            out[name] = r
            continue
        out.update(eval_families(p, bundle, K, (name,), with_jacobian=True))
    return out
