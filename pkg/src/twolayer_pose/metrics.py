"""Pose-error metrics: ADD(-S), n deg n cm, AUC, and the VSD/MSSD/MSPD
triple with their average-recall scores.

All metric functions are pure functions of the poses (and mesh/camera);
errors are in meters unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import bop_constants as bc
from .errors import UndefinedRateError
from .geom import CameraIntrinsics, RigidPose, TriangleMesh, project
from .layers import RenderConfig, rasterize_visible


@dataclass(frozen=True)
class SymmetrySet:
    """Discrete symmetry rotations (identity included) and continuous axes."""

    discrete: tuple = (np.eye(3),)
    continuous_axes: tuple = ()

    def __post_init__(self):
        mats = tuple(np.asarray(m, dtype=float) for m in self.discrete)
        if not any(np.allclose(m, np.eye(3)) for m in mats):
            mats = (np.eye(3),) + mats
        axes = tuple(np.asarray(a, dtype=float) / np.linalg.norm(a) for a in self.continuous_axes)
        object.__setattr__(self, "discrete", mats)
        object.__setattr__(self, "continuous_axes", axes)

    def expand(self, steps: int = bc.CONTINUOUS_SYMMETRY_STEPS) -> list[np.ndarray]:
        """All discrete rotations, with continuous axes discretized."""
        out = list(self.discrete)
        for axis in self.continuous_axes:
            ax = np.array(
                [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
            )
            base = list(out)
            for k in range(1, steps):
                ang = 2.0 * np.pi * k / steps
                Rax = np.eye(3) + np.sin(ang) * ax + (1 - np.cos(ang)) * (ax @ ax)
                out.extend(m @ Rax for m in base)
        return out


IDENTITY_SYMMETRY = SymmetrySet()


def model_points(mesh: TriangleMesh) -> np.ndarray:
    """Evaluation points: the vertices, or a fixed-seed uniform surface
    sampling when the mesh has fewer than MODEL_POINT_TARGET of them."""
    if mesh.vertices.shape[0] >= bc.MODEL_POINT_TARGET or mesh.faces.shape[0] == 0:
        return mesh.vertices
    rng = np.random.default_rng(bc.MODEL_POINT_SEED)
    tris = mesh.triangles
    areas = 0.5 * np.linalg.norm(
        np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1
    )
    probs = areas / areas.sum()
    idx = rng.choice(len(tris), size=bc.MODEL_POINT_TARGET, p=probs)
    u = rng.random(bc.MODEL_POINT_TARGET)
    v = rng.random(bc.MODEL_POINT_TARGET)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    t = tris[idx]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])


def rotation_angle_deg(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Geodesic angle between two rotations in degrees."""
    tr = np.trace(R_a @ R_b.T)
    return float(np.rad2deg(np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))))


def add(est: RigidPose, gt: RigidPose, mesh: TriangleMesh) -> float:
    """Mean deviation of transformed model points [m]."""
    pts = model_points(mesh)
    return float(np.linalg.norm(est.transform(pts) - gt.transform(pts), axis=1).mean())


def add_s(est: RigidPose, gt: RigidPose, mesh: TriangleMesh, sym: SymmetrySet | None = None) -> float:
    """Closest-point (nearest-neighbor) variant of ADD [m].

    The nearest-neighbor form needs no symmetry annotation; when one is
    given, the minimum over its discrete rotations is returned (identical
    for exact symmetries, a refinement for approximate ones).
    """
    pts = model_points(mesh)
    pts_est = est.transform(pts)
    rots = sym.discrete if sym is not None else (np.eye(3),)
    best = np.inf
    for S in rots:
        tree = cKDTree(gt.transform(pts @ S.T))
        d, _ = tree.query(pts_est, k=1)
        best = min(best, float(d.mean()))
    return best


def add_sym(est: RigidPose, gt: RigidPose, mesh: TriangleMesh, sym: SymmetrySet) -> float:
    """Discrete-symmetry minimum of plain ADD [m]."""
    pts = model_points(mesh)
    pts_est = est.transform(pts)
    return min(
        float(np.linalg.norm(pts_est - gt.transform(pts @ S.T), axis=1).mean())
        for S in sym.expand()
    )


def pass_rate_add(errors, diameter: float, frac: float) -> float:
    """Fraction of errors below frac * diameter."""
    if frac <= 0:
        raise ValueError("frac must be positive")
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise UndefinedRateError("empty error list")
    return float((errors < frac * diameter).mean())


def deg_cm(est: RigidPose, gt: RigidPose, n_deg: float, n_cm: float) -> bool:
    """Rotation below n_deg degrees AND translation below n_cm centimeters."""
    ang = rotation_angle_deg(est.R, gt.R)
    t_err = float(np.linalg.norm(est.t - gt.t))
    return bool(ang < n_deg and t_err < n_cm * 1e-2)


def auc(errors, max_threshold: float = bc.AUC_MAX_THRESHOLD_M) -> float:
    """Area under the accuracy-vs-threshold curve on [0, max], in [0, 1].

    Exact step-function integration: each error e contributes
    max(0, 1 - e/max) / n.
    """
    if max_threshold <= 0:
        raise ValueError("max_threshold must be positive")
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise UndefinedRateError("empty error list")
    return float(np.clip(1.0 - errors / max_threshold, 0.0, None).mean())


# ---------------------------------------------------------------------------
# BOP error triple
# ---------------------------------------------------------------------------


def _depth_render(pose, mesh, K, cfg):
    _, depth, _ = rasterize_visible(mesh, pose, K, cfg)
    return depth


def vsd(
    est: RigidPose,
    gt: RigidPose,
    mesh: TriangleMesh,
    K: CameraIntrinsics,
    cfg: RenderConfig,
    tau: float,
    delta: float = 0.015,
) -> float:
    """Visible surface discrepancy from the two depth renders.

    Step cost over the union of the render masks: a union pixel is
    mismatched when the depths differ by more than tau or only one render
    covers it. `delta` (the scene-visibility tolerance of the full
    protocol) is unused here because there is no test-scene depth; kept
    for signature fidelity. Empty union gives the maximal error 1.
    """
    d_est = _depth_render(est, mesh, K, cfg)
    d_gt = _depth_render(gt, mesh, K, cfg)
    m_est, m_gt = d_est > 0, d_gt > 0
    union = m_est | m_gt
    n_union = int(union.sum())
    if n_union == 0:
        return 1.0
    inter = m_est & m_gt
    mism = int((np.abs(d_est - d_gt)[inter] > tau).sum()) + int(n_union - inter.sum())
    return mism / n_union


def mssd(est: RigidPose, gt: RigidPose, mesh: TriangleMesh, sym: SymmetrySet = IDENTITY_SYMMETRY) -> float:
    """Maximum symmetry-aware surface distance over mesh vertices [m]."""
    pts = mesh.vertices
    pts_est = est.transform(pts)
    return min(
        float(np.linalg.norm(pts_est - gt.transform(pts @ S.T), axis=1).max())
        for S in sym.expand()
    )


def mspd(
    est: RigidPose,
    gt: RigidPose,
    mesh: TriangleMesh,
    sym: SymmetrySet = IDENTITY_SYMMETRY,
    K: CameraIntrinsics | None = None,
) -> float:
    """Maximum symmetry-aware projection distance over mesh vertices [px]."""
    if K is None:
        raise ValueError("mspd requires intrinsics")
    pts = mesh.vertices
    proj_est = project(K, est.transform(pts))
    return min(
        float(np.linalg.norm(proj_est - project(K, gt.transform(pts @ S.T)), axis=1).max())
        for S in sym.expand()
    )


@dataclass
class ARScores:
    vsd: float
    mssd: float
    mspd: float
    mean: float = field(init=False)

    def __post_init__(self):
        self.mean = (self.vsd + self.mssd + self.mspd) / 3.0


def ar_scores(vsd_errors, mssd_errors, mspd_errors, diameters, image_width) -> ARScores:
    """Average recall over the pinned threshold grids.

    vsd_errors: (n_scenes, len(VSD_TAU_FRACTIONS)) errors per tau;
    mssd/mspd_errors and diameters: per scene; image_width scales the
    MSPD pixel thresholds by image_width / 640.
    """
    vsd_errors = np.atleast_2d(np.asarray(vsd_errors, dtype=float))
    mssd_errors = np.asarray(mssd_errors, dtype=float)
    mspd_errors = np.asarray(mspd_errors, dtype=float)
    diam = np.asarray(diameters, dtype=float)
    if vsd_errors.shape[1] != len(bc.VSD_TAU_FRACTIONS):
        raise ValueError("vsd_errors second axis must match VSD_TAU_FRACTIONS")

    recalls = [
        float((vsd_errors[:, i] < th).mean())
        for i in range(vsd_errors.shape[1])
        for th in bc.VSD_THRESHOLDS
    ]
    ar_vsd = float(np.mean(recalls))
    ar_mssd = float(
        np.mean([(mssd_errors < f * diam).mean() for f in bc.MSSD_THRESHOLD_FRACTIONS])
    )
    r = image_width / bc.MSPD_REFERENCE_WIDTH
    ar_mspd = float(np.mean([(mspd_errors < r * th).mean() for th in bc.MSPD_THRESHOLDS_PX]))
    return ARScores(ar_vsd, ar_mssd, ar_mspd)


def vsd_curve(est, gt, mesh, K, cfg) -> np.ndarray:
    """VSD errors across the pinned tau grid (fractions of the diameter)."""
    return np.array(
        [vsd(est, gt, mesh, K, cfg, tau=f * mesh.diameter) for f in bc.VSD_TAU_FRACTIONS]
    )


# ---------------------------------------------------------------------------
# Scene-set evaluation (used by the CLI)
# ---------------------------------------------------------------------------


@dataclass
class MetricResult:
    """Aggregate metrics over a set of scenes."""

    n_scenes: int
    add_errors: np.ndarray
    add_s_errors: np.ndarray
    pass_rates: dict          # e.g. {"add_0.10d": 0.9, ...}
    deg_cm_rates: dict        # {"2deg2cm": ..., "5deg5cm": ...}
    auc_add: float
    auc_add_s: float
    ar: ARScores | None = None

    def __post_init__(self):
        rates = list(self.pass_rates.values()) + list(self.deg_cm_rates.values())
        rates += [self.auc_add, self.auc_add_s]
        for v in rates:
            if not (0.0 <= v <= 1.0):
                raise ValueError("rates and AUC values must lie in [0, 1]")


def evaluate_scenes(
    pairs,
    meshes,
    syms=None,
    Ks=None,
    cfg: RenderConfig | None = None,
    with_ar: bool = True,
) -> MetricResult:
    """Metrics for (est, gt) pose pairs.

    pairs: list of (est RigidPose, gt RigidPose); meshes: matching list of
    TriangleMesh; syms: matching list of SymmetrySet or None. AR scores
    need per-scene intrinsics (Ks) and a render config.
    """
    n = len(pairs)
    if n == 0:
        raise UndefinedRateError("no scenes to evaluate")
    syms = syms or [IDENTITY_SYMMETRY] * n
    adds = np.array([add(e, g, m) for (e, g), m in zip(pairs, meshes)])
    add_ss = np.array([add_s(e, g, m, s) for (e, g), m, s in zip(pairs, meshes, syms)])
    diams = np.array([m.diameter for m in meshes])

    pass_rates = {}
    for frac in (0.02, 0.05, 0.10):
        below = adds < frac * diams
        pass_rates[f"add_{frac:.2f}d"] = float(below.mean())
        below_s = add_ss < frac * diams
        pass_rates[f"add_s_{frac:.2f}d"] = float(below_s.mean())
    deg_cm_rates = {
        "2deg2cm": float(np.mean([deg_cm(e, g, 2, 2) for e, g in pairs])),
        "5deg5cm": float(np.mean([deg_cm(e, g, 5, 5) for e, g in pairs])),
    }
    ar = None
    if with_ar:
        if Ks is None or cfg is None:
            raise ValueError("AR scores need intrinsics and a render config")
        vsd_rows = [vsd_curve(e, g, m, K, cfg) for (e, g), m, K in zip(pairs, meshes, Ks)]
        mssds = [mssd(e, g, m, s) for (e, g), m, s in zip(pairs, meshes, syms)]
        mspds = [
            mspd(e, g, m, s, K) for (e, g), m, s, K in zip(pairs, meshes, syms, Ks)
        ]
        ar = ar_scores(np.stack(vsd_rows), mssds, mspds, diams, cfg.resolution[0])
    return MetricResult(
        n_scenes=n,
        add_errors=adds,
        add_s_errors=add_ss,
        pass_rates=pass_rates,
        deg_cm_rates=deg_cm_rates,
        auc_add=auc(adds),
        auc_add_s=auc(add_ss),
        ar=ar,
    )
