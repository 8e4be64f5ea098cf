"""Pose recovery from two-layer maps.

solve_lm minimizes the IRLS-weighted stack of residual families
(corr + cl2d + cl3d + q2, the latter evaluated at the current iterate)
over the 9 pose parameters with Levenberg-Marquardt. pnp_ransac is the
correspondence-only two-stage baseline: P3P hypotheses inside a seeded
RANSAC loop, then a reprojection-only LM refit on the best inlier set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import cv2
import numpy as np

from .errors import DegenerateParamError, NoDetectionError, NoSolutionError
from .geom import (
    EPS_Z,
    CameraIntrinsics,
    PoseParam,
    RigidPose,
    TriangleMesh,
    backproject_dir,
    ego_to_allo,
    param_to_pose,
    pose_to_param,
    rotation_to_r6d,
)
from .layers import TwoLayerMaps
from .residuals import PixelBundle, Weights, eval_families, gather_bundle

log = logging.getLogger(__name__)

RANSAC_CONFIDENCE = 0.99
RANSAC_MAX_ITERS = 1000
RANSAC_INLIER_PX = 2.0


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 100
    lm_damping_init: float = 1e-3
    tol_step: float = 1e-10
    tol_cost: float = 1e-12
    irls_delta: float = 1.0
    weights: Weights | None = None  # None: Weights.default(sqrt(fx*fy)) at solve time
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if min(self.lm_damping_init, self.tol_step, self.tol_cost, self.irls_delta) <= 0:
            raise ValueError("tolerances and damping must be positive")


@dataclass
class SolveTrace:
    costs: list[float] = field(default_factory=list)
    step_norms: list[float] = field(default_factory=list)
    dampings: list[float] = field(default_factory=list)
    excluded: dict[str, int] = field(default_factory=dict)
    converged: bool = False
    final_pose: RigidPose | None = None


@dataclass(frozen=True)
class NoiseSpec:
    sigma_corr: float = 0.0
    sigma_occ: float = 0.0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_corr < 0 or self.sigma_occ < 0:
            raise ValueError("sigmas must be >= 0")
        if not (0 <= self.dropout < 1):
            raise ValueError("dropout must be in [0, 1)")


def _huber_cost(r, delta):
    a = np.abs(r)
    quad = a <= delta
    out = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
    return float(out.sum())


def _huber_weight(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def _surface_area(mesh: TriangleMesh) -> float:
    tris = mesh.triangles
    if tris.shape[0] == 0:
        return 0.0
    cr = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    return float(0.5 * np.linalg.norm(cr, axis=1).sum())


def init_pose(maps: TwoLayerMaps, K: CameraIntrinsics, mesh: TriangleMesh) -> PoseParam:
    """Heuristic initializer from the maps alone.

    uv: mask centroid. dist: projected-area heuristic using the mean
    silhouette area at unit distance (surface area / 4, exact for convex
    bodies). Rotation: orthogonal Procrustes between the correspondence
    field and the backprojected rays, with a few depth re-estimation
    rounds.
    """
    rows, cols = np.nonzero(maps.mask)
    if rows.size == 0:
        raise NoDetectionError("empty mask")
    uv = np.array([cols.mean() + 0.5, rows.mean() + 0.5])

    f = math.sqrt(K.fx * K.fy)
    area_model = _surface_area(mesh) / 4.0
    area_mask = float(rows.size)
    dist = f * math.sqrt(max(area_model, 1e-12) / area_mask)

    p0 = maps.p0[rows, cols] * mesh.diameter
    rho = np.stack([cols + 0.5, rows + 0.5], axis=-1).astype(float)
    rays = backproject_dir(K, rho)

    z = np.full(rows.size, dist)
    R = np.eye(3)
    t = None
    for _ in range(4):
        X = rays * z[:, None]
        pc = p0 - p0.mean(axis=0)
        xc = X - X.mean(axis=0)
        H = pc.T @ xc
        U, _, Vt = np.linalg.svd(H)
        D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
        R = Vt.T @ D @ U.T
        t = X.mean(axis=0) - R @ p0.mean(axis=0)
        z = np.maximum(p0 @ R.T[:, 2] + t[2], 0.1 * dist)

    t_dec = dist * backproject_dir(K, uv)
    return PoseParam(rotation_to_r6d(ego_to_allo(R, t_dec)), uv, dist)


def _family_setup(bundle: PixelBundle, cfg: SolverConfig, w: Weights, diameter: float, dist0: float):
    """Active families with their cost coefficients and Huber transitions."""
    coefs, deltas = {}, {}
    if bundle.n_px:
        coefs["corr"] = 1.0 / bundle.n_px
        deltas["corr"] = cfg.irls_delta
    if bundle.n_isect:
        for name, lam in (("cl2d", w.lambda1), ("cl3d", w.lambda2), ("q2", w.lambda3)):
            if lam > 0:
                coefs[name] = lam / bundle.n_isect
                deltas[name] = cfg.irls_delta * (
                    0.01 * diameter * dist0 if name == "cl3d" else 1.0
                )
    return coefs, deltas


def _stack_cost(fams, coefs, deltas):
    return sum(
        coefs[n] * _huber_cost(fams[n].values.ravel(), deltas[n]) for n in coefs
    )


def solve_lm(
    maps: TwoLayerMaps,
    K: CameraIntrinsics,
    mesh: TriangleMesh,
    cfg: SolverConfig | None = None,
    init: PoseParam | None = None,
) -> tuple[RigidPose, SolveTrace]:
    """Recover the pose from (possibly noisy) two-layer maps.

    Accepted steps never increase the robust cost; returns the best
    iterate with converged=False when the step/cost tolerances are not
    reached within max_iters.
    """
    cfg = cfg or SolverConfig()
    w = cfg.weights or Weights.default(math.sqrt(K.fx * K.fy))
    bundle = gather_bundle(maps, mesh.diameter)
    if bundle.n_px == 0:
        raise NoDetectionError("empty mask")
    p = init or init_pose(maps, K, mesh)
    coefs, deltas = _family_setup(bundle, cfg, w, mesh.diameter, p.dist)
    names = tuple(coefs)

    trace = SolveTrace()
    theta = p.as_vector()
    fams = eval_families(p, bundle, K, names, with_jacobian=True)
    cost = _stack_cost(fams, coefs, deltas)
    trace.costs.append(cost)
    mu = cfg.lm_damping_init

    for _ in range(cfg.max_iters):
        r_parts, j_parts, s_parts = [], [], []
        for n in names:
            r = fams[n].values.reshape(-1)
            j = fams[n].jac.reshape(-1, 9)
            s2 = coefs[n] * _huber_weight(r, deltas[n])
            r_parts.append(r)
            j_parts.append(j)
            s_parts.append(s2)
        r_all = np.concatenate(r_parts)
        J = np.concatenate(j_parts, axis=0)
        s2 = np.concatenate(s_parts)

        A = J.T @ (J * s2[:, None])
        g = J.T @ (s2 * r_all)
        if np.linalg.norm(g) == 0.0:
            trace.converged = True
            break

        D = np.diag(np.diag(A) + 1e-12)
        accepted = False
        step = None
        for _ in range(12):
            try:
                step = np.linalg.solve(A + mu * D, -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            try:
                p_try = PoseParam.from_vector(theta + step)
                fams_try = eval_families(p_try, bundle, K, names, with_jacobian=False)
            except (DegenerateParamError, ValueError):
                mu *= 10.0
                continue
            cost_try = _stack_cost(fams_try, coefs, deltas)
            if cost_try < cost:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            break

        theta = theta + step
        p = PoseParam.from_vector(theta)
        prev_cost, cost = cost, cost_try
        mu = max(mu / 3.0, 1e-14)
        trace.costs.append(cost)
        trace.step_norms.append(float(np.linalg.norm(step)))
        trace.dampings.append(mu)
        fams = eval_families(p, bundle, K, names, with_jacobian=True)
        if (
            np.linalg.norm(step) < cfg.tol_step
            or (prev_cost - cost) < cfg.tol_cost * max(prev_cost, 1e-300)
            or cost == 0.0
        ):
            trace.converged = True
            break

    trace.excluded = {n: fams[n].excluded for n in names}
    pose = param_to_pose(p, K)
    trace.final_pose = pose
    return pose, trace


def _reprojection_refit(rho, p0, K, pose0, max_iters=50):
    """Plain reprojection LM over PoseParam for the given correspondences."""
    bundle = PixelBundle(
        rho=rho,
        p0=p0,
        ipix=np.zeros(0, dtype=np.int64),
        axis=np.zeros(0, dtype=np.int64),
        q0=np.zeros((0, 3)),
    )
    p = pose_to_param(pose0, K)
    theta = p.as_vector()
    fams = eval_families(p, bundle, K, ("corr",), with_jacobian=True)
    cost = float((fams["corr"].values ** 2).sum())
    mu = 1e-4
    for _ in range(max_iters):
        r = fams["corr"].values.reshape(-1)
        J = fams["corr"].jac.reshape(-1, 9)
        A = J.T @ J
        g = J.T @ r
        D = np.diag(np.diag(A) + 1e-12)
        accepted = False
        for _ in range(12):
            try:
                step = np.linalg.solve(A + mu * D, -g)
                p_try = PoseParam.from_vector(theta + step)
            except (np.linalg.LinAlgError, DegenerateParamError, ValueError):
                mu *= 10.0
                continue
            fams_try = eval_families(p_try, bundle, K, ("corr",), with_jacobian=False)
            cost_try = float((fams_try["corr"].values ** 2).sum())
            if cost_try < cost:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            break
        theta = theta + step
        p = PoseParam.from_vector(theta)
        cost = cost_try
        mu = max(mu / 3.0, 1e-14)
        fams = eval_families(p, bundle, K, ("corr",), with_jacobian=True)
        if np.linalg.norm(step) < 1e-12 or cost == 0.0:
            break
    return param_to_pose(p, K)


def pnp_ransac(
    maps: TwoLayerMaps, K: CameraIntrinsics, mesh: TriangleMesh, seed: int = 0
) -> RigidPose:
    """Two-stage baseline: P3P hypotheses + inlier refit.

    Deterministic under the seed: identical inputs give a bitwise-identical
    pose. Planar correspondence sets are handled by P3P and logged.
    """
    bundle = gather_bundle(maps, mesh.diameter)
    n = bundle.n_px
    if n < 6:
        raise NoSolutionError(f"need at least 6 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    obj = np.ascontiguousarray(bundle.p0)
    img = np.ascontiguousarray(bundle.rho)
    Kmat = K.K

    sv = np.linalg.svd(obj - obj.mean(axis=0), compute_uv=False)
    if sv[2] < 1e-9 * max(sv[0], 1e-300):
        log.info("pnp_ransac: planar correspondence set (sv ratio %.2e)", sv[2] / max(sv[0], 1e-300))

    best_count = -1
    best_inliers = None
    bound = RANSAC_MAX_ITERS
    it = 0
    while it < min(bound, RANSAC_MAX_ITERS):
        it += 1
        sel = rng.choice(n, size=4, replace=False)
        ok, rvec, tvec = cv2.solvePnP(
            obj[sel], img[sel], Kmat, None, flags=cv2.SOLVEPNP_P3P
        )
        if not ok:
            continue
        R, _ = cv2.Rodrigues(rvec)
        t = tvec.reshape(3)
        X = obj @ R.T + t
        Z = X[:, 2]
        front = Z > EPS_Z
        if not np.any(front):
            continue
        Zs = np.where(front, Z, 1.0)
        du = Kmat[0, 0] * X[:, 0] / Zs + Kmat[0, 2] - img[:, 0]
        dv = Kmat[1, 1] * X[:, 1] / Zs + Kmat[1, 2] - img[:, 1]
        err2 = du * du + dv * dv
        inl = front & (err2 < RANSAC_INLIER_PX**2)
        count = int(inl.sum())
        if count > best_count:
            best_count = count
            best_inliers = inl
            best_Rt = (R, t)
            ratio = count / n
            if 0 < ratio < 1:
                bound = math.log(1.0 - RANSAC_CONFIDENCE) / math.log(1.0 - ratio**4)
            elif ratio >= 1:
                break
    if best_inliers is None or best_count < 4:
        raise NoSolutionError("RANSAC found no valid hypothesis")

    R, t = best_Rt
    if t[2] <= 0:
        raise NoSolutionError("best hypothesis places the object behind the camera")
    log.debug("pnp_ransac: %d/%d inliers after %d iterations", best_count, n, it)
    return _reprojection_refit(img[best_inliers], obj[best_inliers], K, RigidPose(R, t))


def add_noise(maps: TwoLayerMaps, spec: NoiseSpec) -> TwoLayerMaps:
    """Gaussian noise on the normalized coordinate channels of valid
    pixels plus uniform pixel dropout; deterministic under spec.seed."""
    rng = np.random.default_rng(spec.seed)
    p0, q0 = maps.p0, maps.q0
    mask, depth, q_valid = maps.mask, maps.depth, maps.q_valid
    if spec.sigma_corr > 0:
        noise = rng.normal(0.0, spec.sigma_corr, size=p0.shape)
        p0 = np.where(mask[..., None], p0 + noise, p0)
    if spec.sigma_occ > 0:
        noise = rng.normal(0.0, spec.sigma_occ, size=q0.shape)
        q0 = np.where(q_valid[..., None], q0 + noise, q0)
    if spec.dropout > 0:
        drop = (rng.random(size=mask.shape) < spec.dropout) & mask
        keep = ~drop
        mask = mask & keep
        depth = np.where(keep, depth, 0.0)
        p0 = np.where(keep[..., None], p0, 0.0)
        q_valid = q_valid & keep[..., None]
        q0 = np.where(q_valid[..., None], q0, 0.0)
    return replace(maps, mask=mask, depth=depth, p0=p0, q0=q0, q_valid=q_valid)


def strip_occlusion(maps: TwoLayerMaps) -> TwoLayerMaps:
    """Correspondence-only view of the maps: all q_valid forced false."""
    return replace(
        maps,
        q0=np.zeros_like(maps.q0),
        q_valid=np.zeros_like(maps.q_valid),
    )


# ---------------------------------------------------------------------------
# Noise study
# ---------------------------------------------------------------------------

STUDY_METHODS = ("two_layer", "corr_only", "pnp")


@dataclass
class StudyResult:
    sigmas: list[float]
    rows: list[dict]          # one per (sigma, scene, method)
    table: dict               # (sigma, method) -> {metric: median/mean}
    directional: dict         # two-layer vs corr-only summary at sigma_check
    failures: int = 0

    def cell(self, sigma, method):
        return self.table[(float(sigma), method)]


def _pose_errors(est: RigidPose, gt: RigidPose, mesh: TriangleMesh):
    from .metrics import add as add_metric
    from .metrics import rotation_angle_deg

    return {
        "rot_deg": rotation_angle_deg(est.R, gt.R),
        "t_err": float(np.linalg.norm(est.t - gt.t)),
        "add": add_metric(est, gt, mesh),
    }


def noise_study(
    meshes,
    sigma_grid,
    n_scenes: int,
    cfg: SolverConfig | None = None,
    seed: int = 0,
    resolution=(64, 64),
    sigma_check: float = 0.01,
) -> StudyResult:
    """Rotation/translation/ADD errors of the three methods across the
    noise grid. Failures are tallied per scene, never fatal.
    """
    from .scenes import sample_scene

    cfg = cfg or SolverConfig()
    sigmas = [float(s) for s in sigma_grid]
    if len(sigmas) < 2:
        raise ValueError("need at least 2 noise levels")
    rng = np.random.default_rng(seed)
    ss = np.random.SeedSequence(seed)
    noise_seeds = ss.spawn(len(sigmas) * n_scenes)

    rows = []
    failures = 0
    corr_cfg = replace(cfg, weights=Weights(0.0, 0.0, 0.0, 1.0))
    for i_scene in range(n_scenes):
        mesh = meshes[i_scene % len(meshes)]
        scene = sample_scene(rng, mesh=mesh, resolution=resolution)
        for i_sig, sigma in enumerate(sigmas):
            nseed = noise_seeds[i_scene * len(sigmas) + i_sig].generate_state(1)[0]
            spec = NoiseSpec(sigma_corr=sigma, sigma_occ=sigma, dropout=0.0, seed=int(nseed))
            noisy = add_noise(scene.maps, spec)
            try:
                init = init_pose(noisy, scene.K, mesh)
            except NoDetectionError:
                failures += 3
                continue
            for method in STUDY_METHODS:
                try:
                    if method == "two_layer":
                        est, _ = solve_lm(noisy, scene.K, mesh, cfg, init)
                    elif method == "corr_only":
                        est, _ = solve_lm(
                            strip_occlusion(noisy), scene.K, mesh, corr_cfg, init
                        )
                    else:
                        est = pnp_ransac(noisy, scene.K, mesh, seed=int(nseed))
                except Exception as exc:  # tallied, not fatal
                    log.warning("scene %d sigma %g %s failed: %s", i_scene, sigma, method, exc)
                    failures += 1
                    continue
                row = {"sigma": sigma, "scene": i_scene, "method": method}
                row.update(_pose_errors(est, scene.pose, mesh))
                rows.append(row)

    table = {}
    for sigma in sigmas:
        for method in STUDY_METHODS:
            sel = [r for r in rows if r["sigma"] == sigma and r["method"] == method]
            cell = {"n": len(sel)}
            for key in ("rot_deg", "t_err", "add"):
                vals = np.array([r[key] for r in sel])
                cell[f"median_{key}"] = float(np.median(vals)) if len(vals) else float("nan")
                cell[f"mean_{key}"] = float(vals.mean()) if len(vals) else float("nan")
            table[(sigma, method)] = cell

    directional = {"sigma": sigma_check, "cells": 0, "two_layer_wins": 0, "fraction": float("nan")}
    if sigma_check in sigmas:
        by_scene = {}
        for r in rows:
            if r["sigma"] == sigma_check and r["method"] in ("two_layer", "corr_only"):
                by_scene.setdefault(r["scene"], {})[r["method"]] = r["add"]
        pairs = [v for v in by_scene.values() if len(v) == 2]
        wins = sum(1 for v in pairs if v["two_layer"] <= v["corr_only"])
        directional.update(
            cells=len(pairs),
            two_layer_wins=wins,
            fraction=wins / len(pairs) if pairs else float("nan"),
        )
    return StudyResult(sigmas, rows, table, directional, failures)


def format_study_table(result: StudyResult) -> str:
    """Aligned text table of the study medians."""
    lines = []
    header = f"{'sigma':>8} {'method':>10} {'n':>4} {'med rot(deg)':>13} {'med t(m)':>11} {'med ADD(m)':>11}"
    lines.append(header)
    lines.append("-" * len(header))
    for sigma in result.sigmas:
        for method in STUDY_METHODS:
            c = result.cell(sigma, method)
            lines.append(
                f"{sigma:>8.4g} {method:>10} {c['n']:>4d} "
                f"{c['median_rot_deg']:>13.5g} {c['median_t_err']:>11.5g} {c['median_add']:>11.5g}"
            )
    d = result.directional
    lines.append(
        f"directional check at sigma={d['sigma']:g}: two-layer ADD <= corr-only "
        f"on {d['two_layer_wins']}/{d['cells']} cells ({100 * d['fraction']:.1f}%)"
    )
    return "\n".join(lines)
