"""Command-line surface: gen / solve / eval / bench.

Exit codes: 0 success, 2 usage or I/O error, 3 numerical failure.
All outputs are deterministic under --seed; files are written atomically.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import MeshParseError, NoDetectionError, NoSolutionError
from .geom import CameraIntrinsics, RigidPose, TriangleMesh
from .layers import RenderConfig, render_maps
from .mapfile import MapFileError, atomic_write_bytes, encode_maps, read_maps
from .meshio import load_mesh
from .metrics import SymmetrySet, evaluate_scenes
from .scenes import default_mesh_pool, sample_pose
from .solver import NoiseSpec, SolverConfig, add_noise, format_study_table, noise_study, pnp_ransac, solve_lm

BOP_HEADER = ["scene_id", "im_id", "obj_id", "score", "R", "t", "time"]


@dataclass(frozen=True)
class SceneSpec:
    """Parsed scene description; to_dict/from_dict round-trip exactly."""

    mesh: str
    units: str = "m"
    intrinsics: CameraIntrinsics = CameraIntrinsics(120.0, 120.0, 31.5, 31.5)
    pose: RigidPose | None = None
    sampler_seed: int | None = None
    render: RenderConfig = RenderConfig()
    noise: NoiseSpec = NoiseSpec()

    def to_dict(self) -> dict:
        d = {
            "mesh": self.mesh,
            "units": self.units,
            "intrinsics": asdict(self.intrinsics),
            "render": {
                "res": list(self.render.resolution),
                "near": self.render.near,
                "far": self.render.far,
                "omega_margin": self.render.omega_margin,
            },
            "noise": asdict(self.noise),
        }
        if self.pose is not None:
            d["pose"] = pose_to_dict(self.pose)
        if self.sampler_seed is not None:
            d["sampler_seed"] = self.sampler_seed
        return d

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        render = d.get("render", {})
        res = render.get("res", [64, 64])
        if isinstance(res, int):
            res = [res, res]
        return SceneSpec(
            mesh=d["mesh"],
            units=d.get("units", "m"),
            intrinsics=CameraIntrinsics(**d.get("intrinsics", {"fx": 120.0, "fy": 120.0, "cx": 31.5, "cy": 31.5})),
            pose=pose_from_dict(d["pose"]) if "pose" in d else None,
            sampler_seed=d.get("sampler_seed"),
            render=RenderConfig(
                resolution=tuple(res),
                near=render.get("near", 1e-3),
                far=render.get("far", 1e3),
                omega_margin=render.get("omega_margin", 1.0),
            ),
            noise=NoiseSpec(**d.get("noise", {})),
        )


def pose_to_dict(pose: RigidPose) -> dict:
    return {"R": [float(x) for x in pose.R.reshape(-1)], "t": [float(x) for x in pose.t]}


def pose_from_dict(d: dict) -> RigidPose:
    return RigidPose(np.asarray(d["R"], dtype=float).reshape(3, 3), np.asarray(d["t"], dtype=float))


def bop_csv_row(scene_id, im_id, obj_id, score, pose: RigidPose, time_s=-1.0) -> str:
    """One BOP-style result row; rotation row-major, translation in mm."""
    rstr = " ".join(repr(float(x)) for x in pose.R.reshape(-1))
    tstr = " ".join(repr(float(x) * 1000.0) for x in pose.t)
    return f"{scene_id},{im_id},{obj_id},{repr(float(score))},{rstr},{tstr},{repr(float(time_s))}"


def write_bop_csv(rows: list[str], path) -> None:
    text = ",".join(BOP_HEADER) + "\n" + "".join(r + "\n" for r in rows)
    atomic_write_bytes(path, text.encode("ascii"))


def read_bop_csv(path):
    """Parse rows into dicts with pose in meters."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != BOP_HEADER:
            raise ValueError(f"unexpected CSV header: {reader.fieldnames}")
        for row in reader:
            R = np.array([float(x) for x in row["R"].split()], dtype=float).reshape(3, 3)
            t = np.array([float(x) for x in row["t"].split()], dtype=float) / 1000.0
            out.append(
                {
                    "scene_id": int(row["scene_id"]),
                    "im_id": int(row["im_id"]),
                    "obj_id": int(row["obj_id"]),
                    "score": float(row["score"]),
                    "pose": RigidPose(R, t),
                    "time": float(row["time"]),
                }
            )
    return out


def _write_json(obj, path):
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("ascii"))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = SceneSpec.from_dict(json.loads(Path(args.scene).read_text()))
    if args.res is not None:
        spec = replace(spec, render=replace(spec.render, resolution=(args.res, args.res)))
    noise = spec.noise
    if args.noise_sigma_corr is not None:
        noise = replace(noise, sigma_corr=args.noise_sigma_corr)
    if args.noise_sigma_occ is not None:
        noise = replace(noise, sigma_occ=args.noise_sigma_occ)
    if args.dropout is not None:
        noise = replace(noise, dropout=args.dropout)
    if args.seed is not None:
        noise = replace(noise, seed=args.seed)
        spec = replace(spec, sampler_seed=args.seed if spec.pose is None else spec.sampler_seed)
    spec = replace(spec, noise=noise)

    mesh_path = Path(args.scene).parent / spec.mesh if not Path(spec.mesh).is_absolute() else Path(spec.mesh)
    mesh = load_mesh(mesh_path, spec.units)
    K = spec.intrinsics
    if spec.pose is not None:
        pose = spec.pose
    else:
        rng = np.random.default_rng(spec.sampler_seed or 0)
        pose = sample_pose(rng, mesh, K, spec.render.resolution)
    maps = render_maps(mesh, pose, K, spec.render)
    if noise.sigma_corr > 0 or noise.sigma_occ > 0 or noise.dropout > 0:
        maps = add_noise(maps, noise)

    out = Path(args.out)
    atomic_write_bytes(out / "maps.sopm", encode_maps(maps))
    gt = pose_to_dict(pose)
    gt["intrinsics"] = asdict(K)
    gt["diameter"] = mesh.diameter
    _write_json(gt, out / "pose_gt.json")
    _write_json(spec.to_dict(), out / "scene_resolved.json")
    print(f"wrote {out / 'maps.sopm'} ({maps.mask.sum()} mask px)")
    return 0


def cmd_solve(args) -> int:
    maps = read_maps(args.maps)
    mesh = load_mesh(args.mesh, args.units)
    if args.intrinsics:
        K = CameraIntrinsics(**json.loads(Path(args.intrinsics).read_text())["intrinsics"])
    else:
        gt_path = Path(args.maps).parent / "pose_gt.json"
        if not gt_path.exists():
            raise FileNotFoundError(
                "no --intrinsics given and no pose_gt.json next to the maps"
            )
        K = CameraIntrinsics(**json.loads(gt_path.read_text())["intrinsics"])

    out = Path(args.out)
    trace_rows = []
    if args.method == "pnp":
        pose = pnp_ransac(maps, K, mesh, seed=args.seed)
        converged = True
    else:
        cfg = SolverConfig(seed=args.seed)
        pose, trace = solve_lm(maps, K, mesh, cfg)
        converged = trace.converged
        for i, cost in enumerate(trace.costs):
            step = trace.step_norms[i - 1] if i >= 1 else ""
            damp = trace.dampings[i - 1] if i >= 1 else ""
            trace_rows.append((i, cost, step, damp))

    est = pose_to_dict(pose)
    est["converged"] = bool(converged)
    est["method"] = args.method
    _write_json(est, out / "pose_est.json")

    buf = io.StringIO()
    wr = csv.writer(buf)
    wr.writerow(["iter", "cost", "step_norm", "damping"])
    wr.writerows(trace_rows)
    atomic_write_bytes(out / "trace.csv", buf.getvalue().encode("ascii"))

    row = bop_csv_row(args.scene_id, args.im_id, args.obj_id, 1.0, pose)
    write_bop_csv([row], out / "pred.csv")
    print(f"{args.method}: converged={converged} -> {out / 'pose_est.json'}")
    return 0


def _load_syms(path):
    if path is None:
        return {}
    raw = json.loads(Path(path).read_text())
    out = {}
    for obj_id, entry in raw.items():
        discrete = tuple(
            np.asarray(m, dtype=float).reshape(3, 3) for m in entry.get("discrete", [])
        )
        axes = tuple(np.asarray(a, dtype=float) for a in entry.get("continuous_axes", []))
        out[int(obj_id)] = SymmetrySet(discrete=discrete or (np.eye(3),), continuous_axes=axes)
    return out


def cmd_eval(args) -> int:
    preds = read_bop_csv(args.pred)
    if not preds:
        raise ValueError("prediction CSV has no rows")
    syms_by_obj = _load_syms(args.sym)
    gt_dir = Path(args.gt_dir)
    mesh_dir = Path(args.mesh_dir)

    pairs, meshes, syms, Ks = [], [], [], []
    mesh_cache: dict[int, TriangleMesh] = {}
    for p in preds:
        key = f"{p['scene_id']:06d}_{p['im_id']:06d}_{p['obj_id']:06d}.json"
        gt = json.loads((gt_dir / key).read_text())
        obj = p["obj_id"]
        if obj not in mesh_cache:
            for cand in (f"obj_{obj:06d}.ply", f"obj_{obj:06d}.obj"):
                if (mesh_dir / cand).exists():
                    mesh_cache[obj] = load_mesh(mesh_dir / cand, args.mesh_units)
                    break
            else:
                raise FileNotFoundError(f"no mesh for obj {obj} in {mesh_dir}")
        pairs.append((p["pose"], pose_from_dict(gt)))
        meshes.append(mesh_cache[obj])
        syms.append(syms_by_obj.get(obj))
        Ks.append(CameraIntrinsics(**gt["intrinsics"]))

    syms = [s if s is not None else SymmetrySet() for s in syms]
    cfg = RenderConfig(resolution=(args.res, args.res))
    result = evaluate_scenes(pairs, meshes, syms, Ks=Ks, cfg=cfg, with_ar=not args.no_ar)

    out = Path(args.out)
    rows = [("metric", "value")]
    for k, v in sorted(result.pass_rates.items()):
        rows.append((k, f"{v:.6f}"))
    for k, v in sorted(result.deg_cm_rates.items()):
        rows.append((k, f"{v:.6f}"))
    rows.append(("auc_add", f"{result.auc_add:.6f}"))
    rows.append(("auc_add_s", f"{result.auc_add_s:.6f}"))
    if result.ar is not None:
        rows.append(("ar_vsd", f"{result.ar.vsd:.6f}"))
        rows.append(("ar_mssd", f"{result.ar.mssd:.6f}"))
        rows.append(("ar_mspd", f"{result.ar.mspd:.6f}"))
        rows.append(("ar_mean", f"{result.ar.mean:.6f}"))

    buf = io.StringIO()
    csv.writer(buf).writerows(rows)
    atomic_write_bytes(out / "metrics.csv", buf.getvalue().encode("ascii"))
    width = max(len(r[0]) for r in rows)
    text = "\n".join(f"{k:<{width}}  {v}" for k, v in rows[1:]) + "\n"
    atomic_write_bytes(out / "metrics.txt", text.encode("ascii"))
    sys.stdout.write(text)
    return 0


def cmd_bench(args) -> int:
    sigmas = [float(s) for s in args.sigmas.split(",")]
    meshes = default_mesh_pool(np.random.default_rng(args.seed), n_hulls=2)
    result = noise_study(
        meshes,
        sigmas,
        n_scenes=args.scenes,
        cfg=SolverConfig(),
        seed=args.seed,
        resolution=(args.res, args.res),
    )
    table = format_study_table(result)
    out = Path(args.out)
    payload = {
        "sigmas": result.sigmas,
        "rows": result.rows,
        "cells": [
            {"sigma": sigma, "method": method, **stats}
            for (sigma, method), stats in sorted(result.table.items())
        ],
        "directional": result.directional,
        "failures": result.failures,
        "seed": args.seed,
        "n_scenes": args.scenes,
    }
    _write_json(payload, out / "bench.json")
    atomic_write_bytes(out / "bench.txt", (table + "\n").encode("ascii"))
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tlpose", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render two-layer maps for a scene spec")
    g.add_argument("--scene", required=True, help="scene spec JSON")
    g.add_argument("--out", required=True)
    g.add_argument("--res", type=int, default=None, help="square resolution override (default 64)")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--noise-sigma-corr", type=float, default=None)
    g.add_argument("--noise-sigma-occ", type=float, default=None)
    g.add_argument("--dropout", type=float, default=None)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="recover the pose from a map file")
    s.add_argument("--maps", required=True)
    s.add_argument("--mesh", required=True)
    s.add_argument("--units", default="m", choices=("m", "mm"))
    s.add_argument("--intrinsics", default=None, help="JSON with an 'intrinsics' entry")
    s.add_argument("--out", required=True)
    s.add_argument("--method", default="lm", choices=("lm", "pnp"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scene-id", type=int, default=0)
    s.add_argument("--im-id", type=int, default=0)
    s.add_argument("--obj-id", type=int, default=0)
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="metric table for a BOP-style prediction CSV")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt-dir", required=True)
    e.add_argument("--mesh-dir", required=True)
    e.add_argument("--mesh-units", default="m", choices=("m", "mm"))
    e.add_argument("--sym", default=None, help="symmetry sidecar JSON")
    e.add_argument("--out", required=True)
    e.add_argument("--res", type=int, default=64)
    e.add_argument("--no-ar", action="store_true", help="skip the AR (render-based) scores")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="noise study comparison table")
    b.add_argument("--out", required=True)
    b.add_argument("--sigmas", default="0,0.005,0.01,0.02")
    b.add_argument("--scenes", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--res", type=int, default=64)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NoDetectionError, NoSolutionError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (OSError, MeshParseError, MapFileError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
