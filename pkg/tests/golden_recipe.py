"""Deterministic recipe for the committed golden files.

Both the generator script and the acceptance test call these functions;
the committed bytes under tests/golden/ must match exactly.
"""

import numpy as np

from twolayer_pose import cli, geom, layers, mapfile
from twolayer_pose.scenes import make_box


def golden_maps_bytes() -> bytes:
    mesh = make_box((0.12, 0.18, 0.25))
    K = geom.CameraIntrinsics(150.0, 152.0, 31.5, 31.5)
    th = np.deg2rad(30.0)
    Ry = np.array(
        [[np.cos(th), 0, np.sin(th)], [0, 1, 0], [-np.sin(th), 0, np.cos(th)]]
    )
    th2 = np.deg2rad(20.0)
    Rx = np.array(
        [[1, 0, 0], [0, np.cos(th2), -np.sin(th2)], [0, np.sin(th2), np.cos(th2)]]
    )
    pose = geom.RigidPose(Rx @ Ry, [0.02, -0.03, 1.1])
    cfg = layers.RenderConfig(resolution=(64, 64))
    maps = layers.render_maps(mesh, pose, K, cfg)
    return mapfile.encode_maps(maps)


def golden_bop_bytes() -> bytes:
    th = np.deg2rad(45.0)
    Rz = np.array(
        [[np.cos(th), -np.sin(th), 0], [np.sin(th), np.cos(th), 0], [0, 0, 1]]
    )
    pose = geom.RigidPose(Rz, [0.01, 0.02, 1.5])
    rows = [
        cli.bop_csv_row(1, 1, 1, 1.0, pose),
        cli.bop_csv_row(1, 2, 1, 0.75, geom.RigidPose(np.eye(3), [0.0, 0.0, 0.8])),
    ]
    return (",".join(cli.BOP_HEADER) + "\n" + "".join(r + "\n" for r in rows)).encode("ascii")


if __name__ == "__main__":
    from pathlib import Path

    out = Path(__file__).parent / "golden"
    out.mkdir(exist_ok=True)
    (out / "golden_maps.sopm").write_bytes(golden_maps_bytes())
    (out / "golden_pred.csv").write_bytes(golden_bop_bytes())
    print("golden files written to", out)
