"""Synthetic meshes, pose/intrinsics samplers and scene bundles.

The samplers follow the study protocol: uniform rotations from random unit
quaternions, distance in [0.5, 2] x (4 x diameter), projected centroid
uniform in the central 60% of the image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import CameraIntrinsics, PoseParam, RigidPose, TriangleMesh, param_to_pose, rotation_to_r6d
from .layers import RenderConfig, TwoLayerMaps, render_maps


def make_box(extents=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with 12 triangles."""
    e = np.asarray(extents, dtype=float) / 2.0
    c = np.asarray(center, dtype=float)
    signs = np.array(
        [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float
    )
    verts = c + signs * e
    # two triangles per face, outward consistent winding not required
    faces = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # x = -e
            [4, 6, 7], [4, 7, 5],  # x = +e
            [0, 4, 5], [0, 5, 1],  # y = -e
            [2, 3, 7], [2, 7, 6],  # y = +e
            [0, 2, 6], [0, 6, 4],  # z = -e
            [1, 5, 7], [1, 7, 3],  # z = +e
        ]
    )
    return TriangleMesh(verts, faces)


def make_icosphere(radius=0.5, subdivisions=2, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Icosahedron subdivided `subdivisions` times, vertices on the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts) * radius + np.asarray(center, dtype=float)
    return TriangleMesh(v, np.asarray(faces))


def make_random_hull(rng: np.random.Generator, n_points=40, scale=(0.4, 0.7, 1.0)) -> TriangleMesh:
    """Convex hull of a random anisotropic point cloud."""
    from scipy.spatial import ConvexHull

    pts = rng.normal(size=(n_points, 3)) * np.asarray(scale) * 0.25
    hull = ConvexHull(pts)
    # reindex to hull vertices only
    idx_map = {v: i for i, v in enumerate(hull.vertices)}
    verts = pts[hull.vertices]
    faces = np.array([[idx_map[i] for i in simplex] for simplex in hull.simplices])
    return TriangleMesh(verts, faces)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation from a normalized Gaussian quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def sample_intrinsics(rng: np.random.Generator, resolution=(64, 64)) -> CameraIntrinsics:
    w, h = resolution
    f = rng.uniform(1.6, 2.0) * w  # keeps a 4-diameter object inside the frame
    return CameraIntrinsics(
        fx=f * rng.uniform(0.98, 1.02),
        fy=f * rng.uniform(0.98, 1.02),
        cx=w / 2.0 + rng.uniform(-1.5, 1.5),
        cy=h / 2.0 + rng.uniform(-1.5, 1.5),
    )


def sample_pose(
    rng: np.random.Generator,
    mesh: TriangleMesh,
    K: CameraIntrinsics,
    resolution=(64, 64),
) -> RigidPose:
    """Random pose per the study protocol (see module docstring)."""
    w, h = resolution
    dist = rng.uniform(0.5, 2.0) * 4.0 * mesh.diameter
    uv = np.array(
        [rng.uniform(0.2 * w, 0.8 * w), rng.uniform(0.2 * h, 0.8 * h)]
    )
    R = random_rotation(rng)
    param = PoseParam(rotation_to_r6d(R), uv, dist)
    return param_to_pose(param, K)


@dataclass(frozen=True)
class Scene:
    """A rendered synthetic scene: everything a solver test needs."""

    mesh: TriangleMesh
    pose: RigidPose
    K: CameraIntrinsics
    cfg: RenderConfig
    maps: TwoLayerMaps


def default_mesh_pool(rng: np.random.Generator, n_hulls=3):
    meshes = [
        make_box((0.12, 0.18, 0.25)),
        make_icosphere(0.1, 2),
    ]
    for _ in range(n_hulls):
        meshes.append(make_random_hull(rng))
    return meshes


def sample_scene(
    rng: np.random.Generator,
    mesh: TriangleMesh | None = None,
    resolution=(64, 64),
    min_mask_px: int = 40,
    max_tries: int = 20,
) -> Scene:
    """Render a random scene, resampling until the mask is usable."""
    cfg = RenderConfig(resolution=resolution)
    for _ in range(max_tries):
        m = mesh
        if m is None:
            pool = default_mesh_pool(rng, n_hulls=1)
            m = pool[rng.integers(len(pool))]
        K = sample_intrinsics(rng, resolution)
        pose = sample_pose(rng, m, K, resolution)
        maps = render_maps(m, pose, K, cfg)
        if maps.mask.sum() >= min_mask_px and maps.q_valid.sum() > 0:
            return Scene(m, pose, K, cfg, maps)
    raise RuntimeError("could not sample a usable scene")
