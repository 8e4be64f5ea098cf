"""Two-layer object representation and classical 6D pose recovery.

The library renders per-pixel visible-surface correspondences plus the
intersections of each viewing ray with the three object coordinate
planes, exposes the cross-layer consistency residuals with analytic
Jacobians, recovers poses by iteratively reweighted Levenberg-Marquardt
(with a PnP/RANSAC baseline), and evaluates standard pose metrics.
"""

from .geom import (
    BoundingCuboid,
    CameraIntrinsics,
    PoseParam,
    RigidPose,
    TriangleMesh,
    allo_to_ego,
    backproject_ray,
    ego_to_allo,
    mesh_stats,
    param_to_pose,
    pose_to_param,
    project,
    r6d_to_rotation,
    rotation_to_r6d,
)
from .layers import (
    RenderConfig,
    TwoLayerMaps,
    denormalize_maps,
    gen_self_occlusion,
    intersect_coordinate_plane,
    normalize_maps,
    rasterize_visible,
    render_maps,
)
from .mapfile import read_maps, write_maps
from .meshio import load_mesh
from .metrics import (
    SymmetrySet,
    add,
    add_s,
    add_sym,
    ar_scores,
    auc,
    deg_cm,
    mspd,
    mssd,
    pass_rate_add,
    vsd,
)
from .residuals import (
    ResidualReport,
    Weights,
    jacobian,
    res_fixed_rotation,
    res_cl2d,
    res_cl3d,
    res_corr,
    res_q1,
    res_q2,
    total_objective,
)
from .solver import (
    NoiseSpec,
    SolverConfig,
    add_noise,
    init_pose,
    noise_study,
    pnp_ransac,
    solve_lm,
)

__version__ = "0.1.0"
