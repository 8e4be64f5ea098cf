"""Pinned evaluation-protocol constants (BOP-style defaults, v1).

The threshold grids below follow the public BOP evaluation defaults; they
are pinned here so results stay reproducible if upstream conventions move.
"""

import numpy as np

# AUC integration upper bound for ADD/ADD-S curves [m] (PoseCNN convention).
AUC_MAX_THRESHOLD_M = 0.10

# VSD misalignment tolerances tau, as fractions of the object diameter.
VSD_TAU_FRACTIONS = np.arange(0.05, 0.51, 0.05)

# Correctness thresholds on the VSD error (which lives in [0, 1]).
VSD_THRESHOLDS = np.arange(0.05, 0.51, 0.05)

# MSSD correctness thresholds, as fractions of the object diameter.
MSSD_THRESHOLD_FRACTIONS = np.arange(0.05, 0.51, 0.05)

# MSPD correctness thresholds in pixels, scaled by r = image_width / 640.
MSPD_THRESHOLDS_PX = np.arange(5.0, 50.1, 5.0)
MSPD_REFERENCE_WIDTH = 640.0

# Discretization of continuous symmetry axes (steps per full turn).
CONTINUOUS_SYMMETRY_STEPS = 36

# Point count for ADD/ADD-S when a mesh has fewer vertices (fixed-seed
# uniform surface sampling).
MODEL_POINT_TARGET = 500
MODEL_POINT_SEED = 20210817
