"""Relative pose estimation, ground-truth matching, a keypoint-to-pose
transformer regressor and trajectory metrics.

Conventions: quaternions are scalar-last ``(x, y, z, w)``; trajectory poses
map camera coordinates to world coordinates; ``relative_pose(a, b)`` is
``a⁻¹ ∘ b``.
"""
from ._kernels import BACKEND
from .correspondence import (
    UNMATCHED,
    Assignment,
    DepthMap,
    HomographyParams,
    RatioMatchParams,
    gt_matches_depth,
    gt_matches_homography,
    nn_ratio_match,
    project_depth,
    sample_homography,
    warp_points,
)
from .epipolar import (
    CameraIntrinsics,
    HingeLossInput,
    epipolar_errors,
    essential_from_pose,
    fundamental_from_essential,
    hinge_loss,
    sampson_error,
)
from .errors import *  # noqa: F401,F403
from .fileio import (
    TrajectoryFormat,
    load_depth_pfm,
    load_matches,
    load_trajectory,
    save_matches,
    save_trajectory,
    write_depth_pfm,
)
from .geometry import (
    Pose,
    quat_to_rotmat,
    r6_to_rotmat,
    relative_pose,
    rotation_angle_deg,
    rotmat_to_6d,
    rotmat_to_quat,
)
from .robust_pose import (
    MatchSet,
    PoseEstimate,
    RansacParams,
    inlier_percentage,
    lo_ransac_pose,
    match_precision,
    pose_auc,
    pose_error,
)
from .synthetic import SyntheticSceneConfig, generate_synthetic_pair, generate_synthetic_trajectory
from .trajectory import AlignmentMode, Trajectory, accumulate, ate, kitti_score, rpe_score

__version__ = "0.1.0"
