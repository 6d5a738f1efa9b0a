"""Synthetic two-view scenes and trajectories for desk-scale runs."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .epipolar import CameraIntrinsics
from .errors import ConfigError, FrustumEmpty
from .geometry import Pose, axis_angle_to_rotmat
from .robust_pose import MatchSet
from .trajectory import Trajectory, accumulate

DEFAULT_INTRINSICS = CameraIntrinsics(fx=320.0, fy=320.0, cx=320.0, cy=240.0, width=640, height=480)


@dataclass(frozen=True)
class SyntheticSceneConfig:
    num_points: int = 200
    depth_range: tuple = (2.0, 20.0)
    rotation_magnitude_deg: float = 10.0
    translation_magnitude_m: float = 1.0
    pixel_noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    intrinsics: CameraIntrinsics = field(default=DEFAULT_INTRINSICS)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.depth_range
        if not (0 < lo <= hi):
            raise ConfigError(f"depth_range must satisfy 0 < min <= max, got {self.depth_range}")
        if not 0 <= self.outlier_fraction < 1:
            raise ConfigError(f"outlier_fraction must lie in [0, 1), got {self.outlier_fraction}")
        if self.num_points < 1 or self.pixel_noise_sigma < 0:
            raise ConfigError("num_points must be >= 1 and pixel_noise_sigma >= 0")
        if self.rotation_magnitude_deg < 0 or self.translation_magnitude_m < 0:
            raise ConfigError("motion magnitudes must be non-negative")


def _unit(v):
    return v / np.linalg.norm(v)


def sample_motion(config: SyntheticSceneConfig, rng) -> Pose:
    """Random point-transfer pose ``X1 = R @ X0 + t`` within the magnitudes.

    The rotation angle is uniform in ``±rotation_magnitude_deg`` about a
    random axis; the translation has a random direction and a length
    uniform in ``[0.5, 1] * translation_magnitude_m``.
    """
    axis = _unit(rng.normal(size=3))
    angle = np.radians(rng.uniform(-1.0, 1.0) * config.rotation_magnitude_deg)
    direction = _unit(rng.normal(size=3))
    length = rng.uniform(0.5, 1.0) * config.translation_magnitude_m
    return Pose(axis_angle_to_rotmat(axis, angle), direction * length)


def _visible_points(config, t01, rng, max_rounds=50):
    K = config.intrinsics
    lo, hi = config.depth_range
    need = config.num_points
    found = []
    for _ in range(max_rounds):
        m = max(16, 2 * need)
        u = rng.uniform(-0.5, K.width - 0.5, m)
        v = rng.uniform(-0.5, K.height - 0.5, m)
        z = rng.uniform(lo, hi, m)
        X0 = np.column_stack([K.normalize(np.column_stack([u, v])) * z[:, None], z])
        X1 = t01.apply(X0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (X1[:, 2] > 1e-9) & K.contains(K.project(X1)) & K.contains(K.project(X0))
        found.append(X0[ok])
        need -= int(ok.sum())
        if need <= 0:
            break
    X0 = np.concatenate(found)[: config.num_points]
    if len(X0) < 8:
        raise FrustumEmpty(f"only {len(X0)} points visible in both views")
    return X0


def synthesize_pair(config: SyntheticSceneConfig, t01: Pose, rng, pair_id=""):
    """Matches for a given point-transfer pose. Returns ``(MatchSet, inlier_mask)``."""
    K = config.intrinsics
    X0 = _visible_points(config, t01, rng)
    n = len(X0)
    kp0 = K.project(X0)
    kp1 = K.project(t01.apply(X0))
    if config.pixel_noise_sigma > 0:
        kp0 = kp0 + rng.normal(scale=config.pixel_noise_sigma, size=kp0.shape)
        kp1 = kp1 + rng.normal(scale=config.pixel_noise_sigma, size=kp1.shape)
    inlier = np.ones(n, dtype=bool)
    n_out = int(round(config.outlier_fraction * n))
    if n_out:
        idx = rng.choice(n, n_out, replace=False)
        inlier[idx] = False
        kp1[idx] = np.column_stack(
            [rng.uniform(-0.5, K.width - 0.5, n_out), rng.uniform(-0.5, K.height - 0.5, n_out)]
        )
    conf = np.where(inlier, rng.uniform(0.7, 1.0, n), rng.uniform(0.1, 0.9, n))
    return MatchSet(kp0, kp1, conf, pair_id), inlier


def generate_synthetic_pair(config: SyntheticSceneConfig, return_inliers=False):
    """Random scene seen from two cameras.

    Returns ``(matches, gt)`` where ``gt`` is the point-transfer pose
    ``X1 = R @ X0 + t``; with ``return_inliers=True`` the true-inlier mask is
    appended.
    """
    rng = np.random.default_rng(config.seed)
    t01 = sample_motion(config, rng)
    matches, inlier = synthesize_pair(config, t01, rng, pair_id=f"seed{config.seed}")
    if return_inliers:
        return matches, t01, inlier
    return matches, t01


def generate_synthetic_trajectory(config: SyntheticSceneConfig, num_frames: int):
    """Smooth forward-moving random walk plus one MatchSet per consecutive pair.

    Returns ``(trajectory, matches)``; ``matches[k]`` observes frames ``k``
    and ``k + 1`` and is consistent with
    ``relative_pose(traj[k], traj[k + 1]).inverse()`` as point transfer.
    """
    if num_frames < 2:
        raise ConfigError(f"num_frames must be >= 2, got {num_frames}")
    rng = np.random.default_rng(config.seed)
    jitter = np.zeros(3)
    heading = np.zeros(3)
    rels = []
    for _ in range(num_frames - 1):
        jitter = 0.7 * jitter + 0.3 * rng.normal(scale=0.3, size=3)
        heading = 0.7 * heading + 0.3 * rng.normal(size=3) * np.array([0.3, 1.0, 0.3])
        step = config.translation_magnitude_m * _unit(np.array([0.0, 0.0, 1.0]) + jitter)
        if np.linalg.norm(heading) > 0:
            angle = np.radians(config.rotation_magnitude_deg) * np.tanh(np.linalg.norm(heading))
            R = axis_angle_to_rotmat(heading, angle)
        else:
            R = np.eye(3)
        rels.append(Pose(R, step))
    traj = accumulate(rels, Pose.identity())
    matches = [
        synthesize_pair(config, rel.inverse(), rng, pair_id=f"{k:06d}_{k + 1:06d}")[0] for k, rel in enumerate(rels)
    ]
    return traj, matches


def synthetic_training_set(n: int, config: SyntheticSceneConfig):
    """``n`` independent pairs with regression targets.

    Each item is ``(matches, rel)`` where ``rel`` is the camera-1-to-camera-0
    pose, i.e. the step that :func:`vokit.trajectory.accumulate` chains.
    """
    out = []
    for i in range(n):
        m, t01 = generate_synthetic_pair(replace(config, seed=config.seed * 100003 + i))
        out.append((m, t01.inverse()))
    return out
