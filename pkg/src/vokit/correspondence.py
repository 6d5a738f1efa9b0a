"""Ground-truth correspondence labelling and a descriptor ratio-test matcher.

Two labelling routes are provided. The homography route warps image-0
keypoints with a sampled homography. The depth route lifts them with a depth
map, moves them by a relative pose and reprojects them. Either way a warped
keypoint and an image-1 keypoint form a positive pair when they are mutual
nearest neighbours within a pixel radius. Everything else is unmatched.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .epipolar import CameraIntrinsics
from .errors import ConfigError, TooFewDescriptors, VokitError
from .geometry import Pose

UNMATCHED = -1


@dataclass(frozen=True)
class HomographyParams:
    difficulty: float = 0.5
    max_rotation_deg: float = 10.0
    max_translation_frac: float = 0.25
    max_scale_delta: float = 0.25
    max_perspective: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.difficulty <= 1.0:
            raise ConfigError(f"difficulty must lie in [0, 1], got {self.difficulty}")
        for name in ("max_rotation_deg", "max_translation_frac", "max_scale_delta", "max_perspective"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


class HomographyComponents(NamedTuple):
    """Sampled distortion magnitudes, kept for inspection and testing."""

    rotation_deg: float
    translation_px: tuple
    scale: tuple
    perspective: tuple


def sample_homography_components(params: HomographyParams, image_size) -> HomographyComponents:
    w, h = image_size
    if not (w > 0 and h > 0):
        raise ConfigError(f"image size must be positive, got {image_size}")
    rng = np.random.default_rng(params.seed)
    d = params.difficulty
    u = rng.uniform(-1.0, 1.0, size=7)
    angle = u[0] * d * params.max_rotation_deg
    tx = u[1] * d * params.max_translation_frac * w
    ty = u[2] * d * params.max_translation_frac * h
    sx = 1.0 + u[3] * d * params.max_scale_delta
    sy = 1.0 + u[4] * d * params.max_scale_delta
    px = u[5] * d * params.max_perspective
    py = u[6] * d * params.max_perspective
    return HomographyComponents(float(angle), (float(tx), float(ty)), (float(sx), float(sy)), (float(px), float(py)))


def homography_from_components(c: HomographyComponents, image_size) -> np.ndarray:
    """Compose center, rotate, scale, perspective, translate, uncenter."""
    w, h = image_size
    cx, cy = w / 2.0, h / 2.0
    center = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    uncenter = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    th = np.radians(c.rotation_deg)
    rot = np.array([[np.cos(th), -np.sin(th), 0.0], [np.sin(th), np.cos(th), 0.0], [0.0, 0.0, 1.0]])
    scale = np.diag([c.scale[0], c.scale[1], 1.0])
    persp = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [c.perspective[0], c.perspective[1], 1.0]])
    trans = np.array([[1.0, 0.0, c.translation_px[0]], [0.0, 1.0, c.translation_px[1]], [0.0, 0.0, 1.0]])
    H = uncenter @ trans @ persp @ scale @ rot @ center
    return H / H[2, 2]


def sample_homography(params: HomographyParams, image_size) -> np.ndarray:
    """Random homography whose distortions scale linearly with ``difficulty``.

    Each component is drawn uniformly from ``±difficulty * max``; a
    difficulty of 0 yields the exact identity. Deterministic for a seed.
    """
    return homography_from_components(sample_homography_components(params, image_size), image_size)


class WarpResult(NamedTuple):
    points: np.ndarray
    valid: np.ndarray


def warp_points(h, pts) -> WarpResult:
    """Projective warp; points mapped to infinity come back NaN with ``valid`` False."""
    h = np.asarray(h, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    hom = pts @ h[:, :2].T + h[:, 2]
    z = hom[:, 2]
    valid = np.abs(z) >= 1e-12
    out = np.full((len(pts), 2), np.nan)
    out[valid] = hom[valid, :2] / z[valid, None]
    return WarpResult(out, valid)


@dataclass(frozen=True, eq=False)
class Assignment:
    """Ground-truth labelling; ``matches0[i]`` is the image-1 index of keypoint
    ``i`` or -1, and ``matches1`` is the reciprocal map."""

    matches0: np.ndarray
    matches1: np.ndarray

    def __post_init__(self):
        m0 = np.asarray(self.matches0, dtype=np.int64)
        m1 = np.asarray(self.matches1, dtype=np.int64)
        for i, j in enumerate(m0):
            if j != UNMATCHED and (j < 0 or j >= len(m1) or m1[j] != i):
                raise VokitError(f"assignment not bijective at keypoint {i}")
        if int((m0 >= 0).sum()) != int((m1 >= 0).sum()):
            raise VokitError("assignment not bijective: matched counts differ")
        object.__setattr__(self, "matches0", m0)
        object.__setattr__(self, "matches1", m1)

    @property
    def num_matches(self) -> int:
        return int((self.matches0 >= 0).sum())

    def pairs(self) -> np.ndarray:
        i = np.flatnonzero(self.matches0 >= 0)
        return np.column_stack([i, self.matches0[i]])

    def transposed(self) -> Assignment:
        return Assignment(self.matches1, self.matches0)

    def __eq__(self, other):
        if not isinstance(other, Assignment):
            return NotImplemented
        return np.array_equal(self.matches0, other.matches0) and np.array_equal(self.matches1, other.matches1)


def _check_radius(radius):
    if not radius > 0:
        raise ConfigError(f"radius must be positive, got {radius}")


def gt_matches_homography(kpts0, kpts1, h, radius=3.0) -> Assignment:
    _check_radius(radius)
    warped, _ = warp_points(h, kpts0)
    m0, m1 = _kernels.mutual_nearest(warped, np.asarray(kpts1, dtype=np.float64).reshape(-1, 2), radius)
    return Assignment(m0, m1)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth along +z; non-positive or non-finite entries are invalid.

    ``values`` is stored top-down with shape ``(height, width)``.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise VokitError(f"depth map must be a non-empty 2D array, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @classmethod
    def constant(cls, width, height, depth) -> DepthMap:
        return cls(np.full((height, width), float(depth)))


class Projection(NamedTuple):
    points: np.ndarray
    valid: np.ndarray


def project_depth(kpts0, depth0, k0: CameraIntrinsics, k1: CameraIntrinsics, t_rel: Pose) -> Projection:
    """Lift image-0 keypoints with nearest-pixel depth, move by ``t_rel``
    (``X1 = R @ X0 + t``) and project into image 1."""
    kpts0 = np.asarray(kpts0, dtype=np.float64).reshape(-1, 2)
    col = np.rint(kpts0[:, 0])
    row = np.rint(kpts0[:, 1])
    inside = (col >= 0) & (col < depth0.width) & (row >= 0) & (row < depth0.height)
    z = np.full(len(kpts0), np.nan)
    z[inside] = depth0.values[row[inside].astype(np.int64), col[inside].astype(np.int64)]
    depth_ok = np.isfinite(z) & (z > 0)
    X0 = np.column_stack([k0.normalize(kpts0) * z[:, None], z])
    X1 = t_rel.apply(X0)
    front = depth_ok & (X1[:, 2] > 1e-9)
    out = np.full((len(kpts0), 2), np.nan)
    out[front] = k1.project(X1[front])
    valid = front & k1.contains(out)
    out[~valid] = np.nan
    return Projection(out, valid)


def gt_matches_depth(
    kpts0,
    kpts1,
    depth0,
    k0: CameraIntrinsics,
    k1: CameraIntrinsics,
    t_rel: Pose,
    radius=3.0,
    colors0=None,
    colors1=None,
    color_threshold=10.0,
) -> Assignment:
    """Depth-reprojection labelling with an optional RGB consistency filter.

    Pairs whose per-keypoint colours differ by more than ``color_threshold``
    (Euclidean, in 0-255 units) are dropped after geometric matching.
    """
    _check_radius(radius)
    proj = project_depth(kpts0, depth0, k0, k1, t_rel)
    m0, m1 = _kernels.mutual_nearest(proj.points, np.asarray(kpts1, dtype=np.float64).reshape(-1, 2), radius)
    if colors0 is not None and colors1 is not None:
        c0 = np.asarray(colors0, dtype=np.float64).reshape(-1, 3)
        c1 = np.asarray(colors1, dtype=np.float64).reshape(-1, 3)
        i = np.flatnonzero(m0 >= 0)
        dist = np.linalg.norm(c0[i] - c1[m0[i]], axis=1)
        drop = i[dist > color_threshold]
        m1[m0[drop]] = UNMATCHED
        m0[drop] = UNMATCHED
    return Assignment(m0, m1)


@dataclass(frozen=True)
class RatioMatchParams:
    """Lowe ratio test: keep a match when ``d_nn < d_nn2 / ratio_threshold``."""

    ratio_threshold: float = 1.25
    mutual_check: bool = False

    def __post_init__(self):
        if not self.ratio_threshold > 1:
            raise ConfigError(f"ratio_threshold must exceed 1, got {self.ratio_threshold}")


class RatioMatches(NamedTuple):
    idx0: np.ndarray
    idx1: np.ndarray
    confidence: np.ndarray

    def to_matchset(self, kpts0, kpts1, pair_id=""):
        from .robust_pose import MatchSet

        kpts0 = np.asarray(kpts0, dtype=np.float64).reshape(-1, 2)
        kpts1 = np.asarray(kpts1, dtype=np.float64).reshape(-1, 2)
        return MatchSet(kpts0[self.idx0], kpts1[self.idx1], self.confidence, pair_id)


def nn_ratio_match(desc0, desc1, params: RatioMatchParams = RatioMatchParams()) -> RatioMatches:
    """Nearest-neighbour descriptor matching under L2 with the ratio test.

    Confidence is ``1 - d_nn / d_nn2``.
    """
    desc0 = np.asarray(desc0, dtype=np.float64)
    desc1 = np.asarray(desc1, dtype=np.float64)
    if desc0.ndim != 2 or desc1.ndim != 2 or desc0.shape[1] != desc1.shape[1]:
        raise VokitError(f"descriptor shapes {desc0.shape} and {desc1.shape} are incompatible")
    if len(desc1) < 2:
        raise TooFewDescriptors(f"ratio test needs at least 2 candidates, got {len(desc1)}")
    if not (np.all(np.isfinite(desc0)) and np.all(np.isfinite(desc1))):
        raise VokitError("descriptors must be finite")
    nn, d1, d2 = _kernels.two_nearest(desc0, desc1)
    keep = d1 < d2 / params.ratio_threshold
    if params.mutual_check:
        back, _, _ = _kernels.two_nearest(desc1, desc0)
        keep &= back[nn] == np.arange(len(desc0))
    idx0 = np.flatnonzero(keep)
    idx1 = nn[idx0]
    conf = 1.0 - d1[idx0] / d2[idx0]
    return RatioMatches(idx0, idx1.astype(np.int64), conf)
