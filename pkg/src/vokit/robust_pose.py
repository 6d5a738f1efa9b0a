"""Relative pose from correspondences (LO-RANSAC over 8-point hypotheses)
and the evaluation metrics built on it.

Poses estimated here use the point-transfer convention ``X1 = R @ X0 + t``
with a unit-norm, scale-free ``t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .epipolar import CameraIntrinsics, sampson_error
from .errors import (
    CheiralityTie,
    ConfigError,
    DegenerateConfiguration,
    EmptyErrors,
    EmptyMatchSet,
    InsufficientMatches,
    NoModelFound,
    SchemaError,
)
from .geometry import Pose, rotation_angle_deg

MIN_SAMPLE = 8
_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class MatchSet:
    kpts0: np.ndarray
    kpts1: np.ndarray
    confidence: np.ndarray
    pair_id: str = ""

    def __post_init__(self):
        k0 = np.array(self.kpts0, dtype=np.float64).reshape(-1, 2)
        k1 = np.array(self.kpts1, dtype=np.float64).reshape(-1, 2)
        c = np.array(self.confidence, dtype=np.float64).reshape(-1)
        if not (len(k0) == len(k1) == len(c)):
            raise SchemaError(f"lengths differ: {len(k0)}, {len(k1)}, {len(c)}", self.pair_id)
        if not (np.all(np.isfinite(k0)) and np.all(np.isfinite(k1))):
            raise SchemaError("keypoint coordinates must be finite", self.pair_id)
        if not np.all((c >= 0) & (c <= 1)):
            raise SchemaError("confidences must lie in [0, 1]", self.pair_id, "conf")
        for a in (k0, k1, c):
            a.setflags(write=False)
        object.__setattr__(self, "kpts0", k0)
        object.__setattr__(self, "kpts1", k1)
        object.__setattr__(self, "confidence", c)

    def __len__(self):
        return len(self.confidence)

    def subset(self, idx) -> MatchSet:
        return MatchSet(self.kpts0[idx], self.kpts1[idx], self.confidence[idx], self.pair_id)


@dataclass(frozen=True)
class RansacParams:
    """``inlier_threshold`` is a Sampson distance in normalized coordinates
    (a squared quantity; 1e-4 is about 3 px at a 320 px focal length).

    ``scoring="msac"`` ranks hypotheses by the summed truncated error
    ``min(e, threshold)``; ``"count"`` ranks by inlier count with ties broken
    by the summed inlier error.
    """

    max_iterations: int = 2000
    inlier_threshold: float = 1e-4
    confidence: float = 0.9999
    lo_iterations: int = 3
    seed: int = 0
    scoring: str = "msac"

    def __post_init__(self):
        if self.scoring not in ("msac", "count"):
            raise ConfigError(f"scoring must be 'msac' or 'count', got {self.scoring!r}")
        if not self.inlier_threshold > 0:
            raise ConfigError("inlier_threshold must be positive")
        if not 0 < self.confidence < 1:
            raise ConfigError("confidence must lie in (0, 1)")
        if self.max_iterations < 1 or self.lo_iterations < 0:
            raise ConfigError("iteration counts must be non-negative (max_iterations >= 1)")


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    rotation: np.ndarray
    translation_direction: np.ndarray
    inlier_mask: np.ndarray
    essential: np.ndarray = field(default=None, repr=False)
    iterations: int = 0

    @property
    def num_inliers(self) -> int:
        return int(np.count_nonzero(self.inlier_mask))

    def as_pose(self) -> Pose:
        return Pose(self.rotation, self.translation_direction)


def _hartley(x):
    c = x.mean(axis=0)
    d = np.sqrt(((x - c) ** 2).sum(axis=1)).mean()
    if not d > 1e-12:
        raise DegenerateConfiguration("points coincide")
    s = math.sqrt(2.0) / d
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return T, (x - c) * s


def project_to_essential(m) -> np.ndarray:
    """Nearest essential matrix: singular values forced to (σ, σ, 0), unit norm."""
    U, S, Vt = np.linalg.svd(m)
    sigma = 0.5 * (S[0] + S[1])
    E = U @ np.diag([sigma, sigma, 0.0]) @ Vt
    return E / np.linalg.norm(E)


def estimate_essential_8pt(x0, x1) -> np.ndarray:
    """Hartley-normalized linear 8-point essential matrix.

    ``x0``/``x1`` are normalized image coordinates, at least 8 pairs.
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1, 2)
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1, 2)
    if len(x0) < MIN_SAMPLE or len(x0) != len(x1):
        raise InsufficientMatches(f"need >= {MIN_SAMPLE} correspondences, got {len(x0)}")
    T0, p0 = _hartley(x0)
    T1, p1 = _hartley(x1)
    a, b = p0[:, 0], p0[:, 1]
    c, d = p1[:, 0], p1[:, 1]
    one = np.ones_like(a)
    A = np.column_stack([c * a, c * b, c, d * a, d * b, d, a, b, one])
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    if not s[7] > 0 or s[0] / s[7] > 1e12:
        raise DegenerateConfiguration("8-point design matrix is rank deficient")
    En = Vt[-1].reshape(3, 3)
    return project_to_essential(T1.T @ En @ T0)


def _depths(R, t, x0, x1):
    """Solve ``z0 * R @ x0h + t = z1 * x1h`` in the least-squares sense."""
    h0 = np.column_stack([x0, np.ones(len(x0))])
    h1 = np.column_stack([x1, np.ones(len(x1))])
    a = h0 @ R.T
    b = -h1
    aa = np.einsum("ij,ij->i", a, a)
    ab = np.einsum("ij,ij->i", a, b)
    bb = np.einsum("ij,ij->i", b, b)
    at = a @ t
    bt = b @ t
    det = aa * bb - ab * ab
    ok = det > 1e-12 * aa * bb
    with np.errstate(divide="ignore", invalid="ignore"):
        z0 = np.where(ok, (-at * bb + bt * ab) / det, np.nan)
        z1 = np.where(ok, (-bt * aa + at * ab) / det, np.nan)
    return z0, z1


def cheirality_counts(E, x0, x1):
    """The four (R, t) factorizations of ``E`` and their positive-depth counts."""
    U, _, Vt = np.linalg.svd(np.asarray(E, dtype=np.float64))
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    t = U[:, 2]
    cands = []
    for R in (U @ _W @ Vt, U @ _W.T @ Vt):
        for sign in (1.0, -1.0):
            z0, z1 = _depths(R, sign * t, x0, x1)
            cands.append((R, sign * t, int(np.count_nonzero((z0 > 0) & (z1 > 0)))))
    return cands


def decompose_essential(e, x0, x1):
    """Rotation and unit translation direction of ``e`` chosen by cheirality."""
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1, 2)
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1, 2)
    if len(x0) < 1:
        raise InsufficientMatches("cheirality voting needs at least one correspondence")
    cands = cheirality_counts(e, x0, x1)
    counts = sorted((c[2] for c in cands), reverse=True)
    if counts[0] == 0 or counts[0] == counts[1]:
        raise CheiralityTie(f"no unique cheirality winner (counts {counts})")
    R, t, _ = max(cands, key=lambda c: c[2])
    return R, t / np.linalg.norm(t)


def _adaptive_cap(inlier_ratio, confidence, cap):
    p = inlier_ratio**MIN_SAMPLE
    if p >= 1.0:
        return 1
    if p <= 0.0:
        return cap
    k = math.log(1.0 - confidence) / math.log1p(-p)
    return int(min(cap, max(1, math.ceil(k))))


def lo_ransac_pose(matches: MatchSet, k0: CameraIntrinsics, k1: CameraIntrinsics, params=RansacParams()) -> PoseEstimate:
    """Robust relative pose with local optimisation.

    Each minimal 8-point hypothesis is scored on its Sampson errors (see
    :class:`RansacParams` for the two scoring rules). Whenever a hypothesis becomes
    the best so far, up to ``lo_iterations`` linear refits on its full inlier
    set are tried and kept while they improve the score. The iteration
    budget shrinks adaptively with the inlier ratio.
    """
    n = len(matches)
    if n < MIN_SAMPLE:
        raise InsufficientMatches(f"need >= {MIN_SAMPLE} matches, got {n}")
    x0 = k0.normalize(matches.kpts0)
    x1 = k1.normalize(matches.kpts1)
    thr = params.inlier_threshold
    rng = np.random.default_rng(params.seed)

    msac = params.scoring == "msac"

    def score(E):
        err = sampson_error(E, x0, x1)
        mask = err <= thr
        if msac:
            return (-float(np.minimum(err, thr).sum()),), mask
        return (int(np.count_nonzero(mask)), -float(err[mask].sum())), mask

    best_E, best_mask, best_score = None, None, (-math.inf,)
    cap = params.max_iterations
    it = 0
    while it < cap:
        it += 1
        sample = rng.choice(n, MIN_SAMPLE, replace=False)
        try:
            E = estimate_essential_8pt(x0[sample], x1[sample])
        except DegenerateConfiguration:
            continue
        s, mask = score(E)
        if s <= best_score:
            continue
        best_E, best_mask, best_score = E, mask, s
        for _ in range(params.lo_iterations):
            if np.count_nonzero(best_mask) < MIN_SAMPLE:
                break
            try:
                E_lo = estimate_essential_8pt(x0[best_mask], x1[best_mask])
            except DegenerateConfiguration:
                break
            s_lo, mask_lo = score(E_lo)
            if s_lo <= best_score:
                break
            best_E, best_mask, best_score = E_lo, mask_lo, s_lo
        cap = _adaptive_cap(np.count_nonzero(best_mask) / n, params.confidence, params.max_iterations)
    if best_E is None:
        raise NoModelFound(f"all {it} samples were degenerate")
    R, t = decompose_essential(best_E, x0[best_mask], x1[best_mask])
    return PoseEstimate(R, t, best_mask, best_E, it)


def _vector_angle_deg(a, b):
    return math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), float(np.dot(a, b))))


def pose_error(est: PoseEstimate, gt: Pose) -> float:
    """Max of rotation error and sign-folded translation-direction error, degrees."""
    err_r = rotation_angle_deg(est.rotation, gt.rotation)
    if not np.linalg.norm(gt.translation) > 1e-12:
        return err_r
    err_t = _vector_angle_deg(np.asarray(est.translation_direction), gt.translation)
    err_t = min(err_t, 180.0 - err_t)
    return max(err_r, err_t)


def pose_auc(errors, thresholds=(5.0, 10.0, 20.0)) -> list:
    """Normalized area under the cumulative recall curve up to each threshold.

    The recall curve runs through ``(0, 0)`` and ``(e_k, k / n)`` for the
    sorted errors and is integrated with the trapezoid rule, closed at the
    threshold. Failures should be passed as +inf.
    """
    errors = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if errors.size == 0:
        raise EmptyErrors("no pose errors to summarize")
    if np.any(np.isnan(errors)) or np.any(errors < 0):
        raise EmptyErrors("pose errors must be non-negative (use +inf for failures)")
    recall = np.arange(1, errors.size + 1) / errors.size
    errors = np.concatenate([[0.0], errors])
    recall = np.concatenate([[0.0], recall])
    out = []
    for t in thresholds:
        last = int(np.searchsorted(errors, t))
        r = np.concatenate([recall[:last], [recall[last - 1]]])
        e = np.concatenate([errors[:last], [t]])
        out.append(float(np.trapezoid(r, x=e) / t))
    return out


def match_precision(errors, thresholds=(1e-4, 5e-4, 1e-3, 5e-3, 1e-2)) -> list:
    """Fraction of matches whose epipolar error is at most each threshold."""
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if errors.size == 0:
        raise EmptyErrors("no epipolar errors to summarize")
    return [float(np.count_nonzero(errors <= t) / errors.size) for t in thresholds]


def inlier_percentage(est: PoseEstimate) -> float:
    total = len(est.inlier_mask)
    if total == 0:
        raise EmptyMatchSet("estimate covers no matches")
    return 100.0 * est.num_inliers / total
