"""Trajectory accumulation and evaluation: ATE, rpe_score and kitti_score.

Trajectories hold camera-to-world poses; frames are associated by index.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateAlignment, LengthMismatch, TrajectoryTooShort, VokitError
from .geometry import Pose, rotation_angles_deg

KITTI_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)
DESK_LENGTHS = (5.0, 10.0, 15.0, 20.0)
LENGTH_PRESETS = {"kitti": KITTI_LENGTHS, "desk": DESK_LENGTHS}


class AlignmentMode(str, Enum):
    NONE = "none"
    RIGID = "rigid"
    SIM3 = "sim3"


@dataclass(frozen=True, eq=False)
class Trajectory:
    rotations: np.ndarray
    translations: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        R = np.array(self.rotations, dtype=np.float64).reshape(-1, 3, 3)
        t = np.array(self.translations, dtype=np.float64).reshape(-1, 3)
        if len(R) != len(t):
            raise VokitError(f"{len(R)} rotations but {len(t)} translations")
        object.__setattr__(self, "rotations", R)
        object.__setattr__(self, "translations", t)
        if self.timestamps is not None:
            ts = np.array(self.timestamps, dtype=np.float64).reshape(-1)
            if len(ts) != len(t):
                raise VokitError("timestamps must match the number of poses")
            if np.any(np.diff(ts) <= 0):
                raise VokitError("timestamps must be strictly increasing")
            object.__setattr__(self, "timestamps", ts)

    @classmethod
    def from_poses(cls, poses, timestamps=None) -> Trajectory:
        poses = list(poses)
        return cls(
            np.array([p.rotation for p in poses]).reshape(-1, 3, 3),
            np.array([p.translation for p in poses]).reshape(-1, 3),
            timestamps,
        )

    def __len__(self):
        return len(self.translations)

    def __getitem__(self, k) -> Pose:
        return Pose(self.rotations[k], self.translations[k])

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def poses(self) -> list:
        return list(self)

    def transformed(self, T: Pose, scale=1.0) -> Trajectory:
        """Left-multiply every pose by ``T``, scaling positions first."""
        R = np.einsum("ij,njk->nik", T.rotation, self.rotations)
        t = scale * self.translations @ T.rotation.T + T.translation
        return Trajectory(R, t, self.timestamps)

    def path_lengths(self) -> np.ndarray:
        steps = np.linalg.norm(np.diff(self.translations, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])

    def allclose(self, other: Trajectory, atol=1e-9) -> bool:
        return (
            len(self) == len(other)
            and np.allclose(self.rotations, other.rotations, rtol=0, atol=atol)
            and np.allclose(self.translations, other.translations, rtol=0, atol=atol)
        )


def accumulate(rel_poses, start: Pose = None) -> Trajectory:
    """Chain relative poses: ``P[k+1] = P[k] ∘ rel[k]``."""
    rel_poses = list(rel_poses)
    if not rel_poses:
        raise VokitError("need at least one relative pose")
    poses = [Pose.identity() if start is None else start]
    for rel in rel_poses:
        poses.append(poses[-1] @ rel)
    return Trajectory.from_poses(poses)


def relatives(traj: Trajectory) -> list:
    """Consecutive relative poses, the inverse of :func:`accumulate`."""
    Ra, Rb = traj.rotations[:-1], traj.rotations[1:]
    ta, tb = traj.translations[:-1], traj.translations[1:]
    R = np.einsum("nji,njk->nik", Ra, Rb)
    t = np.einsum("nji,nj->ni", Ra, tb - ta)
    return [Pose(r, v) for r, v in zip(R, t)]


def umeyama(src, dst, with_scale=True):
    """Least-squares ``dst ≈ s * R @ src + t`` over matched point rows.

    Returns ``(R, t, s)``. Raises :class:`DegenerateAlignment` when ``src``
    has no spread (scale and rotation undefined).
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = (xs**2).sum() / n
    if not var_s > 1e-24 * max(1.0, float(np.abs(src).max()) ** 2):
        raise DegenerateAlignment("estimated positions have no spread")
    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_s) if with_scale else 1.0
    t = mu_d - s * R @ mu_s
    return R, t, s


def _check_pair(est, gt, min_len=2):
    if len(est) != len(gt):
        raise LengthMismatch(f"estimate has {len(est)} poses, ground truth {len(gt)}")
    if len(gt) < min_len:
        raise VokitError(f"need at least {min_len} poses, got {len(gt)}")


def align(est: Trajectory, gt: Trajectory, mode=AlignmentMode.SIM3) -> Trajectory:
    mode = AlignmentMode(mode)
    _check_pair(est, gt)
    if mode is AlignmentMode.NONE:
        return est
    R, t, s = umeyama(est.translations, gt.translations, with_scale=mode is AlignmentMode.SIM3)
    return est.transformed(Pose(R, t), scale=s)


def ate(est: Trajectory, gt: Trajectory, mode=AlignmentMode.SIM3) -> float:
    """RMSE of position residuals after aligning ``est`` onto ``gt``."""
    aligned = align(est, gt, mode)
    d = aligned.translations - gt.translations
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def _step_errors(est, gt):
    _check_pair(est, gt)
    re, rg = relatives(est), relatives(gt)
    errs = [g.inverse() @ e for e, g in zip(re, rg)]
    dt = np.array([np.linalg.norm(p.translation) for p in errs])
    dr = rotation_angles_deg(np.tile(np.eye(3), (len(errs), 1, 1)), np.array([p.rotation for p in errs]))
    return dt, dr


def rpe_steps(est: Trajectory, gt: Trajectory):
    """Per-step ``(dt_m, dr_deg)`` arrays of consecutive-motion errors."""
    return _step_errors(est, gt)


def rpe_score(est: Trajectory, gt: Trajectory, reduction="mean"):
    """Translational (m) and rotational (deg) error of consecutive motions.

    ``reduction`` is ``"mean"`` or ``"rmse"``.
    """
    dt, dr = _step_errors(est, gt)
    if reduction == "mean":
        return float(dt.mean()), float(dr.mean())
    if reduction == "rmse":
        return float(np.sqrt(np.mean(dt**2))), float(np.sqrt(np.mean(dr**2)))
    raise VokitError(f"unknown reduction {reduction!r}")


def kitti_segments(gt: Trajectory, lengths):
    """``(first, last, length)`` triples for every start frame and length.

    ``last`` is the first frame whose travelled distance from ``first``
    reaches ``length``.
    """
    dist = gt.path_lengths()
    out = []
    for L in lengths:
        last = np.searchsorted(dist, dist + L, side="left")
        first = np.flatnonzero(last < len(dist))
        out.extend((int(f), int(last[f]), float(L)) for f in first)
    return out


def kitti_score(est: Trajectory, gt: Trajectory, lengths=KITTI_LENGTHS):
    """Average drift over fixed-length subsequences.

    Returns ``(dt_pct, dr_deg_per_m)``: translation error as a percentage of
    the subsequence length and rotation error in degrees per metre.
    """
    _check_pair(est, gt)
    segs = kitti_segments(gt, lengths)
    if not segs:
        raise TrajectoryTooShort(f"ground-truth path of {gt.path_lengths()[-1]:.3f} m is shorter than {min(lengths)} m")
    f, l, L = (np.array(v) for v in zip(*segs))
    f = f.astype(int)
    l = l.astype(int)

    def deltas(tr):
        Ra, Rb = tr.rotations[f], tr.rotations[l]
        R = np.einsum("nji,njk->nik", Ra, Rb)
        t = np.einsum("nji,nj->ni", Ra, tr.translations[l] - tr.translations[f])
        return R, t

    Rg, tg = deltas(gt)
    Re, te = deltas(est)
    # error = delta_est⁻¹ ∘ delta_gt
    R_err = np.einsum("nji,njk->nik", Re, Rg)
    t_err = np.einsum("nji,nj->ni", Re, tg - te)
    t_pct = np.linalg.norm(t_err, axis=1) / L * 100.0
    r_deg = rotation_angles_deg(np.tile(np.eye(3), (len(L), 1, 1)), R_err) / L
    return float(t_pct.mean()), float(r_deg.mean())
