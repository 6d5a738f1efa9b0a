"""Two-view epipolar geometry and the confidence-weighted epipolar hinge loss.

Relative poses handed to this module follow the *point transfer*
convention ``X1 = R @ X0 + t``: they carry camera-0 coordinates into
camera-1 coordinates. For two camera-to-world poses ``P0`` and ``P1`` that is
``relative_pose(P1, P0)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .errors import AllZeroConfidence, ConfigError, DegenerateTranslation, VokitError
from .geometry import Pose, skew


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ConfigError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [[1.0 / self.fx, 0.0, -self.cx / self.fx], [0.0, 1.0 / self.fy, -self.cy / self.fy], [0.0, 0.0, 1.0]]
        )

    def normalize(self, pts) -> np.ndarray:
        """Pixel coordinates to normalized (intrinsics-free) image coordinates."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return np.column_stack([(pts[:, 0] - self.cx) / self.fx, (pts[:, 1] - self.cy) / self.fy])

    def denormalize(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        return np.column_stack([xy[:, 0] * self.fx + self.cx, xy[:, 1] * self.fy + self.cy])

    def project(self, X) -> np.ndarray:
        """Pinhole projection of camera-frame points; no visibility test."""
        X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
        return np.column_stack([self.fx * X[:, 0] / X[:, 2] + self.cx, self.fy * X[:, 1] / X[:, 2] + self.cy])

    def contains(self, pts) -> np.ndarray:
        """Pixel centres sit on integer coordinates; the image spans [-0.5, size - 0.5)."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        with np.errstate(invalid="ignore"):
            return (
                (pts[:, 0] >= -0.5)
                & (pts[:, 0] < self.width - 0.5)
                & (pts[:, 1] >= -0.5)
                & (pts[:, 1] < self.height - 0.5)
            )

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d) -> CameraIntrinsics:
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]))


def _unit_frobenius(m):
    return m / np.linalg.norm(m)


def essential_from_pose(t_rel: Pose) -> np.ndarray:
    """``E = [t]x R`` with unit Frobenius norm, so that ``x1ᵀ E x0 = 0``."""
    t = t_rel.translation
    if not np.linalg.norm(t) > 1e-12:
        raise DegenerateTranslation("pure rotation has no essential matrix")
    return _unit_frobenius(skew(t) @ t_rel.rotation)


def fundamental_from_essential(e, k0: CameraIntrinsics, k1: CameraIntrinsics) -> np.ndarray:
    """``F = K1⁻ᵀ E K0⁻¹`` with unit Frobenius norm."""
    return _unit_frobenius(k1.K_inv.T @ np.asarray(e, dtype=np.float64) @ k0.K_inv)


def sampson_error(m, x0, x1) -> np.ndarray:
    """Per-match Sampson distance of ``(x0, x1)`` under ``m`` (E or F).

    The value is the first-order approximation of the *squared* distance to
    the epipolar constraint. An exactly zero residual gives 0; otherwise a
    vanishing gradient gives +inf.
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1, 2)
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1, 2)
    if len(x0) != len(x1):
        raise VokitError(f"point lists differ in length: {len(x0)} vs {len(x1)}")
    return _kernels.sampson(np.asarray(m, dtype=np.float64), x0, x1)


def epipolar_errors(matches, t_rel: Pose, k0: CameraIntrinsics, k1: CameraIntrinsics, pixel_space=False):
    """Sampson errors of a match set against a known relative pose.

    By default errors are in normalized coordinates; ``pixel_space=True``
    evaluates them with the fundamental matrix on raw pixels instead.
    """
    E = essential_from_pose(t_rel)
    if pixel_space:
        return sampson_error(fundamental_from_essential(E, k0, k1), matches.kpts0, matches.kpts1)
    return sampson_error(E, k0.normalize(matches.kpts0), k1.normalize(matches.kpts1))


@dataclass
class HingeLossInput:
    """Per-image epipolar errors and match confidences for one batch.

    Confidences are normally in [0, 1]; any finite non-negative value is
    accepted since the weighting only uses ratios of ``log(1 + C)``.

    ``normalize`` selects where the max in the confidence weighting is taken:
    ``"image"`` (per image) or ``"batch"`` (over every match in the batch).
    """

    errors: Sequence
    confidences: Sequence
    base_loss: float
    alpha: float = 0.2
    normalize: str = "image"

    def __post_init__(self):
        self.errors = [np.asarray(e, dtype=np.float64).ravel() for e in self.errors]
        self.confidences = [np.asarray(c, dtype=np.float64).ravel() for c in self.confidences]
        if len(self.errors) != len(self.confidences):
            raise VokitError("errors and confidences must cover the same images")
        for i, (e, c) in enumerate(zip(self.errors, self.confidences)):
            if len(e) != len(c):
                raise VokitError(f"image {i}: {len(e)} errors but {len(c)} confidences")
            if np.any(c < 0) or not np.all(np.isfinite(c)):
                raise VokitError(f"image {i}: confidences must be finite and non-negative")
            if np.any(e < 0) or np.any(np.isnan(e)):
                raise VokitError(f"image {i}: epipolar errors must be non-negative")
        if not self.alpha > 0:
            raise VokitError(f"alpha must be positive, got {self.alpha}")
        if self.normalize not in ("image", "batch"):
            raise VokitError(f"normalize must be 'image' or 'batch', got {self.normalize!r}")

    @property
    def batch_size(self) -> int:
        return len(self.errors)


class HingeLoss(NamedTuple):
    total: float
    per_image: np.ndarray


def hinge_loss(inp: HingeLossInput) -> HingeLoss:
    """Base matcher loss plus a clipped, confidence-weighted epipolar term.

    For image ``i`` the weights are ``log(1 + C_ij) / max_j log(1 + C_ij)``,
    the weighted errors are averaged over that image's matches, and the mean
    is capped at ``alpha * base_loss``. The total adds every image's capped
    term to ``base_loss``.
    """
    logc = [np.log1p(c) for c in inp.confidences]
    if inp.normalize == "batch":
        nonempty = [lc.max() for lc in logc if lc.size]
        batch_max = max(nonempty) if nonempty else 0.0
    cap = inp.alpha * inp.base_loss
    per_image = np.zeros(inp.batch_size)
    for i, (e, lc) in enumerate(zip(inp.errors, logc)):
        if e.size == 0:
            continue
        denom = batch_max if inp.normalize == "batch" else lc.max()
        if denom == 0.0:
            if np.any(e > 0):
                warnings.warn(
                    AllZeroConfidence(f"image {i}: every confidence is zero; hinge term set to 0"), stacklevel=2
                )
            continue
        w = lc / denom
        with np.errstate(invalid="ignore"):
            terms = np.where(w > 0, e * w, 0.0)
        weighted = math.fsum(terms) / e.size
        per_image[i] = min(weighted, cap)
    total = inp.base_loss + math.fsum(per_image)
    return HingeLoss(total, per_image)
