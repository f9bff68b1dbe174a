"""Geometry and problem-definition types shared by all pose estimators.

Coordinates are planar and metric. Anchors live in a fixed global frame,
tags in the body frame of the rigid object being localized, and a pose
maps body coordinates into the global frame via ``R(theta) @ s + t``.
Every type here is immutable after construction and every operation is a
pure function, so instances can be shared freely across threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# Relative singular-value threshold below which a point set counts as
# collinear. Scale-free: compared against the largest singular value.
COLLINEARITY_RTOL = 1e-9


def wrap_angle(theta: float) -> float:
    """Map an angle to the canonical interval [0, 2*pi)."""
    wrapped = math.fmod(float(theta), TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    if wrapped >= TWO_PI:  # rounding of tiny negatives
        wrapped = 0.0
    return wrapped


def rotation_matrix(theta: float) -> np.ndarray:
    """Planar rotation matrix ``[[cos, -sin], [sin, cos]]``.

    Raises ValueError for a non-finite angle.
    """
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"rotation angle must be finite, got {theta!r}")
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_angle(rot: np.ndarray) -> float:
    """Angle in [0, 2*pi) recovered from a rotation matrix."""
    rot = np.asarray(rot, dtype=float)
    return wrap_angle(math.atan2(rot[1, 0], rot[0, 0]))


def _frozen_array(values, shape: tuple[int, ...] | None = None) -> np.ndarray:
    out = np.array(values, dtype=float)
    if shape is not None:
        out = out.reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Pose2:
    """Planar pose: rotation angle in [0, 2*pi) plus a translation in meters.

    The constructor normalizes the angle and rejects non-finite entries.
    """

    theta: float
    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(2).copy()
        theta = float(self.theta)
        if not (math.isfinite(theta) and np.all(np.isfinite(t))):
            raise ValueError("pose entries must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "theta", wrap_angle(theta))
        object.__setattr__(self, "t", t)

    @property
    def rotation(self) -> np.ndarray:
        """2x2 rotation matrix of this pose."""
        return rotation_matrix(self.theta)

    @classmethod
    def from_rotation(cls, rot: np.ndarray, t) -> "Pose2":
        """Build a pose from a rotation matrix and translation."""
        return cls(rotation_angle(rot), t)

    def transform(self, points) -> np.ndarray:
        """Map body-frame points (K, 2) into the global frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.t


# An unconstrained 2x2 rotation estimate, prior to projection onto SO(2),
# is represented by a plain (2, 2) float array.
RotMat2 = np.ndarray


@dataclass(frozen=True)
class Deployment:
    """Anchor/tag geometry plus per-pair noise levels and height offsets.

    ``anchors`` is (M, 2) in the global frame, ``tags`` is (N, 2) in the
    body frame. ``sigma`` and ``dh`` broadcast to (N, M): scalars apply to
    every pair, an (M,) vector applies per anchor.
    """

    anchors: np.ndarray
    tags: np.ndarray
    sigma: np.ndarray = 1.0
    dh: np.ndarray = 0.0

    def __post_init__(self):
        anchors = np.asarray(self.anchors, dtype=float)
        tags = np.asarray(self.tags, dtype=float)
        if anchors.ndim != 2 or anchors.shape[1] != 2 or anchors.shape[0] < 1:
            raise ValueError("anchors must be a non-empty (M, 2) array")
        if tags.ndim != 2 or tags.shape[1] != 2 or tags.shape[0] < 1:
            raise ValueError("tags must be a non-empty (N, 2) array")
        if not (np.all(np.isfinite(anchors)) and np.all(np.isfinite(tags))):
            raise ValueError("anchor and tag coordinates must be finite")
        shape = (tags.shape[0], anchors.shape[0])
        try:
            sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), shape).copy()
            dh = np.broadcast_to(np.asarray(self.dh, dtype=float), shape).copy()
        except ValueError as exc:
            raise ValueError(f"sigma/dh must broadcast to {shape}") from exc
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0.0):
            raise ValueError("sigma must be strictly positive and finite")
        if not np.all(np.isfinite(dh)):
            raise ValueError("dh must be finite")
        for name, arr in (("anchors", anchors), ("tags", tags), ("sigma", sigma), ("dh", dh)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_anchors(self) -> int:
        return self.anchors.shape[0]

    @property
    def num_tags(self) -> int:
        return self.tags.shape[0]


@dataclass(frozen=True)
class RangeBatch:
    """One estimation problem's measurements, indexed (tag, anchor, repetition).

    Repeated ranging is stored as the third index rather than by duplicating
    anchor rows; estimators expand on the fly. ``T`` repetitions of ``M``
    anchors behave like ``M_T = M * T`` anchors, so ``n = N * M * T``.
    Measurements must be finite; sign is not checked here because synthetic
    sweeps keep raw Gaussian draws, while real logs reject negative ranges
    at ingestion.
    """

    deployment: Deployment
    repeat_t: int
    d: np.ndarray

    def __post_init__(self):
        t = int(self.repeat_t)
        if t < 1:
            raise ValueError("repeat_t must be >= 1")
        expected = (self.deployment.num_tags, self.deployment.num_anchors, t)
        d = np.asarray(self.d, dtype=float)
        if d.shape != expected:
            raise ValueError(f"d must have shape {expected}, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("measurements must be finite")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "repeat_t", t)
        object.__setattr__(self, "d", d)

    @property
    def m_t(self) -> int:
        """Effective anchor count M * T."""
        return self.deployment.num_anchors * self.repeat_t

    @property
    def n(self) -> int:
        """Total measurement count N * M * T."""
        return self.deployment.num_tags * self.m_t

    def expanded_anchors(self) -> np.ndarray:
        """Anchor coordinates repeated per ranging round, shape (M_T, 2)."""
        return np.tile(self.deployment.anchors, (self.repeat_t, 1))

    def ranges_by_tag(self) -> np.ndarray:
        """Measurements as (N, M_T); column ``rep * M + m`` holds pair (m, rep)."""
        n_tags = self.deployment.num_tags
        return self.d.transpose(0, 2, 1).reshape(n_tags, self.m_t)

    def sigma_by_tag(self) -> np.ndarray:
        """Noise deviations aligned with :meth:`ranges_by_tag`."""
        return np.tile(self.deployment.sigma, (1, self.repeat_t))

    def dh_by_tag(self) -> np.ndarray:
        """Height differences aligned with :meth:`ranges_by_tag`."""
        return np.tile(self.deployment.dh, (1, self.repeat_t))

    def flat_ranges(self) -> np.ndarray:
        """Measurements flattened tag-major, length n."""
        return self.ranges_by_tag().reshape(self.n)


class Method(str, enum.Enum):
    """Estimator identifiers used in reports, sweeps, and the CLI."""

    ULS = "uls"
    GN_ULS = "gn-uls"
    DAC = "dac"
    GN_DAC = "gn-dac"


@dataclass
class EstimateReport:
    """Pose estimate plus method tag, diagnostics, and optional covariance.

    ``covariance`` is the 6x6 constrained lower bound evaluated at the
    estimate, usable as an estimation-covariance approximation.
    ``timings_us`` holds per-stage wall times in microseconds.
    """

    pose: Pose2
    method: Method
    residual_cost: float
    covariance: np.ndarray | None = None
    timings_us: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ObservabilityVerdict:
    """Outcome of the deployment observability check.

    ``anchors_ok`` requires at least three non-collinear anchors;
    ``tags_ok`` requires at least two tags not collinear with the
    body-frame origin. ``reason`` names the failed condition.
    """

    observable: bool
    anchors_ok: bool
    tags_ok: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.observable


def _rank_two(points: np.ndarray, center: bool) -> bool:
    """True when the rows span two dimensions.

    With ``center`` the test is about collinearity of the point set; without
    it, about collinearity with the origin.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 2:
        return False
    if center:
        pts = pts - pts.mean(axis=0)
    svals = np.linalg.svd(pts, compute_uv=False)
    return bool(svals[-1] > COLLINEARITY_RTOL * svals[0])


def check_observability(deployment: Deployment) -> ObservabilityVerdict:
    """Decide whether the deployment makes the planar pose identifiable.

    Failure is an informative verdict, never an exception. The verdict is
    invariant to rigid motions of the global frame.
    """
    anchors_ok = deployment.num_anchors >= 3 and _rank_two(deployment.anchors, center=True)
    tags_ok = deployment.num_tags >= 2 and _rank_two(deployment.tags, center=False)
    reasons = []
    if not anchors_ok:
        reasons.append("need at least 3 non-collinear anchors")
    if not tags_ok:
        reasons.append("need at least 2 tags not collinear with the body origin")
    return ObservabilityVerdict(
        observable=anchors_ok and tags_ok,
        anchors_ok=anchors_ok,
        tags_ok=tags_ok,
        reason="; ".join(reasons),
    )


def predicted_ranges(deployment: Deployment, pose: Pose2) -> np.ndarray:
    """Noise-free ranges (N, M): sqrt(|a_m - R s_i - t|^2 + dh_im^2)."""
    tag_pos = pose.transform(deployment.tags)  # (N, 2)
    diff = deployment.anchors[np.newaxis, :, :] - tag_pos[:, np.newaxis, :]
    return np.sqrt(np.einsum("nmk,nmk->nm", diff, diff) + deployment.dh**2)


def ml_cost(batch: RangeBatch, pose: Pose2) -> float:
    """Weighted squared range-residual objective at a pose.

    Sum over all measurements of ``(d - predicted)^2 / sigma^2``. Zero
    exactly when the batch is noiseless and the pose is the truth.
    """
    pred = predicted_ranges(batch.deployment, pose)
    residual = batch.d - pred[:, :, np.newaxis]
    weights = 1.0 / batch.deployment.sigma**2
    return float(np.sum(residual**2 * weights[:, :, np.newaxis]))


def chordal_rmse(estimates: Sequence[np.ndarray], truth: np.ndarray) -> float:
    """Root mean square Frobenius distance between rotation estimates and truth."""
    if len(estimates) == 0:
        raise ValueError("need at least one rotation estimate")
    truth = np.asarray(truth, dtype=float)
    total = 0.0
    for est in estimates:
        diff = np.asarray(est, dtype=float) - truth
        total += float(np.sum(diff * diff))
    return math.sqrt(total / len(estimates))
