"""Closed-form first stage: projected squared-range linear system.

Squaring the range model and subtracting the known per-pair variance gives,
per tag, a linear relation in ``(vec(R), t)`` plus a quadratic nuisance term
that is constant across anchors. Projecting onto the orthogonal complement
of the all-ones vector removes the nuisance, leaving an n x 4 least-squares
problem in ``(y, t)``, with ``y = (sin theta, cos theta)`` entering through
``vec(R) = GAMMA @ y``. The solution is consistent but unconstrained, so the
rotation part is projected onto SO(2) afterwards.

The correlated covariance of the projected errors is deliberately discarded;
no whitened variant is provided.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import EstimateReport, Method, Pose2, RangeBatch, ml_cost, rotation_angle
from .errors import (
    DegenerateProjectionError,
    SingularSystemError,
    UnderdeterminedDeploymentError,
)

# vec(R(theta)) = GAMMA @ [sin(theta), cos(theta)], column-major stacking.
GAMMA = np.array(
    [
        [0.0, 1.0],
        [1.0, 0.0],
        [-1.0, 0.0],
        [0.0, 1.0],
    ]
)

MIN_EFFECTIVE_ANCHORS = 3


def centering_projector(m: int) -> np.ndarray:
    """Projector onto the complement of the all-ones vector: I - 11^T / m."""
    if m < 1:
        raise ValueError("projector size must be positive")
    return np.eye(m) - np.full((m, m), 1.0 / m)


@dataclass(frozen=True)
class LinearSystem:
    """Stacked design matrix and projected, debiased squared ranges.

    ``h`` is n x 4 with columns ordered (y1, y2, t1, t2); ``dbar`` is the
    matching right-hand side. Under an observable deployment ``h`` has full
    column rank.
    """

    h: np.ndarray
    dbar: np.ndarray
    num_tags: int
    m_t: int

    @property
    def n(self) -> int:
        return self.h.shape[0]


def build_linear_system(batch: RangeBatch) -> LinearSystem:
    """Assemble the projected squared-range system for a batch.

    Per tag, the right-hand side entries are ``d^2 - |a|^2 - sigma^2 - dh^2``
    (the height term makes nonzero height differences reduce to the planar
    case). Centering each tag's block and the anchor coordinates applies the
    all-ones projector without materializing it.
    """
    m_t = batch.m_t
    if m_t < MIN_EFFECTIVE_ANCHORS:
        raise UnderdeterminedDeploymentError(
            f"need at least {MIN_EFFECTIVE_ANCHORS} effective anchors, got {m_t}"
        )
    dep = batch.deployment
    anchors = batch.expanded_anchors()  # (M_T, 2)
    rhs = batch.ranges_by_tag() ** 2
    rhs -= np.sum(anchors**2, axis=1)[np.newaxis, :]
    rhs -= np.tile(dep.sigma**2 + dep.dh**2, (1, batch.repeat_t))
    rhs -= rhs.mean(axis=1, keepdims=True)

    # H = [-2 (S^T (x) Abar^T) GAMMA, -2 (1_N (x) Abar^T)] written out per
    # column: with centered anchor coordinates (ax, ay) and tag (s1, s2) the
    # y columns are -2 (s1 ay - s2 ax) and -2 (s1 ax + s2 ay).
    centered = anchors - anchors.mean(axis=0)
    ax, ay = centered[:, 0], centered[:, 1]
    s1 = dep.tags[:, 0][:, np.newaxis]
    s2 = dep.tags[:, 1][:, np.newaxis]
    n = batch.n
    h = np.empty((n, 4))
    h[:, 0] = (-2.0 * (s1 * ay - s2 * ax)).reshape(n)
    h[:, 1] = (-2.0 * (s1 * ax + s2 * ay)).reshape(n)
    h[:, 2] = np.tile(-2.0 * ax, dep.num_tags)
    h[:, 3] = np.tile(-2.0 * ay, dep.num_tags)
    return LinearSystem(h=h, dbar=rhs.reshape(-1), num_tags=dep.num_tags, m_t=m_t)


def solve_uls(system: LinearSystem) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares solve of the linear stage.

    Returns ``(y, t)``; ``y`` is not unit length in general. Uses an
    orthogonal factorization rather than forming the normal equations.
    Raises SingularSystemError carrying the numeric rank when the design
    matrix is rank deficient.
    """
    solution, _, rank, _ = np.linalg.lstsq(system.h, system.dbar, rcond=None)
    if rank < 4:
        raise SingularSystemError(
            f"design matrix rank {rank} < 4; deployment does not determine the pose",
            rank=int(rank),
        )
    return solution[:2], solution[2:]


def project_so2(x: np.ndarray) -> float:
    """Angle of the rotation matrix closest to ``x`` in Frobenius norm.

    Computed from the SVD ``x = U S V^T`` as ``U diag(1, det(UV^T)) V^T``.
    When both singular values tie with a reflection involved, the result
    follows the factorization's deterministic output.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("projection input must be finite")
    u, svals, vt = np.linalg.svd(x)
    if svals[0] < 1e-300:
        raise DegenerateProjectionError("cannot project a (numerically) zero matrix")
    sign = 1.0 if np.linalg.det(u @ vt) > 0.0 else -1.0
    rot = (u * np.array([1.0, sign])) @ vt
    return rotation_angle(rot)


def rotation_from_y(y: np.ndarray) -> np.ndarray:
    """Unconstrained 2x2 rotation estimate from the linear-stage ``y``."""
    return (GAMMA @ np.asarray(y, dtype=float)).reshape(2, 2, order="F")


def estimate_uls(batch: RangeBatch, with_covariance: bool = False) -> EstimateReport:
    """Closed-form pose estimate: linear solve plus SO(2) projection."""
    start = time.perf_counter()
    y, t = solve_uls(build_linear_system(batch))
    theta = project_so2(rotation_from_y(y))
    pose = Pose2(theta, t)
    elapsed_us = (time.perf_counter() - start) * 1e6
    report = EstimateReport(
        pose=pose,
        method=Method.ULS,
        residual_cost=ml_cost(batch, pose),
        timings_us={"linstage_us": elapsed_us},
    )
    if with_covariance:
        from .crlb import constrained_crlb, fisher_info

        fi = fisher_info(batch.deployment, batch.repeat_t, pose)
        report.covariance = constrained_crlb(fi, pose).crlb
    return report
