"""Fisher information and the SO(2)-constrained lower bound.

The parameter vector is ``Theta = (vec(R), t)`` in R^6. For independent
Gaussian range noise the information matrix is a sum of rank-one terms built
from the anchor-to-tag direction vectors; imposing the rotation constraint
restricts the bound to the orthonormal null space of the constraint
Jacobian, giving ``CRLB = U (U^T F U)^{-1} U^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Deployment, Pose2
from .errors import NearSingularityError, UnobservableAtPoseError

# Floor on |a - s|^2 + dh^2 in the information denominator (square meters).
COINCIDENCE_FLOOR_M2 = 1e-9

_IDENTITY_CHECK_TOL = 1e-10


@dataclass(frozen=True)
class FisherInfo:
    """6x6 information matrix for (vec(R), t), with the pose it was built at."""

    matrix: np.ndarray
    evaluated_at: Pose2


@dataclass(frozen=True)
class CrlbResult:
    """Constrained lower bound and its trace statistics.

    ``sqrt_trace`` is over the full 6x6 matrix; the block traces split the
    rotation (first four) and translation (last two) coordinates.
    """

    crlb: np.ndarray
    sqrt_trace: float
    rotation_block_trace: float
    translation_block_trace: float


def pose_parameter_vector(pose: Pose2) -> np.ndarray:
    """(vec(R), t) as a 6-vector, column-major rotation stacking."""
    return np.concatenate([pose.rotation.reshape(4, order="F"), pose.t])


def fisher_info(deployment: Deployment, repeat_t: int, pose: Pose2) -> FisherInfo:
    """Information matrix for ``repeat_t`` ranging rounds at a given pose.

    Each (tag, anchor) pair contributes
    ``(sbar_i (x) I2) q q^T (sbar_i (x) I2)^T / (sigma^2 (|q|^2 + dh^2))``
    with ``q = a_m - (R s_i + t)`` and ``sbar_i = (s_i, 1)``; repetition
    scales the sum linearly.
    """
    if repeat_t < 1:
        raise ValueError("repeat_t must be >= 1")
    tag_pos = pose.transform(deployment.tags)
    q = deployment.anchors[np.newaxis, :, :] - tag_pos[:, np.newaxis, :]  # (N, M, 2)
    sq_dist = np.einsum("nmk,nmk->nm", q, q) + deployment.dh**2
    if np.any(sq_dist < COINCIDENCE_FLOOR_M2):
        i, m = np.argwhere(sq_dist < COINCIDENCE_FLOOR_M2)[0]
        raise NearSingularityError(
            f"anchor {m} coincides with transformed tag {i}",
            tag_index=int(i),
            anchor_index=int(m),
        )
    sbar = np.column_stack([deployment.tags, np.ones(deployment.num_tags)])  # (N, 3)
    # b[i, m] = sbar_i (x) q[i, m], flattened to 6 components.
    b = sbar[:, :, np.newaxis, np.newaxis] * q[:, np.newaxis, :, :]  # (N, 3, M, 2)
    b = b.transpose(0, 2, 1, 3).reshape(deployment.num_tags, deployment.num_anchors, 6)
    inv_denom = 1.0 / (deployment.sigma**2 * sq_dist)
    f = np.einsum("nma,nmb,nm->ab", b, b, inv_denom) * float(repeat_t)
    f = 0.5 * (f + f.T)
    return FisherInfo(matrix=f, evaluated_at=pose)


def constraint_jacobian(rot: np.ndarray) -> np.ndarray:
    """Jacobian of the three local SO(2) constraints with respect to Theta.

    The constraints fix the column norms and orthogonality of
    ``R = [y1 y2]``; the determinant constraint is locally redundant.
    """
    y1, y2 = rot[:, 0], rot[:, 1]
    jac = np.zeros((3, 6))
    jac[0, 0:2] = 2.0 * y1
    jac[1, 0:2] = y2
    jac[1, 2:4] = y1
    jac[2, 2:4] = 2.0 * y2
    return jac


def nullspace_basis(rot: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the constraint-Jacobian null space, shape 6x3.

    First column ``(y2, -y1, 0, 0) / sqrt(2)``, remaining columns the
    identity on the translation coordinates.
    """
    y1, y2 = rot[:, 0], rot[:, 1]
    u = np.zeros((6, 3))
    u[0:2, 0] = y2 / math.sqrt(2.0)
    u[2:4, 0] = -y1 / math.sqrt(2.0)
    u[4:6, 1:3] = np.eye(2)
    return u


def constrained_crlb(fi: FisherInfo, pose: Pose2) -> CrlbResult:
    """Lower bound on unbiased (vec(R), t) covariance under the rotation constraint."""
    rot = pose.rotation
    jac = constraint_jacobian(rot)
    u = nullspace_basis(rot)
    if np.max(np.abs(jac @ u)) > _IDENTITY_CHECK_TOL:
        raise RuntimeError("null-space basis does not annihilate the constraint Jacobian")
    if np.max(np.abs(u.T @ u - np.eye(3))) > _IDENTITY_CHECK_TOL:
        raise RuntimeError("null-space basis is not orthonormal")
    reduced = u.T @ fi.matrix @ u
    svals = np.linalg.svd(reduced, compute_uv=False)
    if svals[-1] <= svals[0] * 1e-12 or svals[0] == 0.0:
        raise UnobservableAtPoseError(
            "constrained information matrix is singular at this pose"
        )
    crlb = u @ np.linalg.solve(reduced, u.T)
    crlb = 0.5 * (crlb + crlb.T)
    return CrlbResult(
        crlb=crlb,
        sqrt_trace=float(np.sqrt(np.trace(crlb))),
        rotation_block_trace=float(np.trace(crlb[:4, :4])),
        translation_block_trace=float(np.trace(crlb[4:, 4:])),
    )
