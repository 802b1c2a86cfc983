"""SO(3) utilities for the 29-dimensional whole-body action space.

Orientations travel through the stack as 6D vectors (the first two columns
of a rotation matrix, recovered by Gram-Schmidt orthonormalization), which
keeps the representation continuous and regression-friendly.  Rotation
deltas compose by left multiplication, i.e. deltas are expressed in the
world frame, matching the world-frame translational deltas.

All functions are pure and accept either a single item or a leading batch
dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput

# Denominators below this are treated as degenerate rather than normalized.
_NORM_EPS = 1e-8

IDENTITY_SIXD = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def sixd_to_matrix(v: np.ndarray) -> np.ndarray:
    """Orthonormalize a 6D rotation representation into a rotation matrix.

    The first 3-vector is normalized into column 1, the second is
    Gram-Schmidt projected and normalized into column 2, and column 3 is
    their cross product.  Idempotent on inputs that are already the first
    two columns of a rotation matrix.

    Args:
        v: array of shape (..., 6).

    Returns:
        array of shape (..., 3, 3).

    Raises:
        DegenerateInput: if either normalization denominator is <= 1e-8.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 6:
        raise DegenerateInput(f"expected trailing dimension 6, got {v.shape}")
    a1 = v[..., :3]
    a2 = v[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= _NORM_EPS):
        raise DegenerateInput("first 3-vector has near-zero norm")
    b1 = a1 / n1
    proj = np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    r2 = a2 - proj
    n2 = np.linalg.norm(r2, axis=-1, keepdims=True)
    if np.any(n2 <= _NORM_EPS):
        raise DegenerateInput("second 3-vector is parallel to the first")
    b2 = r2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_sixd(R: np.ndarray) -> np.ndarray:
    """Read the first two columns of a rotation matrix into a 6-vector."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def geodesic_distance(R1: np.ndarray, R2: np.ndarray) -> np.ndarray:
    """Rotation angle of R1^T R2, in radians, in [0, pi].

    The arccos argument (trace(R1^T R2) - 1) / 2 is clamped to [-1, 1] so
    round-off near the identity cannot produce NaN.
    """
    R1 = np.asarray(R1, dtype=np.float64)
    R2 = np.asarray(R2, dtype=np.float64)
    trace = np.einsum("...ij,...ij->...", R1, R2)
    cos = np.clip((trace - 1.0) * 0.5, -1.0, 1.0)
    return np.arccos(cos)


@dataclass(frozen=True)
class DeltaPose:
    """World-frame pose increment: a translation plus a 6D orientation delta."""

    translation: np.ndarray  # (3,) meters
    orientation: np.ndarray  # (6,)

    @staticmethod
    def identity() -> "DeltaPose":
        return DeltaPose(np.zeros(3), IDENTITY_SIXD.copy())


@dataclass
class Pose:
    """Position plus orientation matrix of one kinematic unit."""

    position: np.ndarray  # (3,) meters
    orientation: np.ndarray  # (3, 3)

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.orientation.copy())


def apply_delta(pose: Pose, delta: DeltaPose) -> Pose:
    """Compose a world-frame delta onto a pose.

    position' = position + translation
    orientation' = R(delta) @ orientation   (left multiplication)
    """
    R_delta = sixd_to_matrix(delta.orientation)
    return Pose(pose.position + np.asarray(delta.translation, dtype=np.float64),
                R_delta @ pose.orientation)


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues' formula; used by the simulator and expert waypoints."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n <= _NORM_EPS:
        raise DegenerateInput("rotation axis has near-zero norm")
    x, y, z = axis / n
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotation_step_toward(current: np.ndarray, target: np.ndarray, max_angle: float) -> np.ndarray:
    """Rotate `current` toward `target` by at most `max_angle` radians.

    Returns the world-frame delta matrix D with D @ current the new
    orientation; D is the geodesic step, so repeated calls converge to
    `target` without overshoot.
    """
    rel = target @ current.T
    angle = geodesic_distance(np.eye(3), rel)
    if angle <= 1e-9:
        return np.eye(3)
    if angle <= max_angle:
        return rel
    # Axis from the skew-symmetric part of rel.
    axis = np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    n = np.linalg.norm(axis)
    if n <= _NORM_EPS:
        # 180 degree rotation: pick any axis orthogonal to a column.
        col = rel[:, 0]
        axis = np.cross(col, np.array([1.0, 0.0, 0.0]))
        if np.linalg.norm(axis) <= _NORM_EPS:
            axis = np.cross(col, np.array([0.0, 1.0, 0.0]))
        n = np.linalg.norm(axis)
    return rotation_about_axis(axis / n, max_angle)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via Gram-Schmidt of a Gaussian 6-vector."""
    while True:
        v = rng.standard_normal(6)
        try:
            return sixd_to_matrix(v)
        except DegenerateInput:  # pragma: no cover - probability ~0
            continue


def is_rotation_matrix(R: np.ndarray, tol: float = 1e-6) -> bool:
    R = np.asarray(R)
    if R.shape[-2:] != (3, 3):
        return False
    err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max()
    det_err = np.abs(np.linalg.det(R) - 1.0).max()
    return bool(err <= tol and det_err <= tol)
