"""Quaternion and rotation-matrix algebra with body-rate attitude kinematics.

Conventions used throughout the package:

* Quaternions are stored scalar-last, ``q = [x, y, z, w]``, and composed
  with the Hamilton product.
* ``quat_to_matrix(q)`` returns the direction-cosine matrix C(q) that maps
  GLOBAL-frame vectors into the BODY frame: for an attitude quaternion
  ``q_GI``, ``C(q_GI) @ v_global`` is the same vector expressed in the IMU
  frame.  Under this convention ``C(a ⊗ b) = C(b) @ C(a)``.
* ``quat_derivative(q, omega)`` implements ``q̇ = ½ Ω(ω) q`` with ω the
  body-frame angular rate, which is equivalent to ``Ċ = -[ω]× C``.
"""

from __future__ import annotations

import numpy as np

QUAT_UNIT_TOL = 1e-6


def quat_identity() -> np.ndarray:
    return np.array([0.0, 0.0, 0.0, 1.0])


def quat_normalize(q) -> np.ndarray:
    """Scale q to unit norm. Raises on (near-)zero input."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a ⊗ b (scalar-last). No normalization is applied."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    av, aw = a[:3], a[3]
    bv, bw = b[:3], b[3]
    v = aw * bv + bw * av + np.cross(av, bv)
    return np.concatenate([v, [aw * bw - av @ bv]])


def skew(v) -> np.ndarray:
    """3x3 cross-product matrix: skew(v) @ u == cross(v, u)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def quat_matrix_unnormalized(q) -> np.ndarray:
    """Homogeneous (polynomial) form of C(q); equals quat_to_matrix for unit q.

    For non-unit q this evaluates the same quadratic polynomial, i.e.
    ``|q|^2`` times the rotation of the normalized quaternion.  The model
    layer differentiates through this form so that the packed state stays
    an unconstrained 23-vector.
    """
    q = np.asarray(q, dtype=float)
    v, w = q[:3], q[3]
    r = (w * w - v @ v) * np.eye(3) + 2.0 * np.outer(v, v) + 2.0 * w * skew(v)
    return r.T


def quat_to_matrix(q) -> np.ndarray:
    """Global-to-body DCM of a unit quaternion.

    Raises ValueError when the input norm deviates from 1 by more than
    QUAT_UNIT_TOL.
    """
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if abs(n - 1.0) > QUAT_UNIT_TOL:
        raise ValueError(f"quaternion norm {n:.3e} is not within {QUAT_UNIT_TOL} of 1")
    return quat_matrix_unnormalized(q / n)


def omega_matrix(omega) -> np.ndarray:
    """4x4 quaternion-rate matrix Ω(ω) for scalar-last quaternions."""
    w = np.asarray(omega, dtype=float)
    out = np.zeros((4, 4))
    out[:3, :3] = -skew(w)
    out[:3, 3] = w
    out[3, :3] = -w
    return out


def quat_derivative(q, omega) -> np.ndarray:
    """Attitude kinematics q̇ = ½ Ω(ω) q for body rate ω (rad/s)."""
    q = np.asarray(q, dtype=float)
    return 0.5 * omega_matrix(omega) @ q


def axis_angle_to_quat(axis, angle: float) -> np.ndarray:
    """Unit quaternion of a rotation by `angle` (rad) about `axis`."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * angle
    return np.concatenate([np.sin(half) * axis / n, [np.cos(half)]])


def quat_integrate(q, omega, dt: float, renorm_tol: float = 1e-12) -> np.ndarray:
    """Propagate q under constant body rate ω for dt seconds (closed form).

    Exact for piecewise-constant ω; renormalizes only when drift exceeds
    renorm_tol so the norm constraint stays honest.
    """
    q = np.asarray(q, dtype=float)
    w = np.asarray(omega, dtype=float)
    angle = np.linalg.norm(w) * dt
    if angle < 1e-300:
        return q.copy()
    out = quat_multiply(q, axis_angle_to_quat(w, angle))
    n = np.linalg.norm(out)
    if abs(n - 1.0) > renorm_tol:
        out = out / n
    return out
