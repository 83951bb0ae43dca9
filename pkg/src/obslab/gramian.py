"""Trajectory-level observability: state-transition matrices and the
empirical observability Gramian from linearization along a trajectory.

Where the Lie engine asks whether neighboring states are distinguishable by
*some* admissible input at one instant, the Gramian commits to the one input
history actually flown: G = sum_i Phi(t_i, t_0)^T H_i^T H_i Phi(t_i, t_0) dt
with H the measurement-stack Jacobian along the nominal trajectory.  Its
near-null eigenvectors are the initial-state directions the recorded
measurements cannot see.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .lie import NumericalFailureError
from .scenarios import AmbiguityDirection, Trajectory

DEFICIENCY_TOL = 1e-10


def dynamics_jacobian(x, u, params: model.ModelParams) -> np.ndarray:
    """Jacobian of the full dynamics with respect to the packed state."""
    sys = model.calibration_system(params)
    x = model.pack(x) if isinstance(x, model.CalibState) else np.asarray(x, float)
    u = u.packed() if isinstance(u, model.ControlInput) else np.asarray(u, float)
    return sys.dynamics_jacobian(x, u)


def _dynamics_jacobians(traj: Trajectory, params: model.ModelParams) -> np.ndarray:
    sys = model.calibration_system(params)
    return sys.dynamics_jacobian_batch(traj.xs, traj.us)


def _rk4_step(F0: np.ndarray, F1: np.ndarray, phi: np.ndarray, dt: float) -> np.ndarray:
    # RK4 on Phidot = F(t) Phi with F linearly interpolated across the step
    Fm = 0.5 * (F0 + F1)
    k1 = F0 @ phi
    k2 = Fm @ (phi + 0.5 * dt * k1)
    k3 = Fm @ (phi + 0.5 * dt * k2)
    k4 = F1 @ (phi + dt * k3)
    return phi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def transition_steps(traj: Trajectory, params: model.ModelParams) -> np.ndarray:
    """Per-interval transition matrices Phi(t_{i+1}, t_i), shape (N-1, n, n)."""
    Fs = _dynamics_jacobians(traj, params)
    n = Fs.shape[1]
    steps = np.empty((len(traj) - 1, n, n))
    eye = np.eye(n)
    for i in range(len(traj) - 1):
        dt = traj.times[i + 1] - traj.times[i]
        steps[i] = _rk4_step(Fs[i], Fs[i + 1], eye, dt)
    return steps


def state_transition(traj: Trajectory, i: int, j: int,
                     params: model.ModelParams) -> np.ndarray:
    """Phi(t_j, t_i) mapping perturbations at sample i to sample j (i <= j)."""
    if not 0 <= i <= j < len(traj):
        raise ValueError(f"need 0 <= i <= j < {len(traj)}, got i={i}, j={j}")
    phi = np.eye(model.DIM)
    if i == j:
        return phi
    Fs = _dynamics_jacobians(traj, params)
    for k in range(i, j):
        dt = traj.times[k + 1] - traj.times[k]
        phi = _rk4_step(Fs[k], Fs[k + 1], phi, dt)
    return phi


@dataclass(frozen=True)
class Gramian:
    """Symmetric PSD empirical observability Gramian with its eigensystem."""

    G: np.ndarray
    eigenvalues: np.ndarray      # descending
    eigenvectors: np.ndarray     # columns, matching eigenvalue order
    trajectory_id: str

    def deficient_basis(self, tol: float = DEFICIENCY_TOL) -> np.ndarray:
        """Eigenvectors with eigenvalue <= tol * lambda_max, as columns."""
        lam_max = self.eigenvalues[0]
        mask = self.eigenvalues <= tol * lam_max
        return self.eigenvectors[:, mask]

    def deficiency(self, tol: float = DEFICIENCY_TOL) -> int:
        return int(self.deficient_basis(tol).shape[1])


def empirical_gramian(traj: Trajectory, params: model.ModelParams) -> Gramian:
    """Accumulate G over the trajectory and attach its eigendecomposition."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    sys = model.calibration_system(params)
    Hs = sys.output_jacobian_batch(traj.xs)
    dt = traj.dt if len(traj) > 1 else 1.0
    steps = transition_steps(traj, params) if len(traj) > 1 else None
    G = np.zeros((model.DIM, model.DIM))
    phi = np.eye(model.DIM)
    for i in range(len(traj)):
        if i > 0:
            phi = steps[i - 1] @ phi
        HP = Hs[i] @ phi
        G += HP.T @ HP * dt
    G = 0.5 * (G + G.T)
    try:
        lam, vec = np.linalg.eigh(G)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"Gramian eigendecomposition failed: {exc}") from exc
    order = np.argsort(lam)[::-1]
    return Gramian(G=G, eigenvalues=lam[order], eigenvectors=vec[:, order],
                   trajectory_id=traj.scenario_id)


def gramian_alignment(gram: Gramian, direction, mode: str = "projection",
                      tol: float = DEFICIENCY_TOL) -> float:
    """How much of ``direction`` lies in the Gramian's blind subspace, in [0, 1].

    ``projection`` mode returns the norm of the projection of the (unit)
    direction onto the span of all eigenvectors with eigenvalue below
    tol * lambda_max (0 when that subspace is empty).  ``min_eigvec`` mode
    returns |cos angle| against the single smallest-eigenvalue eigenvector.
    """
    d = direction.d if isinstance(direction, AmbiguityDirection) else np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    if mode == "min_eigvec":
        return float(abs(gram.eigenvectors[:, -1] @ d))
    if mode != "projection":
        raise ValueError(f"unknown alignment mode {mode!r}")
    basis = gram.deficient_basis(tol)
    if basis.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(basis.T @ d))
