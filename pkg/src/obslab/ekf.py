"""Error-state Kalman filter over the calibration model.

The filter runs on a 21-dimensional error state (multiplicative small-angle
errors for both quaternions, additive errors elsewhere) while the analysis
modules stay in the 23-dimensional packed space.  Covariance propagation and
measurement Jacobians are linearized along the true trajectory, which makes
the covariance history independent of the particular noise draw and gives
exact run-to-run reproducibility for a fixed seed; synthetic noisy bearings
still drive an error-state estimate so the update path is exercised.

The behavioral question this module answers: along which state directions
does the covariance contract, and along which does it refuse to.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model
from .gramian import _rk4_step
from .scenarios import Trajectory

ERROR_DIM = 21

E_ATT = slice(0, 3)
E_BG = slice(3, 6)
E_V = slice(6, 9)
E_BA = slice(9, 12)
E_P = slice(12, 15)
E_EXTROT = slice(15, 18)
E_PIC = slice(18, 21)

ERROR_BLOCKS = (("att", E_ATT), ("bg", E_BG), ("v", E_V), ("ba", E_BA),
                ("p", E_P), ("extrot", E_EXTROT), ("pic", E_PIC))


class EKFDivergenceError(RuntimeError):
    def __init__(self, time: float, detail: str):
        super().__init__(f"filter divergence at t={time:.3f}s: {detail}")
        self.time = float(time)


@dataclass(frozen=True)
class EKFConfig:
    meas_noise_std: float = 1e-3      # bearing components
    gyro_noise: float = 1e-4          # white-noise density, rad/s/sqrt(Hz)
    accel_noise: float = 1e-3         # m/s^2/sqrt(Hz)
    gyro_bias_rw: float = 1e-6        # bias random walk densities
    accel_bias_rw: float = 1e-5
    init_att_std: float = 0.05        # rad
    init_bg_std: float = 0.01
    init_v_std: float = 0.1
    init_ba_std: float = 0.01
    init_p_std: float = 0.1
    init_extrot_std: float = 0.1      # rad
    init_pic_std: float = 0.3         # m
    seed: int = 0

    def __post_init__(self):
        for name in ("meas_noise_std", "gyro_noise", "accel_noise",
                     "gyro_bias_rw", "accel_bias_rw", "init_att_std",
                     "init_bg_std", "init_v_std", "init_ba_std", "init_p_std",
                     "init_extrot_std", "init_pic_std"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def initial_covariance(self) -> np.ndarray:
        stds = np.concatenate([
            self.init_att_std * np.ones(3), self.init_bg_std * np.ones(3),
            self.init_v_std * np.ones(3), self.init_ba_std * np.ones(3),
            self.init_p_std * np.ones(3), self.init_extrot_std * np.ones(3),
            self.init_pic_std * np.ones(3)])
        return np.diag(stds ** 2)


@dataclass(frozen=True)
class CovarianceHistory:
    times: np.ndarray
    covariances: np.ndarray                  # (N, 21, 21)
    direction_traces: dict = field(default_factory=dict)  # name -> (N,) sigma
    scenario_id: str = "custom"

    def block_stds(self) -> np.ndarray:
        """(N, 21) marginal standard deviations."""
        return np.sqrt(np.einsum("nii->ni", self.covariances))

    def block_std(self, name: str) -> np.ndarray:
        """(N, 3) marginal stds of one named error block."""
        sl = dict(ERROR_BLOCKS)[name]
        return self.block_stds()[:, sl]

    def shrinkage(self, name: str) -> float:
        """1 - final/initial RMS marginal std of one block."""
        stds = self.block_std(name)
        return float(1.0 - np.linalg.norm(stds[-1]) / np.linalg.norm(stds[0]))

    def direction_shrinkage(self, key: str) -> float:
        tr = self.direction_traces[key]
        return float(1.0 - tr[-1] / tr[0])


def _n_matrix(q: np.ndarray) -> np.ndarray:
    # columns orthonormal, N^T q = 0; q_true ~ q + 0.5 N(q) dtheta
    v, w = q[:3], q[3]
    out = np.zeros((4, 3))
    out[:3, :] = w * np.eye(3) - np.array([
        [0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    out[3, :] = -v
    return out


def error_lift(x: np.ndarray) -> np.ndarray:
    """23x21 map from error-state coordinates to packed-state perturbations."""
    J = np.zeros((model.DIM, ERROR_DIM))
    J[model.Q_GI, E_ATT] = 0.5 * _n_matrix(x[model.Q_GI])
    J[model.B_G, E_BG] = np.eye(3)
    J[model.V, E_V] = np.eye(3)
    J[model.B_A, E_BA] = np.eye(3)
    J[model.P, E_P] = np.eye(3)
    J[model.Q_IC, E_EXTROT] = 0.5 * _n_matrix(x[model.Q_IC])
    J[model.P_IC, E_PIC] = np.eye(3)
    return J


def error_projection(x: np.ndarray) -> np.ndarray:
    """21x23 left inverse of error_lift (drops the two quaternion-norm directions)."""
    P = error_lift(x).T
    P[E_ATT, model.Q_GI] *= 4.0
    P[E_EXTROT, model.Q_IC] *= 4.0
    return P


def reduce_direction(x: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Packed-space direction expressed in error-state coordinates."""
    return error_projection(x) @ np.asarray(d, dtype=float)


def position_subspace_complement(d: np.ndarray) -> list[np.ndarray]:
    """Orthonormal complement of d inside the 6-dim (p, p_IC) subspace.

    Returns five packed-space unit vectors, deterministically ordered.
    """
    basis = np.zeros((model.DIM, 6))
    basis[model.P, 0:3] = np.eye(3)
    basis[model.P_IC, 3:6] = np.eye(3)
    d6 = basis.T @ np.asarray(d, dtype=float)
    d6 = d6 / np.linalg.norm(d6)
    q, _ = np.linalg.qr(np.column_stack([d6, np.eye(6)]))
    return [basis @ q[:, j] for j in range(1, 6)]


def _process_noise(cfg: EKFConfig, proj: np.ndarray, fields_23: np.ndarray,
                   dt: float) -> np.ndarray:
    # channels: gyro white(3), accel white(3), gyro-bias RW(3), accel-bias RW(3)
    G = np.zeros((ERROR_DIM, 12))
    G[:, 0:3] = proj @ fields_23[0:3].T
    G[:, 3:6] = proj @ fields_23[3:6].T
    G[E_BG, 6:9] = np.eye(3)
    G[E_BA, 9:12] = np.eye(3)
    qc = np.concatenate([
        cfg.gyro_noise ** 2 * np.ones(3), cfg.accel_noise ** 2 * np.ones(3),
        cfg.gyro_bias_rw ** 2 * np.ones(3), cfg.accel_bias_rw ** 2 * np.ones(3)])
    return (G * qc) @ G.T * dt


def _check_psd(P: np.ndarray, t: float):
    eig_min = float(np.linalg.eigvalsh(P)[0])
    if eig_min < -1e-9 * np.trace(P):
        raise EKFDivergenceError(t, f"covariance eigenvalue {eig_min:.3e}")


def run_ekf(traj: Trajectory, cfg: EKFConfig, params: model.ModelParams,
            directions: dict | None = None) -> CovarianceHistory:
    """Filter the scenario's synthetic bearings and record covariance behavior.

    ``directions`` maps names to packed-space unit vectors; the history then
    carries sqrt(d^T P d) for each, with d reduced to error coordinates at
    the nominal state of every sample.

    Sample 0 stores the prior; each later sample stores the posterior after
    propagation and one bearing update (skipped when there are no landmarks).
    """
    directions = dict(directions or {})
    rng = np.random.default_rng(cfg.seed)
    sys = model.calibration_system(params)
    N = len(traj)
    n_b = 3 * len(params.landmarks) if params.measurement_mode == "bearing" \
        else 2 * len(params.landmarks)

    Fs = sys.dynamics_jacobian_batch(traj.xs, traj.us) if N > 1 else None
    if n_b:
        H23s = sys.output_jacobian_batch(traj.xs)[:, :n_b, :]
        ys = sys.output_value_batch(traj.xs)[:, :n_b]
        R = cfg.meas_noise_std ** 2 * np.eye(n_b)

    P = cfg.initial_covariance()
    covs = np.empty((N, ERROR_DIM, ERROR_DIM))
    traces = {k: np.empty(N) for k in directions}
    delta = np.zeros(ERROR_DIM)  # error-state estimate, exercised by updates

    def record(i, P):
        covs[i] = P
        proj = error_projection(traj.xs[i])
        for key, d in directions.items():
            d21 = proj @ np.asarray(d, dtype=float)
            traces[key][i] = np.sqrt(max(d21 @ P @ d21, 0.0))

    record(0, P)
    eye = np.eye(ERROR_DIM)
    for i in range(N - 1):
        t_next = traj.times[i + 1]
        dt = t_next - traj.times[i]
        # error-state transition through the packed-space linearization
        phi23 = _rk4_step(Fs[i], Fs[i + 1], np.eye(model.DIM), dt)
        proj_i = error_projection(traj.xs[i])
        phi = error_projection(traj.xs[i + 1]) @ phi23 @ error_lift(traj.xs[i])
        fields_23 = np.array(model.input_fields(traj.xs[i]))
        P = phi @ P @ phi.T + _process_noise(cfg, proj_i, fields_23, dt)
        P = 0.5 * (P + P.T)
        delta = phi @ delta
        if n_b:
            H = H23s[i + 1] @ error_lift(traj.xs[i + 1])
            z = ys[i + 1] + cfg.meas_noise_std * rng.standard_normal(n_b)
            innov = z - ys[i + 1] - H @ delta
            S = H @ P @ H.T + R
            K = np.linalg.solve(S, H @ P).T
            delta = delta + K @ innov
            ikh = eye - K @ H
            P = ikh @ P @ ikh.T + K @ R @ K.T
            P = 0.5 * (P + P.T)
        _check_psd(P, t_next)
        record(i + 1, P)
    return CovarianceHistory(times=traj.times.copy(), covariances=covs,
                             direction_traces=traces,
                             scenario_id=traj.scenario_id)
