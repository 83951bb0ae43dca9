"""IMU-camera calibration system in control-affine form.

State (23 packed coordinates), process model, camera measurement model and
the quaternion norm-constraint outputs.  The packed block order is

    q_GI[0:4]  b_g[4:7]  v[7:10]  b_a[10:13]  p[13:16]  q_IC[16:20]  p_IC[20:23]

so the first block is the IMU attitude and the last is the camera lever arm.
All model maps are smooth functions of the *unconstrained* packed vector:
rotation matrices are evaluated through the homogeneous quadratic form, and
the two unit-norm constraints appear as explicit scalar outputs instead of
being eliminated.  Observability analysis therefore runs in the
over-parameterized space where the constraint gradients contribute rows.

The differentiable core is written once against an array namespace ``xp``
and is used both eagerly (numpy) and inside the automatic-differentiation
engine (jax.numpy).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import so3
from .lie import DifferentiableSystem

DIM = 23
N_INPUTS = 6

Q_GI = slice(0, 4)
B_G = slice(4, 7)
V = slice(7, 10)
B_A = slice(10, 13)
P = slice(13, 16)
Q_IC = slice(16, 20)
P_IC = slice(20, 23)

BLOCKS = (("q_gi", Q_GI), ("b_g", B_G), ("v", V), ("b_a", B_A),
          ("p", P), ("q_ic", Q_IC), ("p_ic", P_IC))

FIELD_NAMES = ("f0", "f_w1", "f_w2", "f_w3", "f_a1", "f_a2", "f_a3")

# Generic non-coplanar landmark set at 2 m nominal range; spread so that
# rank deficiencies reflect motion rather than landmark degeneracy.
DEFAULT_LANDMARKS = np.array([
    [1.1182, 0.0302, 1.6579],
    [-1.3761, 1.1327, 0.9074],
    [0.1918, -1.9672, 0.3053],
    [1.1395, 1.6164, -0.2981],
    [-1.6877, -0.3930, -0.9986],
    [0.9485, -0.6887, -1.6205],
])

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.81])
DEFAULT_P_IC = np.array([0.05, 0.10, 0.15])
DEFAULT_EXTRINSIC_AXIS = np.array([1.0, 1.0, 1.0])
DEFAULT_EXTRINSIC_ANGLE = np.deg2rad(10.0)


class DegenerateGeometryError(ValueError):
    """Landmark too close to the camera center for a bearing."""


class BehindCameraError(ValueError):
    """Pinhole projection requested for a point at or behind the camera."""


@dataclass(frozen=True)
class CalibState:
    """Full calibration state (two attitudes, two biases, velocity, two positions)."""

    q_gi: np.ndarray    # IMU attitude quaternion, global -> IMU
    b_g: np.ndarray     # gyro bias, rad/s
    v: np.ndarray       # IMU velocity in the global frame, m/s
    b_a: np.ndarray     # accelerometer bias, m/s^2
    p: np.ndarray       # IMU position in the global frame, m
    q_ic: np.ndarray    # extrinsic rotation quaternion, IMU -> camera
    p_ic: np.ndarray    # camera position in the IMU frame, m

    def __post_init__(self):
        for name, n in (("q_gi", 4), ("b_g", 3), ("v", 3), ("b_a", 3),
                        ("p", 3), ("q_ic", 4), ("p_ic", 3)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class ControlInput:
    """Measured angular velocity and specific force."""

    omega_m: np.ndarray  # rad/s
    a_m: np.ndarray      # m/s^2

    def __post_init__(self):
        for name in ("omega_m", "a_m"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (3,):
                raise ValueError(f"{name} must have shape (3,)")
            object.__setattr__(self, name, arr)

    def packed(self) -> np.ndarray:
        return np.concatenate([self.omega_m, self.a_m])


@dataclass(frozen=True)
class Landmark:
    position: np.ndarray  # global frame, m
    id: int

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class ModelParams:
    """Known constants of the measurement setup."""

    gravity: np.ndarray = field(default_factory=lambda: DEFAULT_GRAVITY.copy())
    landmarks: tuple = ()
    measurement_mode: str = "bearing"

    def __post_init__(self):
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float))
        if self.measurement_mode not in ("bearing", "pinhole"):
            raise ValueError(f"unknown measurement_mode {self.measurement_mode!r}")
        object.__setattr__(self, "landmarks", tuple(self.landmarks))

    @property
    def landmark_array(self) -> np.ndarray:
        return np.array([lm.position for lm in self.landmarks])

    @property
    def output_dim(self) -> int:
        per = 3 if self.measurement_mode == "bearing" else 2
        return per * len(self.landmarks) + 2

    def validate_full_rank_geometry(self):
        """Check the landmark set supports full-rank scenarios.

        Requires at least 4 landmarks whose affine span is 3-dimensional,
        which rules out the set being coplanar with any camera center.
        """
        if len(self.landmarks) < 4:
            raise ValueError("full-rank scenarios need at least 4 landmarks")
        pts = self.landmark_array
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[2] < 1e-9 * max(sv[0], 1.0):
            raise ValueError("landmarks are coplanar; add off-plane points")


def default_params(measurement_mode: str = "bearing") -> ModelParams:
    lms = tuple(Landmark(p, i) for i, p in enumerate(DEFAULT_LANDMARKS))
    return ModelParams(landmarks=lms, measurement_mode=measurement_mode)


def default_rig() -> CalibState:
    """Generic rig: all p_IC components nonzero, extrinsic rotation off-axis."""
    return CalibState(
        q_gi=so3.quat_identity(),
        b_g=np.zeros(3),
        v=np.zeros(3),
        b_a=np.zeros(3),
        p=np.zeros(3),
        q_ic=so3.axis_angle_to_quat(DEFAULT_EXTRINSIC_AXIS, DEFAULT_EXTRINSIC_ANGLE),
        p_ic=DEFAULT_P_IC.copy(),
    )


def pack(x: CalibState) -> np.ndarray:
    return np.concatenate([x.q_gi, x.b_g, x.v, x.b_a, x.p, x.q_ic, x.p_ic])


def unpack(vec) -> CalibState:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (DIM,):
        raise ValueError(f"packed state must have shape ({DIM},), got {vec.shape}")
    return CalibState(q_gi=vec[Q_GI], b_g=vec[B_G], v=vec[V], b_a=vec[B_A],
                      p=vec[P], q_ic=vec[Q_IC], p_ic=vec[P_IC])


def _as_packed(x) -> np.ndarray:
    if isinstance(x, CalibState):
        return pack(x)
    vec = np.asarray(x, dtype=float)
    if vec.shape != (DIM,):
        raise ValueError(f"expected CalibState or ({DIM},) vector, got shape {vec.shape}")
    return vec


# --- differentiable core (namespace-generic: xp is numpy or jax.numpy) ---

def _skew(v, xp):
    z = v[0] * 0.0
    return xp.stack([
        xp.stack([z, -v[2], v[1]]),
        xp.stack([v[2], z, -v[0]]),
        xp.stack([-v[1], v[0], z]),
    ])


def _cmat(q, xp):
    # homogeneous global->body DCM: C(q) = R(q)^T with R the rotation action
    v, w = q[:3], q[3]
    r = (w * w - v @ v) * xp.eye(3) + 2.0 * xp.outer(v, v) + 2.0 * w * _skew(v, xp)
    return r.T


def _omega(w3, xp):
    s = _skew(w3, xp)
    top = xp.concatenate([-s, w3.reshape(3, 1)], axis=1)
    bot = xp.concatenate([-w3, xp.zeros(1)]).reshape(1, 4)
    return xp.concatenate([top, bot], axis=0)


def _drift_core(x, gravity, xp):
    q_gi, b_g, v, b_a = x[Q_GI], x[B_G], x[V], x[B_A]
    q_dot = 0.5 * _omega(-b_g, xp) @ q_gi
    v_dot = -_cmat(q_gi, xp).T @ b_a + gravity
    z3 = xp.zeros(3)
    return xp.concatenate([q_dot, z3, v_dot, z3, v, xp.zeros(4), z3])


def _input_field_core(x, i, xp):
    # i in 0..2: gyro channels, 3..5: accelerometer channels
    q_gi = x[Q_GI]
    e = xp.eye(3)[i % 3]
    if i < 3:
        q_dot = 0.5 * _omega(e, xp) @ q_gi
        return xp.concatenate([q_dot, xp.zeros(19)])
    v_dot = _cmat(q_gi, xp).T @ e
    return xp.concatenate([xp.zeros(7), v_dot, xp.zeros(13)])


def _bearing_core(x, lm, mode, xp):
    rho = _cmat(x[Q_IC], xp) @ (_cmat(x[Q_GI], xp) @ (lm - x[P]) - x[P_IC])
    if mode == "bearing":
        return rho / xp.linalg.norm(rho)
    return xp.stack([rho[0] / rho[2], rho[1] / rho[2]])


def _output_core(x, landmarks, mode, xp):
    parts = [_bearing_core(x, landmarks[i], mode, xp) for i in range(len(landmarks))]
    q_gi, q_ic = x[Q_GI], x[Q_IC]
    parts.append(xp.stack([q_gi @ q_gi - 1.0, q_ic @ q_ic - 1.0]))
    return xp.concatenate(parts)


# --- public operations (numpy, eager, with geometry checks) ---

def drift_field(x, params: ModelParams) -> np.ndarray:
    """Unforced dynamics f0 of the control-affine model."""
    return _drift_core(_as_packed(x), params.gravity, np)


def input_fields(x) -> list[np.ndarray]:
    """The six input vector fields [f_w1..3, f_a1..3]."""
    vec = _as_packed(x)
    return [_input_field_core(vec, i, np) for i in range(N_INPUTS)]


def dynamics(x, u, params: ModelParams) -> np.ndarray:
    """Full dynamics f0(x) + sum_i u_i f_i(x)."""
    vec = _as_packed(x)
    u = u.packed() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    out = _drift_core(vec, params.gravity, np)
    for i in range(N_INPUTS):
        out = out + u[i] * _input_field_core(vec, i, np)
    return out


def camera_position(x) -> np.ndarray:
    """Camera position in the global frame: p + C(q_GI)^T p_IC."""
    if not isinstance(x, CalibState):
        x = unpack(_as_packed(x))
    return x.p + so3.quat_to_matrix(x.q_gi).T @ x.p_ic


def measure_bearing(x, landmark: Landmark, mode: str = "bearing") -> np.ndarray:
    """Camera-frame bearing (or pinhole projection) of one landmark."""
    vec = _as_packed(x)
    rho = _cmat(vec[Q_IC], np) @ (_cmat(vec[Q_GI], np) @ (landmark.position - vec[P]) - vec[P_IC])
    if np.linalg.norm(rho) < 1e-9:
        raise DegenerateGeometryError(
            f"landmark {landmark.id} coincides with the camera center")
    if mode == "bearing":
        return rho / np.linalg.norm(rho)
    if mode == "pinhole":
        if rho[2] <= 1e-6:
            raise BehindCameraError(f"landmark {landmark.id} is behind the camera")
        return np.array([rho[0] / rho[2], rho[1] / rho[2]])
    raise ValueError(f"unknown measurement mode {mode!r}")


def constraint_outputs(x) -> np.ndarray:
    """The two unit-norm constraint residuals (q_GI, q_IC)."""
    vec = _as_packed(x)
    q_gi, q_ic = vec[Q_GI], vec[Q_IC]
    return np.array([q_gi @ q_gi - 1.0, q_ic @ q_ic - 1.0])


def output_stack(x, params: ModelParams) -> np.ndarray:
    """All landmark measurements followed by the two constraint outputs.

    Ordering contract: landmarks in list order, 3 (bearing) or 2 (pinhole)
    components each, then the two constraint residuals last.
    """
    vec = _as_packed(x)
    parts = []
    for lm in params.landmarks:
        try:
            parts.append(measure_bearing(vec, lm, params.measurement_mode))
        except ValueError as exc:
            raise type(exc)(f"output_stack failed at landmark {lm.id}: {exc}") from exc
    parts.append(constraint_outputs(vec))
    return np.concatenate(parts)


def output_labels(params: ModelParams) -> list[str]:
    """Stable per-component names matching output_stack ordering."""
    per = ("x", "y", "z") if params.measurement_mode == "bearing" else ("u", "v")
    labels = [f"lm{lm.id}_{c}" for lm in params.landmarks for c in per]
    labels += ["norm_q_gi", "norm_q_ic"]
    return labels


def perturb(x: CalibState, delta: np.ndarray) -> CalibState:
    """Additive perturbation in packed coordinates."""
    return unpack(pack(x) + np.asarray(delta, dtype=float))


_SYSTEM_CACHE: dict = {}


def calibration_system(params: ModelParams) -> DifferentiableSystem:
    """Differentiable control-affine form of the calibration model.

    Instances are cached per (gravity, landmarks, mode) so compiled
    derivative kernels are reused across analyses.
    """
    import jax.numpy as jnp

    lm_arr = params.landmark_array
    key = (params.gravity.tobytes(), lm_arr.tobytes(), params.measurement_mode)
    if key in _SYSTEM_CACHE:
        return _SYSTEM_CACHE[key]

    gravity = jnp.asarray(params.gravity)
    landmarks = jnp.asarray(lm_arr)
    sys = DifferentiableSystem(
        n=DIM,
        m=params.output_dim,
        drift=partial(_drift_core, gravity=gravity, xp=jnp),
        input_fields=tuple(partial(_input_field_core, i=i, xp=jnp)
                           for i in range(N_INPUTS)),
        output=partial(_output_core, landmarks=landmarks,
                       mode=params.measurement_mode, xp=jnp),
        field_names=FIELD_NAMES,
        name="imu_camera_calibration",
    )
    _SYSTEM_CACHE[key] = sys
    return sys


__all__ = [
    "DIM", "N_INPUTS", "Q_GI", "B_G", "V", "B_A", "P", "Q_IC", "P_IC",
    "BLOCKS", "FIELD_NAMES", "CalibState", "ControlInput", "Landmark",
    "ModelParams", "DegenerateGeometryError", "BehindCameraError",
    "default_params", "default_rig", "pack", "unpack", "drift_field",
    "input_fields", "dynamics", "camera_position", "measure_bearing",
    "constraint_outputs", "output_stack", "output_labels", "perturb",
    "calibration_system",
]
