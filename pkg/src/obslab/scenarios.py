"""Rotation scenarios for probing observability of the calibration model.

The four built-in scenarios exercise the two competing motion conditions:

* ``S1`` rotates about a single coordinate axis (one nonzero rate component,
  a single rotation axis),
* ``S2`` rotates about the fixed axis [1, 2, 0]/sqrt(5) at sqrt(5) rad/s so
  the body rate is exactly [1, 2, 0] (two nonzero components, one axis),
* ``S3`` rotates about the axis parallel to the camera lever arm p_IC
  (three nonzero components, one axis) - the degenerate geometry where the
  camera sits on the rotation axis and a lever-arm stretch is invisible,
* ``S4`` rotates about e1 and then e2 (two distinct axes).

The IMU origin is pinned (p = 0, v = 0) so rotational excitation is studied
in isolation; the specific-force input then cancels gravity exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import model, so3

SCENARIO_IDS = ("S1", "S2", "S3", "S4")
NONZERO_RATE_TOL = 1e-9
AXIS_SPAN_TOL = 1e-6


@dataclass(frozen=True)
class RotationProfile:
    """Constant body-frame rotation: unit axis, rate (rad/s), duration (s)."""

    axis: np.ndarray
    rate: float
    duration: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise ValueError("profile axis must be nonzero")
        object.__setattr__(self, "axis", axis / n)
        if self.duration <= 0:
            raise ValueError("profile duration must be positive")

    @property
    def omega(self) -> np.ndarray:
        return self.rate * self.axis


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: str
    profiles: tuple
    x0: model.CalibState
    params: model.ModelParams
    dt: float = 0.005

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if not self.profiles:
            raise ValueError("scenario needs at least one rotation profile")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def duration(self) -> float:
        return sum(p.duration for p in self.profiles)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled nominal states and inputs of a simulated scenario."""

    times: np.ndarray
    xs: np.ndarray          # (N, 23) packed states
    us: np.ndarray          # (N, 6) packed inputs [omega_m, a_m]
    scenario_id: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "xs", np.asarray(self.xs, dtype=float))
        object.__setattr__(self, "us", np.asarray(self.us, dtype=float))
        if len(self.times) != len(self.xs) or len(self.times) != len(self.us):
            raise ValueError("times, states and inputs must have equal length")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def state(self, i: int) -> model.CalibState:
        return model.unpack(self.xs[i])

    def control(self, i: int) -> model.ControlInput:
        return model.ControlInput(omega_m=self.us[i, :3], a_m=self.us[i, 3:])


@dataclass(frozen=True)
class AmbiguityDirection:
    """Unit packed-state direction along which measurements are blind."""

    d: np.ndarray
    description: str

    def __post_init__(self):
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float))


@dataclass(frozen=True)
class InputClassification:
    nonzero_count: int
    two_nonzero_components: bool


def classify_input(omega, eps: float = NONZERO_RATE_TOL) -> InputClassification:
    """Count nonzero angular-rate components against the two-component condition."""
    omega = np.asarray(omega, dtype=float)
    count = int(np.sum(np.abs(omega) > eps))
    return InputClassification(nonzero_count=count, two_nonzero_components=count >= 2)


def axes_span_dim(profiles, tol: float = AXIS_SPAN_TOL) -> int:
    """Dimension of the space spanned by the profile rotation axes."""
    axes = np.array([p.axis for p in profiles])
    sv = np.linalg.svd(axes, compute_uv=False)
    return int(np.sum(sv > tol * max(sv[0], 1.0)))


def satisfies_two_axes(profiles, tol: float = AXIS_SPAN_TOL) -> bool:
    """True when the rig is rotated about at least two different axes."""
    return axes_span_dim(profiles, tol) >= 2


def pin_origin(rig: model.CalibState) -> model.CalibState:
    """Rig with the IMU origin at rest at the global origin."""
    return model.CalibState(q_gi=rig.q_gi, b_g=rig.b_g, v=np.zeros(3),
                            b_a=rig.b_a, p=np.zeros(3), q_ic=rig.q_ic,
                            p_ic=rig.p_ic)


def make_scenario(scenario_id: str, rig: model.CalibState = None,
                  params: model.ModelParams = None,
                  profile_duration: float = 5.0,
                  dt: float = 0.005) -> ScenarioSpec:
    """Construct one of the built-in scenarios S1..S4 for the given rig."""
    rig = model.default_rig() if rig is None else rig
    params = model.default_params() if params is None else params
    x0 = pin_origin(rig)
    if scenario_id == "S1":
        profiles = (RotationProfile(np.array([0.0, 0.0, 1.0]), 1.0, profile_duration),)
    elif scenario_id == "S2":
        axis = np.array([1.0, 2.0, 0.0]) / np.sqrt(5.0)
        profiles = (RotationProfile(axis, np.sqrt(5.0), profile_duration),)
    elif scenario_id == "S3":
        axis = x0.p_ic / np.linalg.norm(x0.p_ic)
        profiles = (RotationProfile(axis, 1.0, profile_duration),)
    elif scenario_id == "S4":
        profiles = (RotationProfile(np.array([1.0, 0.0, 0.0]), 1.0, profile_duration),
                    RotationProfile(np.array([0.0, 1.0, 0.0]), 1.0, profile_duration))
    else:
        raise ValueError(f"unknown scenario id {scenario_id!r}")
    return ScenarioSpec(scenario_id=scenario_id, profiles=profiles, x0=x0,
                        params=params, dt=dt)


def scenario_with_duration(spec: ScenarioSpec, total_duration: float) -> ScenarioSpec:
    """Same scenario with the total duration split evenly over its profiles."""
    per = total_duration / len(spec.profiles)
    profiles = tuple(replace(p, duration=per) for p in spec.profiles)
    return replace(spec, profiles=profiles)


def simulate(spec: ScenarioSpec) -> Trajectory:
    """Integrate the scenario in closed form (exact per piecewise-constant step).

    The IMU origin stays pinned, so the specific-force input is the gravity
    reaction -C(q_GI) g at every sample and the biases are constant.
    """
    x0 = model.pack(spec.x0)
    g = spec.params.gravity
    xs = [x0]
    inputs = []
    x = x0.copy()
    for prof in spec.profiles:
        n_steps = int(round(prof.duration / spec.dt))
        if n_steps < 1:
            raise ValueError("profile shorter than one time step")
        omega_true = prof.omega
        for _ in range(n_steps):
            omega_m = omega_true + x[model.B_G]
            a_m = -so3.quat_matrix_unnormalized(x[model.Q_GI]) @ g + x[model.B_A]
            inputs.append(np.concatenate([omega_m, a_m]))
            q = so3.quat_integrate(x[model.Q_GI], omega_true, spec.dt)
            x = x.copy()
            x[model.Q_GI] = q
            xs.append(x.copy())
    # final sample reuses the last active profile's input
    x_last = xs[-1]
    omega_m = spec.profiles[-1].omega + x_last[model.B_G]
    a_m = -so3.quat_matrix_unnormalized(x_last[model.Q_GI]) @ g + x_last[model.B_A]
    inputs.append(np.concatenate([omega_m, a_m]))
    times = np.arange(len(xs)) * spec.dt
    return Trajectory(times=times, xs=np.array(xs), us=np.array(inputs),
                      scenario_id=spec.scenario_id)


def initial_input(spec: ScenarioSpec) -> model.ControlInput:
    """Measured inputs at t=0: first-profile rate plus bias, gravity reaction."""
    x0 = spec.x0
    omega_m = spec.profiles[0].omega + x0.b_g
    a_m = -so3.quat_to_matrix(x0.q_gi) @ spec.params.gravity + x0.b_a
    return model.ControlInput(omega_m=omega_m, a_m=a_m)


def ambiguity_direction(x0: model.CalibState, axis) -> AmbiguityDirection:
    """Lever-arm scale ambiguity of a rotation about ``axis`` through the IMU.

    Stretching p_IC along the body-frame rotation axis while shifting the IMU
    position by the opposite global-frame vector leaves the camera pose, and
    hence every measurement, unchanged as long as the rig only rotates about
    that axis: C(q_GI(t))^T axis is constant in time, so the two contributions
    cancel at every sample.
    """
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if abs(n - 1.0) > 1e-9:
        raise ValueError("ambiguity axis must be unit length")
    d = np.zeros(model.DIM)
    d[model.P_IC] = axis
    d[model.P] = -so3.quat_to_matrix(x0.q_gi).T @ axis
    d = d / np.linalg.norm(d)
    return AmbiguityDirection(
        d=d,
        description=("camera lever-arm stretch along the rotation axis with the "
                     "compensating IMU position shift; invisible to all camera "
                     "measurements while the rig rotates only about this axis"),
    )
