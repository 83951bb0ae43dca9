"""obslab: a numerical observability laboratory for IMU-camera calibration.

Three instruments probe the same question from different angles:

* an instantaneous Lie-derivative rank analysis (``obslab.lie``),
* an empirical observability Gramian along a trajectory (``obslab.gramian``),
* an error-state Kalman filter whose covariance contraction is the
  behavioral readout (``obslab.ekf``).

``obslab.scenarios`` supplies the motion profiles under which the
instruments are known to agree or, for the lever-arm-parallel rotation,
to disagree.
"""

from .lie import (
    DifferentiableSystem,
    NumericalFailureError,
    ObservabilityReport,
    ObservabilityRequest,
    build_observability_matrix,
    enumerate_sequences,
    lie_derivative,
    null_space,
    numerical_rank,
    observability_report,
    rank_saturation,
)
from .model import (
    CalibState,
    ControlInput,
    Landmark,
    ModelParams,
    calibration_system,
    camera_position,
    constraint_outputs,
    default_params,
    default_rig,
    drift_field,
    dynamics,
    input_fields,
    measure_bearing,
    output_stack,
    pack,
    unpack,
)
from .scenarios import (
    AmbiguityDirection,
    RotationProfile,
    ScenarioSpec,
    Trajectory,
    ambiguity_direction,
    classify_input,
    make_scenario,
    satisfies_two_axes,
    simulate,
)
from .gramian import (
    Gramian,
    dynamics_jacobian,
    empirical_gramian,
    gramian_alignment,
    state_transition,
)
from .ekf import CovarianceHistory, EKFConfig, EKFDivergenceError, run_ekf

__version__ = "0.1.0"

__all__ = [
    "DifferentiableSystem", "NumericalFailureError", "ObservabilityReport",
    "ObservabilityRequest", "build_observability_matrix", "enumerate_sequences",
    "lie_derivative", "null_space", "numerical_rank", "observability_report",
    "rank_saturation",
    "CalibState", "ControlInput", "Landmark", "ModelParams",
    "calibration_system", "camera_position", "constraint_outputs",
    "default_params", "default_rig", "drift_field", "dynamics",
    "input_fields", "measure_bearing", "output_stack", "pack", "unpack",
    "AmbiguityDirection", "RotationProfile", "ScenarioSpec", "Trajectory",
    "ambiguity_direction", "classify_input", "make_scenario",
    "satisfies_two_axes", "simulate",
    "Gramian", "dynamics_jacobian", "empirical_gramian", "gramian_alignment",
    "state_transition",
    "CovarianceHistory", "EKFConfig", "EKFDivergenceError", "run_ekf",
    "__version__",
]
