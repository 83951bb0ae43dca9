import numpy as np
import pytest

from obslab import model


@pytest.fixture(scope="session")
def params():
    return model.default_params()


@pytest.fixture(scope="session")
def rig():
    return model.default_rig()


@pytest.fixture(scope="session")
def system(params):
    sys = model.calibration_system(params)
    sys.output_value(model.pack(model.default_rig()))  # warm the jit cache
    return sys


def random_packed_state(rng, quat_scale=1.0):
    """Generic 23-vector with roughly unit-scale blocks; quaternions near unit."""
    x = 0.5 * rng.standard_normal(model.DIM)
    for sl in (model.Q_GI, model.Q_IC):
        q = rng.standard_normal(4)
        x[sl] = quat_scale * q / np.linalg.norm(q)
    return x


def central_fd_jacobian(fn, x, step=1e-6):
    """Central finite-difference Jacobian of fn at x (the test-side oracle)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        dx = np.zeros_like(x)
        dx[i] = step
        cols.append((np.asarray(fn(x + dx)) - np.asarray(fn(x - dx))) / (2 * step))
    return np.stack(cols, axis=-1)


def rk4_flow(fn, x0, t_total, n_steps):
    """Fixed-step RK4 integration of x' = fn(x)."""
    x = np.asarray(x0, dtype=float).copy()
    h = t_total / n_steps
    for _ in range(n_steps):
        k1 = fn(x)
        k2 = fn(x + 0.5 * h * k1)
        k3 = fn(x + 0.5 * h * k2)
        k4 = fn(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def relative_error(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), 1e-12)
    return np.linalg.norm(a - b) / scale
