import numpy as np
import pytest

import jax.numpy as jnp

from obslab import model
from obslab.lie import (DifferentiableSystem, ObservabilityRequest,
                        build_observability_matrix, enumerate_sequences,
                        lie_derivative, null_space, numerical_rank,
                        observability_report, participating_fields,
                        rank_saturation)

from conftest import random_packed_state, relative_error, rk4_flow


def scalar_square_system():
    """n=1, h(x) = x^2, one constant input field of value 1."""
    return DifferentiableSystem(
        n=1, m=1,
        drift=lambda x: jnp.zeros(1),
        input_fields=(lambda x: jnp.ones(1),),
        output=lambda x: jnp.array([x[0] ** 2]), jit=False)


def linear_system(A, C, B=None):
    A_j, C_j = jnp.asarray(A), jnp.asarray(C)
    n = A.shape[0]
    fields = ()
    if B is not None:
        B_j = jnp.asarray(B)
        fields = tuple((lambda x, j=j: B_j[:, j]) for j in range(B.shape[1]))
    return DifferentiableSystem(n=n, m=C.shape[0], drift=lambda x: A_j @ x,
                                input_fields=fields, output=lambda x: C_j @ x,
                                jit=False)


def kalman_rows(A, C, order):
    rows = [C]
    for _ in range(order):
        rows.append(rows[-1] @ A)
    return np.vstack(rows)


def subspace_angle(U, V):
    """Largest principal angle (rad) between column spans, sine-accurate.

    Computed from the projection residual so angles far below the arccos
    rounding floor (~1e-8) are resolved.
    """
    qu, _ = np.linalg.qr(np.asarray(U, dtype=float))
    qv, _ = np.linalg.qr(np.asarray(V, dtype=float))
    sin_uv = np.linalg.norm(qv - qu @ (qu.T @ qv), 2)
    sin_vu = np.linalg.norm(qu - qv @ (qv.T @ qu), 2)
    return float(np.arcsin(np.clip(max(sin_uv, sin_vu), 0.0, 1.0)))


class TestLieDerivative:
    def test_scalar_analytic(self):
        sys = scalar_square_system()
        val, grad = lie_derivative(sys, [1], 0, np.array([3.0]))
        assert val == pytest.approx(6.0, abs=1e-14)
        assert grad[0] == pytest.approx(2.0, abs=1e-14)

    def test_zeroth_order_is_output(self, system):
        rng = np.random.default_rng(0)
        x = random_packed_state(rng)
        val, grad = lie_derivative(system, [], system.m - 2, x)
        q = x[model.Q_GI]
        assert val == pytest.approx(q @ q - 1.0, abs=1e-14)
        expected = np.zeros(23)
        expected[model.Q_GI] = 2 * q
        np.testing.assert_allclose(grad, expected, atol=1e-15)

    def test_second_order_flow_oracle(self, system, params):
        # L_f0 L_f0 h equals the second time derivative of h along the drift
        # flow; Richardson-extrapolated central differences supply the oracle
        rng = np.random.default_rng(1)
        drift_np = lambda z: model.drift_field(z, params)  # noqa: E731

        def h_along_flow(x, j, t):
            if t == 0.0:
                return model.output_stack(x, params)[j]
            fn = drift_np if t > 0 else (lambda z: -drift_np(z))
            return model.output_stack(rk4_flow(fn, x, abs(t), 40), params)[j]

        checked = 0
        for _ in range(50):
            x = random_packed_state(rng)
            j = int(rng.integers(0, system.m))
            val, _ = lie_derivative(system, [0, 0], j, x)

            def second_diff(h):
                return (h_along_flow(x, j, h) - 2 * h_along_flow(x, j, 0.0)
                        + h_along_flow(x, j, -h)) / h ** 2

            d1, d2 = second_diff(2e-3), second_diff(1e-3)
            richardson = (4 * d2 - d1) / 3
            if abs(richardson) < 1e-3:
                continue  # relative comparison is meaningless near zero
            assert abs(val - richardson) / abs(richardson) < 1e-4
            checked += 1
        assert checked >= 30

    def test_order_guard(self, system):
        with pytest.raises(ValueError):
            lie_derivative(system, [0] * 7, 0, np.zeros(23))

    def test_matches_block_path(self, system):
        rng = np.random.default_rng(2)
        x = random_packed_state(rng)
        for seq in [(0,), (0, 1), (4, 0), (2, 0, 5)]:
            W = np.zeros((len(seq), system.k + 1))
            for lvl, idx in enumerate(seq):
                W[lvl, idx] = 1.0
            block = np.asarray(system.lie_block_fn(len(seq))(jnp.asarray(x),
                                                             jnp.asarray(W)))
            for j in (0, 7, system.m - 1):
                _, grad = lie_derivative(system, seq, j, x)
                np.testing.assert_allclose(grad, block[j], rtol=1e-12, atol=1e-12)


class TestEnumerateSequences:
    def test_order_zero(self):
        req = ObservabilityRequest(x=np.zeros(23), u=np.zeros(6), max_order=0)
        assert enumerate_sequences(req, 6) == [()]

    def test_excited_selects_nonzero_inputs(self):
        u = np.array([1.0, 2.0, 0.0, 0.0, 0.0, 0.0])
        req = ObservabilityRequest(x=np.zeros(23), u=u, max_order=1, mode="excited")
        seqs = enumerate_sequences(req, 6)
        assert participating_fields(req, 6) == [0, 1, 2]
        assert seqs == [(), (0,), (1,), (2,)]

    def test_full_mode_count(self):
        req = ObservabilityRequest(x=np.zeros(23), u=np.zeros(6), max_order=2)
        assert len(enumerate_sequences(req, 6)) == 1 + 7 + 49

    def test_lexicographic_and_deterministic(self):
        u = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        req = ObservabilityRequest(x=np.zeros(23), u=u, max_order=2, mode="excited")
        seqs = enumerate_sequences(req, 6)
        assert seqs == [(), (0,), (3,), (0, 0), (0, 3), (3, 0), (3, 3)]


class TestBuildMatrix:
    def test_order_zero_is_output_jacobian(self, system):
        rng = np.random.default_rng(3)
        x = random_packed_state(rng)
        req = ObservabilityRequest(x=x, u=np.zeros(6), max_order=0,
                                   row_normalize=False)
        report = build_observability_matrix(system, req)
        np.testing.assert_allclose(report.matrix, system.output_jacobian(x),
                                   rtol=1e-12, atol=1e-14)

    def test_row_count_two_excited_fields(self, system):
        x = model.pack(model.default_rig())
        u = np.array([1.0, 2.0, 0.0, 0.0, 0.0, 0.0])
        req = ObservabilityRequest(x=x, u=u, max_order=2, mode="excited")
        report = build_observability_matrix(system, req)
        assert report.matrix.shape[0] + len(report.dropped_rows) == (1 + 3 + 9) * 20

    def test_classical_linear_rows_oracle(self):
        rng = np.random.default_rng(4)
        A = rng.standard_normal((4, 4))
        C = rng.standard_normal((2, 4))
        sys = linear_system(A, C)
        req = ObservabilityRequest(x=rng.standard_normal(4), u=np.zeros(0),
                                   max_order=2, row_normalize=False)
        report = build_observability_matrix(sys, req)
        classical = kalman_rows(A, C, 2)
        assert subspace_angle(report.matrix.T, classical.T) < 1e-12

    def test_labels_track_rows(self, system):
        x = model.pack(model.default_rig())
        req = ObservabilityRequest(x=x, u=np.zeros(6), max_order=0)
        report = build_observability_matrix(system, req)
        assert report.row_labels[0] == "h0/[]"
        assert len(report.row_labels) == report.matrix.shape[0]


class TestNumericalRank:
    def test_identity(self):
        rank, sv = numerical_rank(np.eye(3), 1e-8)
        assert rank == 3 and sv.shape == (3,)

    def test_threshold_forces_rank(self):
        rank, _ = numerical_rank(np.diag([1.0, 1e-15]), 1e-8)
        assert rank == 1

    def test_constructed_rank_oracle(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((23, 5)) @ rng.standard_normal((5, 100))
        rank, _ = numerical_rank(m, 1e-8)
        assert rank == 5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            numerical_rank(np.zeros((0, 3)), 1e-8)


class TestNullSpace:
    def test_zero_matrix(self):
        basis = null_space(np.zeros((2, 3)), 1e-8)
        assert basis.shape == (3, 3)
        np.testing.assert_allclose(basis.T @ basis, np.eye(3), atol=1e-12)

    def test_full_rank_square(self):
        rng = np.random.default_rng(6)
        basis = null_space(rng.standard_normal((4, 4)) + 4 * np.eye(4), 1e-8)
        assert basis.shape == (4, 0)

    def test_constructed_null_vector(self):
        rng = np.random.default_rng(7)
        v = rng.standard_normal(6)
        v /= np.linalg.norm(v)
        m = rng.standard_normal((8, 6)) @ (np.eye(6) - np.outer(v, v))
        basis = null_space(m, 1e-8)
        assert basis.shape == (6, 1)
        assert subspace_angle(basis, v[:, None]) < 1e-8


class TestRankSaturation:
    def test_non_decreasing_and_cap(self, system):
        x = model.pack(model.default_rig())
        u = np.array([1.0, 2.0, 0.0, 0.0, 0.0, 9.81])
        req = ObservabilityRequest(x=x, u=u, max_order=2, mode="excited")
        order, ranks = rank_saturation(system, req)
        assert all(a <= b for a, b in zip(ranks, ranks[1:]))
        assert order <= 2

    def test_order_zero_cap(self, system):
        x = model.pack(model.default_rig())
        req = ObservabilityRequest(x=x, u=np.zeros(6), max_order=0)
        order, ranks = rank_saturation(system, req)
        assert order == 0 and len(ranks) == 1


class TestEngineInvariants:
    def test_linear_equivalence_20_systems(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            A = rng.standard_normal((4, 4))
            C = rng.standard_normal((1, 4))
            B = rng.standard_normal((4, 2))
            sys = linear_system(A, C, B)
            req = ObservabilityRequest(x=rng.standard_normal(4),
                                       u=rng.standard_normal(2), max_order=3,
                                       mode="full")
            report = observability_report(sys, req)
            classical_rank = np.linalg.matrix_rank(kalman_rows(A, C, 3))
            assert report.rank == classical_rank

    def test_constant_field_rows_dropped(self):
        rng = np.random.default_rng(9)
        A = rng.standard_normal((3, 3))
        C = rng.standard_normal((2, 3))
        B = rng.standard_normal((3, 1))
        sys = linear_system(A, C, B)
        req = ObservabilityRequest(x=rng.standard_normal(3), u=np.ones(1),
                                   max_order=2, mode="full")
        report = build_observability_matrix(sys, req)
        # any sequence ending in the constant input field has zero gradient
        assert any("f1]" in lbl for lbl in report.dropped_rows)

    def test_excited_subset_of_full(self, system):
        x = model.pack(model.default_rig())
        u = np.array([1.0, 2.0, 0.0, 0.0, 0.0, 9.81])
        kw = dict(x=x, u=u, max_order=2)
        rep_exc = observability_report(system, ObservabilityRequest(mode="excited", **kw))
        rep_full = observability_report(system, ObservabilityRequest(mode="full", **kw))
        assert set(rep_exc.row_labels) <= set(rep_full.row_labels)
        assert rep_exc.rank <= rep_full.rank

    def test_permutation_invariance(self, system):
        rng = np.random.default_rng(10)
        x = model.pack(model.default_rig())
        u = np.array([1.0, 2.0, 0.0, 0.0, 0.0, 9.81])
        req = ObservabilityRequest(x=x, u=u, max_order=2, mode="excited")
        base = observability_report(system, req)

        perm = rng.permutation(23)
        pmat = np.eye(23)[perm]
        inv = jnp.asarray(pmat.T)

        def permute_field(f):
            return lambda z: jnp.asarray(pmat) @ f(inv @ z)

        permuted = DifferentiableSystem(
            n=23, m=system.m,
            drift=permute_field(system.drift),
            input_fields=tuple(permute_field(f) for f in system.input_fields),
            output=lambda z: system.output(inv @ z),
            field_names=system.field_names)
        preq = ObservabilityRequest(x=pmat @ x, u=u, max_order=2, mode="excited")
        prep = observability_report(permuted, preq)
        assert prep.rank == base.rank
        if base.null_basis.shape[1]:
            assert subspace_angle(pmat @ base.null_basis, prep.null_basis) < 1e-8

    def test_row_order_permutation(self, system):
        rng = np.random.default_rng(11)
        x = model.pack(model.default_rig())
        req = ObservabilityRequest(x=x, u=np.zeros(6), max_order=1, mode="excited")
        report = observability_report(system, req)
        shuffled = report.matrix[rng.permutation(report.matrix.shape[0])]
        rank, _ = numerical_rank(shuffled, req.rank_tol)
        assert rank == report.rank
        assert subspace_angle(null_space(shuffled, req.rank_tol),
                              report.null_basis) < 1e-8 \
            if report.null_basis.shape[1] else True

    def test_row_scale_robustness(self, system):
        x = model.pack(model.default_rig())
        u = np.array([1.0, 2.0, 0.0, 0.0, 0.0, 9.81])
        req = ObservabilityRequest(x=x, u=u, max_order=1, mode="excited",
                                   row_normalize=False)
        raw = build_observability_matrix(system, req)
        base_rank, _ = numerical_rank(raw.matrix / np.linalg.norm(raw.matrix, axis=1,
                                                                  keepdims=True), 1e-8)
        for c in (1e-3, 1e3):
            scaled = raw.matrix.copy()
            scaled[5] *= c
            normed = scaled / np.linalg.norm(scaled, axis=1, keepdims=True)
            rank, _ = numerical_rank(normed, 1e-8)
            assert rank == base_rank

    def test_null_residual_invariant(self, system):
        x = model.pack(model.default_rig())
        req = ObservabilityRequest(x=x, u=np.zeros(6), max_order=1, mode="excited")
        rep = observability_report(system, req)
        assert rep.rank + rep.null_basis.shape[1] == 23
        if rep.null_basis.shape[1]:
            np.testing.assert_allclose(rep.null_basis.T @ rep.null_basis,
                                       np.eye(rep.null_basis.shape[1]), atol=1e-10)
            sigma_max = rep.singular_values[0]
            for col in rep.null_basis.T:
                assert np.linalg.norm(rep.matrix @ col) <= 10 * req.rank_tol * sigma_max

    def test_request_validation(self):
        with pytest.raises(ValueError):
            ObservabilityRequest(x=np.zeros(23), u=np.zeros(6), max_order=7)
        with pytest.raises(ValueError):
            ObservabilityRequest(x=np.zeros(23), u=np.zeros(6), mode="lazy")
