"""Lie-derivative observability engine for control-affine systems.

Builds the stacked-gradient observability matrix of a system at a single
state/input point, computes its numerical rank and null space, and supports
two row-inclusion policies:

* ``full``: iterated Lie derivatives over the drift and *all* input fields;
* ``excited``: only fields whose instantaneous input component is nonzero
  participate (the drift always does).

Gradients of nested Lie derivatives are obtained by recursive forward-mode
differentiation (each level's value is a differentiable function whose
directional derivative along a field gives the next level), so rows are
exact to machine precision.  Finite differences are never used here.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402

MAX_ORDER_LIMIT = 6     # combinatorial guard on iterated derivatives
_ZERO_ROW_TOL = 1e-250  # structural zeros only


class NumericalFailureError(RuntimeError):
    """Linear-algebra or differentiation failure inside the engine."""


class DifferentiableSystem:
    """Control-affine system with jax-traceable drift, input fields and outputs.

    Parameters
    ----------
    n : state dimension
    m : output dimension
    drift : callable mapping an (n,) jax array to the (n,) drift field f0
    input_fields : sequence of callables, input field i maps x to f_i(x)
    output : callable mapping x to the (m,) output vector
    field_names : names used in row labels, drift first (defaults f0, f1, ...)
    """

    def __init__(self, n, m, drift, input_fields, output, field_names=None,
                 name="", jit=True):
        self.n = int(n)
        self.m = int(m)
        self.drift = drift
        self.input_fields = tuple(input_fields)
        self.output = output
        self.name = name
        # compilation pays off for repeated large analyses; small throwaway
        # systems are faster traced eagerly
        self._use_jit = bool(jit)
        k = len(self.input_fields)
        if field_names is None:
            field_names = ("f0",) + tuple(f"f{i + 1}" for i in range(k))
        if len(field_names) != k + 1:
            raise ValueError("need one field name per field, drift included")
        self.field_names = tuple(field_names)
        self._lie_blocks = {}
        self._jits = {}

    @property
    def k(self) -> int:
        return len(self.input_fields)

    def field(self, i):
        """Field callable by engine index: 0 is the drift, 1..k the inputs."""
        return self.drift if i == 0 else self.input_fields[i - 1]

    def fields_matrix(self, x):
        """Stacked (k+1, n) field values at x (jax-traceable)."""
        return jnp.stack([self.field(i)(x) for i in range(self.k + 1)])

    def dynamics(self, x, u):
        """f0(x) + sum_i u_i f_i(x) (jax-traceable)."""
        out = self.drift(x)
        for i, f in enumerate(self.input_fields):
            out = out + u[i] * f(x)
        return out

    def _jit(self, key, builder):
        if key not in self._jits:
            fn = builder()
            self._jits[key] = jax.jit(fn) if self._use_jit else fn
        return self._jits[key]

    def output_value(self, x) -> np.ndarray:
        fn = self._jit("h", lambda: self.output)
        return np.asarray(fn(jnp.asarray(x)))

    def output_value_batch(self, xs) -> np.ndarray:
        fn = self._jit("h_batch", lambda: jax.vmap(self.output))
        return np.asarray(fn(jnp.asarray(xs)))

    def output_jacobian(self, x) -> np.ndarray:
        fn = self._jit("dh", lambda: jax.jacfwd(self.output))
        return np.asarray(fn(jnp.asarray(x)))

    def drift_jacobian(self, x) -> np.ndarray:
        fn = self._jit("df0", lambda: jax.jacfwd(self.drift))
        return np.asarray(fn(jnp.asarray(x)))

    def dynamics_jacobian(self, x, u) -> np.ndarray:
        fn = self._jit("dfu", lambda: jax.jacfwd(self.dynamics, argnums=0))
        return np.asarray(fn(jnp.asarray(x), jnp.asarray(u)))

    def dynamics_jacobian_batch(self, xs, us) -> np.ndarray:
        fn = self._jit("dfu_batch",
                       lambda: jax.vmap(jax.jacfwd(self.dynamics, argnums=0)))
        return np.asarray(fn(jnp.asarray(xs), jnp.asarray(us)))

    def output_jacobian_batch(self, xs) -> np.ndarray:
        fn = self._jit("dh_batch", lambda: jax.vmap(jax.jacfwd(self.output)))
        return np.asarray(fn(jnp.asarray(xs)))

    def lie_block_fn(self, order: int):
        """Compiled map (x, W) -> (m, n) gradient rows of iterated Lie derivatives.

        W has shape (order, k+1); level l differentiates along the field
        combination sum_j W[l, j] f_j, so one-hot rows select single fields.
        The jitted function is cached per order and reused across calls.
        """
        if order not in self._lie_blocks:
            def value(x, W):
                fn = self.output
                for level in range(order):
                    w = W[level]
                    prev = fn
                    fn = (lambda z, prev=prev, w=w:
                          jax.jvp(prev, (z,), (w @ self.fields_matrix(z),))[1])
                return fn(x)

            block = jax.jacfwd(value, argnums=0)
            self._lie_blocks[order] = jax.jit(block) if self._use_jit else block
        return self._lie_blocks[order]

    def lie_value_fn(self, order: int):
        """Compiled map (x, W) -> (m,) iterated Lie-derivative values."""
        key = ("lie_value", order)
        if key not in self._jits:
            def value(x, W):
                fn = self.output
                for level in range(order):
                    w = W[level]
                    prev = fn
                    fn = (lambda z, prev=prev, w=w:
                          jax.jvp(prev, (z,), (w @ self.fields_matrix(z),))[1])
                return fn(x)

            self._jits[key] = jax.jit(value)
        return self._jits[key]


@dataclass(frozen=True)
class ObservabilityRequest:
    """One instantaneous rank-analysis request."""

    x: np.ndarray
    u: np.ndarray
    max_order: int = 4
    mode: str = "full"
    excitation_threshold: float = 1e-9
    rank_tol: float = 1e-8
    row_normalize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        if self.mode not in ("full", "excited"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 <= self.max_order <= MAX_ORDER_LIMIT:
            raise ValueError(f"max_order must be in [0, {MAX_ORDER_LIMIT}]")


@dataclass
class ObservabilityReport:
    """Stacked Lie-derivative gradients with their singular spectrum."""

    matrix: np.ndarray
    row_labels: list[str]
    dropped_rows: list[str]
    request: ObservabilityRequest
    singular_values: np.ndarray = field(default=None)
    rank: int = field(default=None)
    null_basis: np.ndarray = field(default=None)

    def to_dict(self) -> dict:
        return {
            "system_dim": int(self.matrix.shape[1]),
            "rows": int(self.matrix.shape[0]),
            "rank": int(self.rank),
            "singular_values": [float(s) for s in self.singular_values],
            "null_basis": [[float(v) for v in col] for col in self.null_basis.T],
            "row_labels": list(self.row_labels),
            "dropped_rows": list(self.dropped_rows),
            "mode": self.request.mode,
            "max_order": int(self.request.max_order),
            "rank_tol": float(self.request.rank_tol),
            "row_normalize": bool(self.request.row_normalize),
            "excitation_threshold": float(self.request.excitation_threshold),
        }


def lie_derivative(sys: DifferentiableSystem, seq, output_index: int, x):
    """Value and exact gradient of one iterated Lie derivative.

    ``seq`` lists engine field indices applied innermost-first: the empty
    sequence returns (h_j(x), grad h_j(x)); appending index f differentiates
    the previous level along field f.
    """
    seq = tuple(int(i) for i in seq)
    if len(seq) > MAX_ORDER_LIMIT:
        raise ValueError(f"sequence length {len(seq)} exceeds order limit {MAX_ORDER_LIMIT}")
    for i in seq:
        if not 0 <= i <= sys.k:
            raise IndexError(f"field index {i} out of range for k={sys.k}")
    if not 0 <= output_index < sys.m:
        raise IndexError(f"output index {output_index} out of range for m={sys.m}")

    fn = lambda z: sys.output(z)[output_index]  # noqa: E731
    for idx in seq:
        f = sys.field(idx)
        prev = fn
        fn = lambda z, prev=prev, f=f: jax.jvp(prev, (z,), (f(z),))[1]  # noqa: E731
    xj = jnp.asarray(x, dtype=float)
    value = fn(xj)
    grad = jax.grad(fn)(xj)
    return float(value), np.asarray(grad)


def participating_fields(request: ObservabilityRequest, k: int) -> list[int]:
    """Engine field indices included under the request's row policy."""
    if request.mode == "full":
        return list(range(k + 1))
    excited = [1 + i for i in range(k) if abs(request.u[i]) > request.excitation_threshold]
    return [0] + excited


def enumerate_sequences(request: ObservabilityRequest, k: int) -> list[tuple[int, ...]]:
    """All field-index sequences of length 0..max_order, lexicographic."""
    fields_in = participating_fields(request, k)
    seqs: list[tuple[int, ...]] = []
    for length in range(request.max_order + 1):
        seqs.extend(itertools.product(fields_in, repeat=length))
    return seqs


def _row_label(names, j: int, seq) -> str:
    return f"h{j}/[" + ",".join(names[i] for i in seq) + "]"


def _sequence_blocks(sys: DifferentiableSystem, x, seqs):
    """Raw (m, n) gradient blocks, one per sequence, NaN-checked."""
    xj = jnp.asarray(x, dtype=float)
    blocks = []
    for seq in seqs:
        order = len(seq)
        W = np.zeros((order, sys.k + 1))
        for level, idx in enumerate(seq):
            W[level, idx] = 1.0
        block = np.asarray(sys.lie_block_fn(order)(xj, jnp.asarray(W)))
        if not np.all(np.isfinite(block)):
            bad = np.argwhere(~np.isfinite(block).all(axis=1)).ravel()
            label = _row_label(sys.field_names, int(bad[0]), seq)
            raise NumericalFailureError(f"non-finite gradient in row {label}")
        blocks.append(block)
    return blocks


def _assemble(sys, request, blocks, seqs):
    rows, labels, dropped = [], [], []
    for seq, block in zip(seqs, blocks):
        for j in range(sys.m):
            label = _row_label(sys.field_names, j, seq)
            row = block[j]
            nrm = np.linalg.norm(row)
            if nrm <= _ZERO_ROW_TOL:
                dropped.append(label)
                continue
            rows.append(row / nrm if request.row_normalize else row)
            labels.append(label)
    matrix = np.array(rows) if rows else np.zeros((0, sys.n))
    return matrix, labels, dropped


def build_observability_matrix(sys: DifferentiableSystem,
                               request: ObservabilityRequest) -> ObservabilityReport:
    """Stack gradient rows for every (sequence, scalar output) pair.

    Rows are optionally normalized to unit Euclidean norm; identically-zero
    rows are dropped and recorded in ``dropped_rows``.
    """
    if request.x.shape != (sys.n,):
        raise ValueError(f"evaluation point must have shape ({sys.n},)")
    if request.u.shape != (sys.k,):
        raise ValueError(f"input must have shape ({sys.k},)")
    seqs = enumerate_sequences(request, sys.k)
    blocks = _sequence_blocks(sys, request.x, seqs)
    matrix, labels, dropped = _assemble(sys, request, blocks, seqs)
    return ObservabilityReport(matrix=matrix, row_labels=labels,
                               dropped_rows=dropped, request=request)


def numerical_rank(matrix: np.ndarray, rank_tol: float):
    """(rank, singular values): rank counts sigma_i > rank_tol * sigma_max."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0:
        raise ValueError("empty matrix")
    try:
        sv = np.linalg.svd(matrix, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"SVD failed: {exc}") from exc
    rank = int(np.sum(sv > rank_tol * sv[0]))
    return rank, sv


def null_space(matrix: np.ndarray, rank_tol: float) -> np.ndarray:
    """Orthonormal basis (n, n - rank) of the numerical null space."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0:
        raise ValueError("empty matrix")
    try:
        _, sv, vh = np.linalg.svd(matrix, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"SVD failed: {exc}") from exc
    rank = int(np.sum(sv > rank_tol * sv[0]))
    return vh[rank:].T


def observability_report(sys: DifferentiableSystem,
                         request: ObservabilityRequest) -> ObservabilityReport:
    """Full analysis: matrix, labels, singular spectrum, rank and null basis."""
    report = build_observability_matrix(sys, request)
    try:
        _, sv, vh = np.linalg.svd(report.matrix, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"SVD failed: {exc}") from exc
    rank = int(np.sum(sv > request.rank_tol * sv[0]))
    report.singular_values = sv
    report.rank = rank
    report.null_basis = vh[rank:].T
    return report


def rank_saturation(sys: DifferentiableSystem, request: ObservabilityRequest):
    """Rank as a function of derivative order.

    Grows the matrix one order at a time and stops once the rank survives a
    full additional order unchanged, or max_order is reached.  Returns
    (saturating_order, rank_by_order).
    """
    fields_in = participating_fields(request, sys.k)
    rank_by_order: list[int] = []
    rows = np.zeros((0, sys.n))
    for order in range(request.max_order + 1):
        seqs = list(itertools.product(fields_in, repeat=order))
        blocks = _sequence_blocks(sys, request.x, seqs)
        new_rows, _, _ = _assemble(sys, request, blocks, seqs)
        if new_rows.shape[0]:
            rows = np.vstack([rows, new_rows])
        if rows.shape[0] == 0:
            rank_by_order.append(0)
        else:
            rank_by_order.append(numerical_rank(rows, request.rank_tol)[0])
        if order > 0 and rank_by_order[-1] == rank_by_order[-2]:
            return order - 1, rank_by_order
    return request.max_order, rank_by_order
