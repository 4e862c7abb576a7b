import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gasmix.nlp_solver import (
    CONVERGED,
    ITERATION_CAP,
    NlpProblem,
    SolverOptions,
    greedy_coloring,
    inertia,
    solve,
)

INF = np.inf


class BoundedQuadratic(NlpProblem):
    """min 0.5 |x - a|^2 subject to x >= 0."""

    def __init__(self, a):
        self.a = np.asarray(a, float)
        n = self.a.size
        self.x_lower, self.x_upper = np.zeros(n), np.full(n, INF)
        self.c_lower = self.c_upper = np.zeros(0)

    def objective(self, x):
        return 0.5 * float(np.sum((x - self.a) ** 2))

    def gradient(self, x):
        return x - self.a

    def hessian_sparsity(self):
        return sp.identity(self.a.size, format="csr")


class EqualityQuadratic(NlpProblem):
    """min 0.5 x^T Q x + q^T x subject to A x = b."""

    def __init__(self, Q, q, A, b):
        self.Q, self.q, self.A, self.b = map(np.asarray, (Q, q, A, b))
        n = self.q.size
        self.x_lower, self.x_upper = np.full(n, -INF), np.full(n, INF)
        self.c_lower = self.c_upper = self.b.astype(float)

    def objective(self, x):
        return float(0.5 * x @ self.Q @ x + self.q @ x)

    def gradient(self, x):
        return self.Q @ x + self.q

    def constraints(self, x):
        return self.A @ x

    def jacobian(self, x):
        return sp.csr_matrix(self.A)


class DiskRosenbrock(NlpProblem):
    """Rosenbrock inside the unit disk; the optimum lies on the boundary."""

    x_lower = np.full(2, -INF)
    x_upper = np.full(2, INF)
    c_lower = np.array([-INF])
    c_upper = np.array([1.0])

    def objective(self, x):
        return float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

    def gradient(self, x):
        return np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])

    def constraints(self, x):
        return np.array([x @ x])

    def jacobian(self, x):
        return sp.csr_matrix(2 * x[None, :])


def _kkt_solution(Q, q, A, b):
    n, m = Q.shape[0], A.shape[0]
    K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.r_[-q, b])
    return sol[:n], -sol[n:]


FD = SolverOptions(curvature="finite-difference", tol_kkt=1e-10, tol_feas=1e-10)


def test_bounded_quadratic_projects_onto_orthant():
    a = np.array([1.5, -2.0, 0.3, -0.1])
    res = solve(BoundedQuadratic(a), np.ones(4), FD)
    assert res.status == CONVERGED
    np.testing.assert_allclose(res.x, np.maximum(a, 0.0), atol=1e-8)
    np.testing.assert_allclose(res.multipliers["bound_lower"], np.maximum(-a, 0.0), atol=1e-7)


@pytest.mark.parametrize("curvature", ["quasi-update", "finite-difference"])
def test_equality_quadratic_matches_closed_form(curvature):
    rng = np.random.default_rng(0)
    n, m = 6, 2
    B = rng.normal(size=(n, n))
    Q = B @ B.T + n * np.eye(n)
    q, A, b = rng.normal(size=n), rng.normal(size=(m, n)), rng.normal(size=m)
    x_ref, y_ref = _kkt_solution(Q, q, A, b)
    res = solve(EqualityQuadratic(Q, q, A, b), np.zeros(n),
                SolverOptions(curvature=curvature, tol_kkt=1e-10, tol_feas=1e-10))
    assert res.success
    np.testing.assert_allclose(res.x, x_ref, atol=1e-8)
    assert res.objective_value == pytest.approx(0.5 * x_ref @ Q @ x_ref + q @ x_ref, abs=1e-8)
    np.testing.assert_allclose(np.abs(res.multipliers["equality"]), np.abs(y_ref), atol=1e-6)


def test_start_at_solution_returns_quickly():
    Q, q = np.diag([2.0, 3.0]), np.array([-1.0, 0.5])
    A, b = np.array([[1.0, 1.0]]), np.array([1.0])
    x_ref, _ = _kkt_solution(Q, q, A, b)
    res = solve(EqualityQuadratic(Q, q, A, b), x_ref, FD)
    assert res.success and res.iterations <= 2


def test_constrained_rosenbrock():
    res = solve(DiskRosenbrock(), np.zeros(2), SolverOptions(curvature="finite-difference"))
    assert res.success
    assert res.x @ res.x == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(res.x, [0.7864, 0.6177], atol=1e-3)


def test_repeat_runs_are_bitwise_identical():
    a, b = solve(DiskRosenbrock(), np.zeros(2), FD), solve(DiskRosenbrock(), np.zeros(2), FD)
    assert a.x.tobytes() == b.x.tobytes()
    assert a.iterations == b.iterations
    assert a.multipliers["inequality"].tobytes() == b.multipliers["inequality"].tobytes()


def test_fixed_variables_are_held():
    prob = BoundedQuadratic([2.0, -1.0, 3.0])
    prob.x_lower = np.array([0.0, 0.5, 0.0])
    prob.x_upper = np.array([INF, 0.5, INF])
    res = solve(prob, np.ones(3), FD)
    assert res.success
    np.testing.assert_allclose(res.x, [2.0, 0.5, 3.0], atol=1e-8)
    assert res.x[1] == 0.5
    assert res.multipliers["bound_lower"][1] == pytest.approx(1.5, abs=1e-8)


def test_iteration_cap_reported():
    res = solve(DiskRosenbrock(), np.zeros(2), SolverOptions(max_iter=2))
    assert res.status == ITERATION_CAP and not res.success


@pytest.mark.parametrize("kwargs", [dict(tol_kkt=0.0), dict(max_iter=0), dict(curvature="exact")])
def test_options_validation(kwargs):
    with pytest.raises(ValueError):
        SolverOptions(**kwargs)


def test_wrong_start_shape_rejected():
    with pytest.raises(ValueError):
        solve(BoundedQuadratic([1.0, 2.0]), np.zeros(3))


nondegenerate = st.floats(0.05, 3).flatmap(lambda v: st.sampled_from([v, -v]))


@given(st.lists(nondegenerate, min_size=1, max_size=6))
@settings(max_examples=25, deadline=None)
def test_bounded_quadratic_property(a):
    res = solve(BoundedQuadratic(a), np.full(len(a), 0.7), FD)
    np.testing.assert_allclose(res.x, np.maximum(a, 0.0), atol=1e-8)


def test_degenerate_bound_converges_at_barrier_rate():
    # without strict complementarity x and its multiplier both shrink like sqrt(mu)
    res = solve(BoundedQuadratic([0.0]), np.ones(1), FD)
    assert res.success
    assert 0.0 <= res.x[0] <= 1e-4


# -- linear algebra helpers ------------------------------------------------------------


def test_inertia_counts():
    K = np.diag([3.0, -1.0, 0.0, 2.0])
    assert inertia(K) == (2, 1, 1)
    saddle = np.array([[2.0, 1.0], [1.0, 0.0]])
    assert inertia(sp.csr_matrix(saddle)) == (1, 1, 0)


def test_inertia_matches_eigenvalues(rng):
    B = rng.normal(size=(8, 8))
    K = B + B.T
    ev = np.linalg.eigvalsh(K)
    assert inertia(K) == (int(np.sum(ev > 0)), int(np.sum(ev < 0)), 0)


def test_greedy_coloring_separates_conflicts():
    pattern = sp.csr_matrix(np.array([
        [1, 1, 0, 0, 0],
        [1, 1, 1, 0, 0],
        [0, 1, 1, 1, 0],
        [0, 0, 1, 1, 1],
        [0, 0, 0, 1, 1],
    ]))
    color = greedy_coloring(pattern)
    P = pattern.toarray().astype(bool)
    for i in range(5):
        for j in range(i + 1, 5):
            if np.any(P[:, i] & P[:, j]):
                assert color[i] != color[j]
    assert color.max() + 1 <= 5
    np.testing.assert_array_equal(greedy_coloring(sp.identity(4)), 0)
